//! Length-invariant uncertainty estimation for text generation.
//!
//! The pipeline: parse generation logs ([`records`]), score them with
//! token-probability uncertainty measures ([`measures`]), measure and remove
//! the linear/polynomial dependence of those scores on output length
//! ([`stats`], [`debias`]), and evaluate raw versus detrended scores with
//! prediction–rejection curves ([`prr`]). [`synth`] generates datasets with
//! planted length trends for end-to-end checks.

pub mod debias;
pub mod measures;
pub mod prr;
pub mod records;
pub mod rng;
pub mod rouge;
pub mod stats;
pub mod synth;

pub use debias::{
    apply_line_model, fit_line_model, DebiasError, DebiasMode, DebiasModel, ModelFileError,
};
pub use measures::{compute_scores, Measure, MeasureError, MeasureScore, Strictness};
pub use records::{
    length_of, parse_records, split_dataset, GenerationRecord, QualityDirection, RecordError,
    SampledOutput,
};
pub use stats::{ols_polyfit, wald_p_value, BinnedTrend, FitOn, LengthNorm, StatsError, TrendFit};
pub use prr::{pr_curve, prr, PrrComparison, PrrError, PrrResult};
pub use synth::{generate, SynthConfig, SynthData};

//! Seeded synthetic generation logs with planted length trends.
//!
//! For record `i` the stream draws, in order: the length `len` (uniform over
//! the configured range), the latent difficulty `s ~ N(0, 1)`, the noise
//! `e ~ N(0, 1)`, then for each sample `j` a jitter `z_j ~ N(0, 1)` followed
//! by one uniform per token (plus a replacement-token draw when the token is
//! not kept). With `x = (len - min) / (max - min)` and `d = difficulty_scale`:
//!
//! ```text
//! quality = clamp01(0.5 + quality_slope * x - signal_strength * d * s)
//! msp     = max(0, base_uncertainty + uncertainty_slope * x + d * s + noise_sigma * e)
//! ```
//!
//! The primary output has `len` tokens, each with log-probability `-msp/len`
//! and entropy `1.5 * msp/len`. Sample `j` has `len` tokens with
//! log-probability `-max(0, msp + noise_sigma * z_j)/len`; its token at
//! position `p` is `w{p}` with probability `1/(1 + e^s)` and a random `v{k}`
//! otherwise, so harder records disagree more lexically.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{GenerationRecord, SampledOutput};
use crate::rng::SeededStream;

const ENTROPY_RATIO: f64 = 1.5;
const REPLACEMENT_VOCAB: u64 = 1000;

/// Every field is optional in serialized form; missing fields take the
/// [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Inclusive `[min_tokens, max_tokens]`.
    pub length_range: (usize, usize),
    pub uncertainty_slope: f64,
    pub quality_slope: f64,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    /// Sampled outputs per record; 0 disables samples.
    pub n_samples: usize,
    /// Weight of the latent difficulty in both uncertainty and quality.
    pub difficulty_scale: f64,
    /// Uncertainty at the shortest length for an average-difficulty record.
    pub base_uncertainty: f64,
    pub dataset: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            seed: 7,
            length_range: (4, 64),
            uncertainty_slope: 0.3,
            quality_slope: 0.0,
            signal_strength: 1.0,
            noise_sigma: 0.05,
            n_samples: 4,
            difficulty_scale: 0.1,
            base_uncertainty: 2.0,
            dataset: "synth".into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let (lo, hi) = self.length_range;
        if self.n == 0 {
            return bad("n must be positive");
        }
        if lo < 1 {
            return bad("min_tokens must be at least 1");
        }
        if hi <= lo {
            return bad("max_tokens must exceed min_tokens");
        }
        if self.n_samples == 1 {
            return bad("n_samples must be 0 or at least 2");
        }
        for (name, v) in [
            ("uncertainty_slope", self.uncertainty_slope),
            ("quality_slope", self.quality_slope),
            ("signal_strength", self.signal_strength),
            ("noise_sigma", self.noise_sigma),
            ("difficulty_scale", self.difficulty_scale),
            ("base_uncertainty", self.base_uncertainty),
        ] {
            if !v.is_finite() {
                return Err(SynthError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma must be non-negative");
        }
        if self.difficulty_scale < 0.0 {
            return bad("difficulty_scale must be non-negative");
        }
        Ok(())
    }

    pub fn normalized(&self, length: usize) -> f64 {
        let (lo, hi) = self.length_range;
        (length - lo) as f64 / (hi - lo) as f64
    }
}

/// Ground truth planted for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub id: String,
    pub latent_difficulty: f64,
    pub planted_length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub records: Vec<GenerationRecord>,
    pub truth: Vec<PlantedTruth>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthData, SynthError> {
    config.validate()?;
    let (lo, hi) = config.length_range;
    let d = config.difficulty_scale;
    let mut rng = SeededStream::new(config.seed);
    let width = (config.n.max(2) - 1).to_string().len();
    let meta: BTreeMap<String, String> = [("dataset".to_string(), config.dataset.clone())].into();

    let mut records = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let length = lo + rng.below((hi - lo + 1) as u64) as usize;
        let s = rng.normal();
        let e = rng.normal();
        let x = config.normalized(length);

        let quality =
            (0.5 + config.quality_slope * x - config.signal_strength * d * s).clamp(0.0, 1.0);
        let msp = (config.base_uncertainty
            + config.uncertainty_slope * x
            + d * s
            + config.noise_sigma * e)
            .max(0.0);
        let share = msp / length as f64;

        let keep = 1.0 / (1.0 + s.exp());
        let samples: Vec<SampledOutput> = (0..config.n_samples)
            .map(|_| {
                let target = (msp + config.noise_sigma * rng.normal()).max(0.0);
                let words: Vec<String> = (0..length)
                    .map(|p| {
                        if rng.uniform() < keep {
                            format!("w{p}")
                        } else {
                            format!("v{}", rng.below(REPLACEMENT_VOCAB))
                        }
                    })
                    .collect();
                SampledOutput {
                    text: words.join(" "),
                    token_logprobs: vec![-target / length as f64; length],
                }
            })
            .collect();

        let id = format!("{}-{i:0width$}", config.dataset);
        records.push(GenerationRecord {
            id: id.clone(),
            output_text: (0..length).map(|p| format!("w{p}")).collect::<Vec<_>>().join(" "),
            token_logprobs: vec![-share; length],
            token_entropies: Some(vec![ENTROPY_RATIO * share; length]),
            samples: (!samples.is_empty()).then_some(samples),
            quality: Some(quality),
            meta: Some(meta.clone()),
        });
        truth.push(PlantedTruth {
            id,
            latent_difficulty: s,
            planted_length: length,
        });
    }
    Ok(SynthData { records, truth })
}

pub fn write_truth<'a>(
    mut out: impl Write,
    truth: impl IntoIterator<Item = &'a PlantedTruth>,
) -> std::io::Result<()> {
    for t in truth {
        writeln!(
            out,
            "{}",
            serde_json::to_string(t).expect("truth serialization cannot fail")
        )?;
    }
    Ok(())
}

//! Length-invariant debiasing of uncertainty scores.
//!
//! A trend of the uncertainty score on output length is fitted on training
//! data and subtracted at inference time, leaving the regression residual:
//!
//! ```text
//! unsupervised:   u_deb = u - û(len)
//! quality-aware:  u_deb = u - û(len) - q̂(len)
//! ```
//!
//! where `û` is the polynomial fit of the score on length and `q̂` the fit of
//! the (higher-is-better) quality on length. Length enters every fit through
//! the training set's min–max normalization, stored with the model; lengths
//! outside the training range are extrapolated, never clamped.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::measures::{compute_scores, Measure, MeasureError, MeasureScore, Strictness};
use crate::records::{length_of, GenerationRecord};
use crate::stats::{ols_polyfit, LengthNorm, StatsError, TrendFit};

pub const MODEL_VERSION: u32 = 1;
pub const MAX_DEGREE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DebiasMode {
    #[default]
    Unsupervised,
    QualityAware,
}

impl DebiasMode {
    pub fn tag(self) -> &'static str {
        match self {
            DebiasMode::Unsupervised => "unsupervised",
            DebiasMode::QualityAware => "quality-aware",
        }
    }
}

impl fmt::Display for DebiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DebiasMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unsupervised" => Ok(Self::Unsupervised),
            "quality-aware" => Ok(Self::QualityAware),
            other => Err(format!(
                "unknown mode '{other}' (expected unsupervised or quality-aware)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DebiasError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("{} training record(s) lack a quality score: {}", .ids.len(), preview(.ids))]
    MissingQuality { ids: Vec<String> },
    #[error("no training data")]
    NoTrainingData,
    #[error("degree must be between 1 and {MAX_DEGREE}, got {0}")]
    BadDegree(usize),
}

fn preview(ids: &[String]) -> String {
    const SHOW: usize = 10;
    let mut s = ids.iter().take(SHOW).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOW));
    }
    s
}

/// A polynomial trend in normalized length.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthTrend {
    pub norm: LengthNorm,
    pub fit: TrendFit,
}

impl LengthTrend {
    pub fn predict(&self, length: usize) -> f64 {
        self.fit.predict(self.norm.apply(length))
    }

    fn same_basis(&self, other: &LengthTrend) -> bool {
        self.norm == other.norm && self.fit.degree == other.fit.degree
    }
}

/// Length trend of one uncertainty measure (the `û` above).
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTrend {
    pub measure: Measure,
    pub trend: LengthTrend,
}

fn check_degree(degree: usize) -> Result<(), DebiasError> {
    if (1..=MAX_DEGREE).contains(&degree) {
        Ok(())
    } else {
        Err(DebiasError::BadDegree(degree))
    }
}

fn fit_in_basis(
    lengths: &[usize],
    values: &[f64],
    norm: LengthNorm,
    degree: usize,
) -> Result<LengthTrend, DebiasError> {
    let xs: Vec<f64> = lengths.iter().map(|&l| norm.apply(l)).collect();
    let fit = ols_polyfit(&xs, values, degree)?;
    Ok(LengthTrend { norm, fit })
}

fn single_measure(scores: &[MeasureScore]) -> Result<Measure, DebiasError> {
    let first = scores.first().ok_or(DebiasError::NoTrainingData)?.measure;
    if let Some(other) = scores.iter().find(|s| s.measure != first) {
        return Err(DebiasError::ModelMismatch(format!(
            "training scores mix measures {first} and {}",
            other.measure
        )));
    }
    Ok(first)
}

/// Fits the uncertainty–length trend on training scores of a single measure.
pub fn fit_uncertainty_trend(
    train: &[MeasureScore],
    degree: usize,
) -> Result<UncertaintyTrend, DebiasError> {
    check_degree(degree)?;
    let measure = single_measure(train)?;
    let lengths: Vec<usize> = train.iter().map(|s| s.length).collect();
    let values: Vec<f64> = train.iter().map(|s| s.value).collect();
    let norm = LengthNorm::from_lengths(lengths.iter().copied())?;
    Ok(UncertaintyTrend {
        measure,
        trend: fit_in_basis(&lengths, &values, norm, degree)?,
    })
}

/// `u - û(len)`.
pub fn debias_unsupervised(
    score: &MeasureScore,
    fit: &UncertaintyTrend,
) -> Result<f64, DebiasError> {
    if score.measure != fit.measure {
        return Err(DebiasError::ModelMismatch(format!(
            "score is {} but the trend was fitted on {}",
            score.measure, fit.measure
        )));
    }
    Ok(score.value - fit.trend.predict(score.length))
}

fn qualities(train: &[GenerationRecord]) -> Result<Vec<f64>, DebiasError> {
    let missing: Vec<String> = train
        .iter()
        .filter(|r| r.quality.is_none())
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(DebiasError::MissingQuality { ids: missing });
    }
    Ok(train.iter().filter_map(|r| r.quality).collect())
}

/// Fits the quality–length trend (the `q̂` above) on training records.
pub fn fit_quality_trend(
    train: &[GenerationRecord],
    degree: usize,
) -> Result<LengthTrend, DebiasError> {
    check_degree(degree)?;
    if train.is_empty() {
        return Err(DebiasError::NoTrainingData);
    }
    let q = qualities(train)?;
    let lengths: Vec<usize> = train.iter().map(length_of).collect();
    let norm = LengthNorm::from_lengths(lengths.iter().copied())?;
    fit_in_basis(&lengths, &q, norm, degree)
}

/// `u - û(len) - q̂(len)`.
pub fn debias_quality_aware(
    score: &MeasureScore,
    u_fit: &UncertaintyTrend,
    q_fit: &LengthTrend,
) -> Result<f64, DebiasError> {
    if !u_fit.trend.same_basis(q_fit) {
        return Err(DebiasError::ModelMismatch(format!(
            "uncertainty trend (degree {}, lengths {}..={}) and quality trend (degree {}, lengths {}..={}) use different bases",
            u_fit.trend.fit.degree,
            u_fit.trend.norm.min,
            u_fit.trend.norm.max,
            q_fit.fit.degree,
            q_fit.norm.min,
            q_fit.norm.max,
        )));
    }
    Ok(debias_unsupervised(score, u_fit)? - q_fit.predict(score.length))
}

// ---------------------------------------------------------------------------
// Serializable model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 over the training ids, each followed by a newline.
    pub train_ids_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
}

pub fn hash_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasModel {
    pub version: u32,
    pub measure: Measure,
    pub mode: DebiasMode,
    pub degree: usize,
    pub length_norm: LengthNorm,
    pub uncertainty_fit: TrendFit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_fit: Option<TrendFit>,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("model file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model version {found} (this build reads version {MODEL_VERSION})")]
    UnsupportedVersion { found: String },
    #[error("invalid model: {0}")]
    Invalid(String),
}

impl DebiasModel {
    pub fn uncertainty_trend(&self) -> UncertaintyTrend {
        UncertaintyTrend {
            measure: self.measure,
            trend: LengthTrend {
                norm: self.length_norm,
                fit: self.uncertainty_fit.clone(),
            },
        }
    }

    pub fn quality_trend(&self) -> Option<LengthTrend> {
        self.quality_fit.as_ref().map(|fit| LengthTrend {
            norm: self.length_norm,
            fit: fit.clone(),
        })
    }

    /// Checks the structural invariants a hand-edited or foreign model file
    /// could break.
    pub fn validate(&self) -> Result<(), ModelFileError> {
        let bad = |m: String| Err(ModelFileError::Invalid(m));
        if self.version != MODEL_VERSION {
            return Err(ModelFileError::UnsupportedVersion {
                found: self.version.to_string(),
            });
        }
        if !(1..=MAX_DEGREE).contains(&self.degree) {
            return bad(format!("degree {} outside 1..={MAX_DEGREE}", self.degree));
        }
        if self.length_norm.min >= self.length_norm.max {
            return bad("length_norm.min must be below length_norm.max".into());
        }
        match (self.mode, &self.quality_fit) {
            (DebiasMode::QualityAware, None) => {
                return bad("quality-aware model has no quality_fit".into())
            }
            (DebiasMode::Unsupervised, Some(_)) => {
                return bad("unsupervised model carries a quality_fit".into())
            }
            _ => {}
        }
        for (name, fit) in std::iter::once(("uncertainty_fit", &self.uncertainty_fit))
            .chain(self.quality_fit.iter().map(|f| ("quality_fit", f)))
        {
            if fit.degree != self.degree {
                return bad(format!(
                    "{name}.degree {} differs from model degree {}",
                    fit.degree, self.degree
                ));
            }
            if fit.coefficients.len() != fit.degree + 1 {
                return bad(format!(
                    "{name} has {} coefficients, expected {}",
                    fit.coefficients.len(),
                    fit.degree + 1
                ));
            }
            if fit.coefficients.iter().any(|c| !c.is_finite()) {
                return bad(format!("{name} has non-finite coefficients"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("version") {
            Some(v) if v.as_u64() == Some(MODEL_VERSION as u64) => {}
            Some(v) => {
                return Err(ModelFileError::UnsupportedVersion {
                    found: v.to_string(),
                })
            }
            None => return Err(ModelFileError::Invalid("missing 'version'".into())),
        }
        let model: DebiasModel = serde_json::from_value(raw)?;
        model.validate()?;
        Ok(model)
    }
}

/// Fits a complete model on training records. Both trends share the
/// training set's length normalization.
pub fn fit_line_model(
    train: &[GenerationRecord],
    measure: Measure,
    mode: DebiasMode,
    degree: usize,
    seed: u64,
) -> Result<DebiasModel, DebiasError> {
    check_degree(degree)?;
    if train.is_empty() {
        return Err(DebiasError::NoTrainingData);
    }
    let lengths: Vec<usize> = train.iter().map(length_of).collect();
    let norm = LengthNorm::from_lengths(lengths.iter().copied())?;

    // Check quality before the (possibly expensive) scoring pass.
    let quality = match mode {
        DebiasMode::QualityAware => Some(qualities(train)?),
        DebiasMode::Unsupervised => None,
    };

    let scores = compute_scores(train, &[measure], Strictness::Strict)?.scores;
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let uncertainty = fit_in_basis(&lengths, &values, norm, degree)?;
    let quality_fit = match quality {
        Some(q) => Some(fit_in_basis(&lengths, &q, norm, degree)?.fit),
        None => None,
    };

    Ok(DebiasModel {
        version: MODEL_VERSION,
        measure,
        mode,
        degree,
        length_norm: norm,
        uncertainty_fit: uncertainty.fit,
        quality_fit,
        provenance: Provenance {
            train_ids_hash: hash_ids(train.iter().map(|r| r.id.as_str())),
            seed,
            train_fraction: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppliedScores {
    /// Debiased scores, in input order, tagged with the model's measure.
    pub scores: Vec<MeasureScore>,
    /// How many inputs had a length outside the training range.
    pub extrapolated: usize,
}

pub fn apply_line_model(
    model: &DebiasModel,
    scores: &[MeasureScore],
) -> Result<AppliedScores, DebiasError> {
    let mismatched: BTreeSet<Measure> = scores
        .iter()
        .map(|s| s.measure)
        .filter(|&m| m != model.measure)
        .collect();
    if !mismatched.is_empty() {
        return Err(DebiasError::ModelMismatch(format!(
            "model debiases {} but scores include {}",
            model.measure,
            mismatched
                .iter()
                .map(|m| m.tag())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let u = model.uncertainty_trend();
    let q = model.quality_trend();
    let out: Vec<MeasureScore> = scores
        .par_iter()
        .map(|s| {
            let value = match &q {
                Some(q) => debias_quality_aware(s, &u, q),
                None => debias_unsupervised(s, &u),
            }?;
            Ok(MeasureScore {
                value,
                ..s.clone()
            })
        })
        .collect::<Result<_, DebiasError>>()?;
    let extrapolated = scores
        .iter()
        .filter(|s| !model.length_norm.contains(s.length))
        .count();
    Ok(AppliedScores {
        scores: out,
        extrapolated,
    })
}

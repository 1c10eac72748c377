//! Generation-log data model, JSONL ingestion and train/test splitting.
//!
//! One line of input is one model output:
//!
//! ```json
//! {"id": "a", "output": {"text": "...", "token_logprobs": [-0.1, -2.3],
//!  "token_entropies": [0.4, 1.9]}, "samples": [{"text": "...", "token_logprobs": [-0.5]}],
//!  "quality": 0.8, "meta": {"dataset": "wmt14-cs-en"}}
//! ```
//!
//! `token_entropies`, `samples`, `quality` and `meta` are optional.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededStream;

/// Positive log-probabilities up to this value are treated as rounding noise
/// and clamped to zero.
pub const LOGPROB_CLAMP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SampledOutput {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

impl SampledOutput {
    pub fn len(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_logprobs.is_empty()
    }

    pub fn log_prob(&self) -> f64 {
        self.token_logprobs.iter().fold(0.0, |acc, lp| acc + lp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub id: String,
    pub output_text: String,
    /// Natural-log probability of each chosen token of the primary output.
    pub token_logprobs: Vec<f64>,
    /// Per-step entropy of the full predictive distribution, in nats.
    pub token_entropies: Option<Vec<f64>>,
    pub samples: Option<Vec<SampledOutput>>,
    /// Quality of the primary output, higher is better.
    pub quality: Option<f64>,
    pub meta: Option<BTreeMap<String, String>>,
}

impl GenerationRecord {
    /// Minimal record with only the primary output filled in.
    pub fn new(id: impl Into<String>, text: impl Into<String>, token_logprobs: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            output_text: text.into(),
            token_logprobs,
            token_entropies: None,
            samples: None,
            quality: None,
            meta: None,
        }
    }
}

/// Generation length in tokens.
pub fn length_of(record: &GenerationRecord) -> usize {
    record.token_logprobs.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityDirection {
    #[default]
    HigherBetter,
    LowerBetter,
}

impl QualityDirection {
    /// Maps a raw quality value onto the internal higher-is-better scale.
    pub fn normalize(self, q: f64) -> f64 {
        match self {
            QualityDirection::HigherBetter => q,
            QualityDirection::LowerBetter => -q,
        }
    }
}

impl FromStr for QualityDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "higher-better" => Ok(Self::HigherBetter),
            "lower-better" => Ok(Self::LowerBetter),
            other => Err(format!(
                "unknown quality direction '{other}' (expected higher-better or lower-better)"
            )),
        }
    }
}

impl fmt::Display for QualityDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HigherBetter => "higher-better",
            Self::LowerBetter => "lower-better",
        })
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    EmptyId,
    EmptyLogprobs,
    PositiveLogprob(f64),
    NonFinite(f64),
    EntropyLengthMismatch { expected: usize, found: usize },
    NegativeEntropy(f64),
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyId => f.write_str("empty id"),
            Self::EmptyLogprobs => f.write_str("empty token_logprobs"),
            Self::PositiveLogprob(v) => write!(f, "positive log-probability {v}"),
            Self::NonFinite(v) => write!(f, "non-finite value {v}"),
            Self::EntropyLengthMismatch { expected, found } => write!(
                f,
                "entropy length mismatch (expected {expected}, found {found})"
            ),
            Self::NegativeEntropy(v) => write!(f, "negative entropy {v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// JSON path of the offending field, e.g. `output.token_logprobs[3]`.
    pub path: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.kind)
    }
}

fn check_logprobs(values: &mut [f64], path: &str, out: &mut Vec<Violation>) {
    if values.is_empty() {
        out.push(Violation {
            path: path.to_string(),
            kind: ViolationKind::EmptyLogprobs,
        });
        return;
    }
    for (i, v) in values.iter_mut().enumerate() {
        if !v.is_finite() {
            out.push(Violation {
                path: format!("{path}[{i}]"),
                kind: ViolationKind::NonFinite(*v),
            });
        } else if *v > LOGPROB_CLAMP_TOLERANCE {
            out.push(Violation {
                path: format!("{path}[{i}]"),
                kind: ViolationKind::PositiveLogprob(*v),
            });
        } else if *v > 0.0 {
            *v = 0.0;
        }
    }
}

/// Checks every record invariant, clamping near-zero positive log-probabilities
/// in place. Returns all violations found, not just the first.
pub fn validate_record(record: &mut GenerationRecord) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if record.id.is_empty() {
        out.push(Violation {
            path: "id".into(),
            kind: ViolationKind::EmptyId,
        });
    }
    check_logprobs(&mut record.token_logprobs, "output.token_logprobs", &mut out);

    if let Some(entropies) = &record.token_entropies {
        if entropies.len() != record.token_logprobs.len() {
            out.push(Violation {
                path: "output.token_entropies".into(),
                kind: ViolationKind::EntropyLengthMismatch {
                    expected: record.token_logprobs.len(),
                    found: entropies.len(),
                },
            });
        }
        for (i, &h) in entropies.iter().enumerate() {
            let path = format!("output.token_entropies[{i}]");
            if !h.is_finite() {
                out.push(Violation {
                    path,
                    kind: ViolationKind::NonFinite(h),
                });
            } else if h < 0.0 {
                out.push(Violation {
                    path,
                    kind: ViolationKind::NegativeEntropy(h),
                });
            }
        }
    }

    if let Some(samples) = &mut record.samples {
        for (i, sample) in samples.iter_mut().enumerate() {
            check_logprobs(
                &mut sample.token_logprobs,
                &format!("samples[{i}].token_logprobs"),
                &mut out,
            );
        }
    }

    if let Some(q) = record.quality {
        if !q.is_finite() {
            out.push(Violation {
                path: "quality".into(),
                kind: ViolationKind::NonFinite(q),
            });
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

// ---------------------------------------------------------------------------
// JSONL wire format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireOutput {
    text: String,
    token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_entropies: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSample {
    text: String,
    token_logprobs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    id: String,
    output: WireOutput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<WireSample>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<BTreeMap<String, String>>,
}

impl From<WireRecord> for GenerationRecord {
    fn from(w: WireRecord) -> Self {
        Self {
            id: w.id,
            output_text: w.output.text,
            token_logprobs: w.output.token_logprobs,
            token_entropies: w.output.token_entropies,
            samples: w.samples.map(|ss| {
                ss.into_iter()
                    .map(|s| SampledOutput {
                        text: s.text,
                        token_logprobs: s.token_logprobs,
                    })
                    .collect()
            }),
            quality: w.quality,
            meta: w.meta,
        }
    }
}

impl From<&GenerationRecord> for WireRecord {
    fn from(r: &GenerationRecord) -> Self {
        Self {
            id: r.id.clone(),
            output: WireOutput {
                text: r.output_text.clone(),
                token_logprobs: r.token_logprobs.clone(),
                token_entropies: r.token_entropies.clone(),
            },
            samples: r.samples.as_ref().map(|ss| {
                ss.iter()
                    .map(|s| WireSample {
                        text: s.text.clone(),
                        token_logprobs: s.token_logprobs.clone(),
                    })
                    .collect()
            }),
            quality: r.quality,
            meta: r.meta.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("failed reading input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: schema violation at '{path}': {message}")]
    Schema {
        line: usize,
        path: String,
        message: String,
    },
    #[error("line {line}: record '{id}' is invalid: {}", join_violations(.violations))]
    Invalid {
        line: usize,
        id: String,
        violations: Vec<Violation>,
    },
    #[error("line {line}: duplicate id '{id}' (first seen on line {first_line})")]
    DuplicateId {
        line: usize,
        id: String,
        first_line: usize,
    },
}

fn join_violations(vs: &[Violation]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl RecordError {
    /// Line number the error refers to, if it is tied to one.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Io(_) => None,
            Self::Json { line, .. }
            | Self::Schema { line, .. }
            | Self::Invalid { line, .. }
            | Self::DuplicateId { line, .. } => Some(*line),
        }
    }
}

fn parse_line(
    text: &str,
    line: usize,
    direction: QualityDirection,
) -> Result<GenerationRecord, RecordError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let wire: WireRecord = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_data() {
            RecordError::Schema {
                line,
                path,
                message: inner.to_string(),
            }
        } else {
            RecordError::Json {
                line,
                message: inner.to_string(),
            }
        }
    })?;
    de.end().map_err(|e| RecordError::Json {
        line,
        message: e.to_string(),
    })?;

    let mut record = GenerationRecord::from(wire);
    record.quality = record.quality.map(|q| direction.normalize(q));
    validate_record(&mut record).map_err(|violations| RecordError::Invalid {
        line,
        id: record.id.clone(),
        violations,
    })?;
    Ok(record)
}

fn parse_impl(
    input: impl BufRead,
    direction: QualityDirection,
    mut on_bad: impl FnMut(RecordError) -> Result<(), RecordError>,
) -> Result<Vec<GenerationRecord>, RecordError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, line_no, direction) {
            Ok(record) => {
                if let Some(&first_line) = seen.get(&record.id) {
                    on_bad(RecordError::DuplicateId {
                        line: line_no,
                        id: record.id,
                        first_line,
                    })?;
                    continue;
                }
                seen.insert(record.id.clone(), line_no);
                records.push(record);
            }
            Err(e) => on_bad(e)?,
        }
    }
    Ok(records)
}

/// Parses a JSONL stream, failing on the first malformed, invalid or
/// duplicate record. Blank lines are ignored.
pub fn parse_records(
    input: impl BufRead,
    direction: QualityDirection,
) -> Result<Vec<GenerationRecord>, RecordError> {
    parse_impl(input, direction, Err)
}

/// Like [`parse_records`] but skips bad lines, returning them alongside the
/// good records. I/O failures are still fatal.
pub fn parse_records_lenient(
    input: impl BufRead,
    direction: QualityDirection,
) -> Result<(Vec<GenerationRecord>, Vec<RecordError>), RecordError> {
    let mut skipped = Vec::new();
    let records = parse_impl(input, direction, |e| match e {
        RecordError::Io(_) => Err(e),
        other => {
            skipped.push(other);
            Ok(())
        }
    })?;
    Ok((records, skipped))
}

/// Serializes one record as a single JSON line (no trailing newline).
pub fn record_to_json(record: &GenerationRecord) -> String {
    serde_json::to_string(&WireRecord::from(record)).expect("record serialization cannot fail")
}

pub fn write_records<'a>(
    mut out: impl Write,
    records: impl IntoIterator<Item = &'a GenerationRecord>,
) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", record_to_json(r))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("split of {n} records with train fraction {fraction} leaves one side empty")]
    Degenerate { n: usize, fraction: f64 },
}

/// Index form of [`split_dataset`]: `(train, test)` indices, each in
/// ascending order.
pub fn split_indices(
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), SplitError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SplitError::BadFraction(train_fraction));
    }
    // The epsilon keeps products like 0.1 * 30 from rounding up a whole record.
    let n_train = (train_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    if n_train == 0 || n_train >= n {
        return Err(SplitError::Degenerate {
            n,
            fraction: train_fraction,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededStream::new(seed).shuffle(&mut order);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seeded shuffle split. The first `ceil(train_fraction * N)` shuffled
/// records go to train. Both halves keep the input's relative order.
pub fn split_dataset<T: Clone>(
    records: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), SplitError> {
    let (train, test) = split_indices(records.len(), train_fraction, seed)?;
    Ok((
        train.into_iter().map(|i| records[i].clone()).collect(),
        test.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

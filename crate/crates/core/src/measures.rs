//! Token-probability uncertainty measures. Higher values mean more uncertain.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{length_of, GenerationRecord};
use crate::rouge;

/// Uncertainty measure tag. Declaration order is the canonical output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Maximum sequence probability: `-log P(y|x)`.
    Msp,
    /// Perplexity: `-log P(y|x) / L`.
    Ppl,
    /// Mean token entropy.
    Mte,
    /// Monte-Carlo sequence entropy over sampled outputs.
    Mcse,
    /// Length-normalized Monte-Carlo sequence entropy.
    Mcnse,
    /// One minus mean pairwise ROUGE-L between sampled outputs.
    Lsrl,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::Msp,
        Measure::Ppl,
        Measure::Mte,
        Measure::Mcse,
        Measure::Mcnse,
        Measure::Lsrl,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Measure::Msp => "msp",
            Measure::Ppl => "ppl",
            Measure::Mte => "mte",
            Measure::Mcse => "mcse",
            Measure::Mcnse => "mcnse",
            Measure::Lsrl => "lsrl",
        }
    }

    pub fn compute(self, record: &GenerationRecord) -> Result<f64, MeasureError> {
        match self {
            Measure::Msp => Ok(msp(record)),
            Measure::Ppl => Ok(ppl(record)),
            Measure::Mte => mte(record),
            Measure::Mcse => mcse(record),
            Measure::Mcnse => mcnse(record),
            Measure::Lsrl => lsrl(record),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Measure {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Measure::ALL
            .into_iter()
            .find(|m| m.tag() == lower)
            .ok_or_else(|| MeasureError::UnknownMeasure(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureScore {
    pub record_id: String,
    pub measure: Measure,
    /// Length in tokens of the record's primary output.
    pub length: usize,
    pub value: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("record '{id}' has no token_entropies (required by mte)")]
    MissingEntropies { id: String },
    #[error("record '{id}' has no sampled outputs (required by {measure})")]
    MissingSamples { id: String, measure: Measure },
    #[error("record '{id}' has {found} sampled outputs, lsrl needs at least 2")]
    InsufficientSamples { id: String, found: usize },
    #[error("unknown measure '{0}' (expected one of msp, ppl, mte, mcse, mcnse, lsrl)")]
    UnknownMeasure(String),
}

fn neg_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc - v)
}

pub fn msp(record: &GenerationRecord) -> f64 {
    neg_sum(&record.token_logprobs)
}

pub fn ppl(record: &GenerationRecord) -> f64 {
    msp(record) / length_of(record) as f64
}

pub fn mte(record: &GenerationRecord) -> Result<f64, MeasureError> {
    let h = record
        .token_entropies
        .as_ref()
        .ok_or_else(|| MeasureError::MissingEntropies {
            id: record.id.clone(),
        })?;
    Ok(h.iter().fold(0.0, |acc, v| acc + v) / h.len() as f64)
}

fn samples_of(
    record: &GenerationRecord,
    measure: Measure,
) -> Result<&[crate::records::SampledOutput], MeasureError> {
    match record.samples.as_deref() {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(MeasureError::MissingSamples {
            id: record.id.clone(),
            measure,
        }),
    }
}

pub fn mcse(record: &GenerationRecord) -> Result<f64, MeasureError> {
    let samples = samples_of(record, Measure::Mcse)?;
    let total = samples.iter().fold(0.0, |acc, s| acc + neg_sum(&s.token_logprobs));
    Ok(total / samples.len() as f64)
}

pub fn mcnse(record: &GenerationRecord) -> Result<f64, MeasureError> {
    let samples = samples_of(record, Measure::Mcnse)?;
    let total = samples
        .iter()
        .fold(0.0, |acc, s| acc + neg_sum(&s.token_logprobs) / s.len() as f64);
    Ok(total / samples.len() as f64)
}

pub fn lsrl(record: &GenerationRecord) -> Result<f64, MeasureError> {
    let samples = samples_of(record, Measure::Lsrl)?;
    if samples.len() < 2 {
        return Err(MeasureError::InsufficientSamples {
            id: record.id.clone(),
            found: samples.len(),
        });
    }
    let tokens: Vec<Vec<String>> = samples.iter().map(|s| rouge::tokenize(&s.text)).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..tokens.len() {
        for j in i + 1..tokens.len() {
            sum += rouge::rouge_l(&tokens[i], &tokens[j]);
            pairs += 1;
        }
    }
    Ok((1.0 - sum / pairs as f64).clamp(0.0, 1.0))
}

/// What to do when a measure cannot be computed for a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Fail on the first record that lacks a required field.
    #[default]
    Strict,
    /// Log and drop the failing (record, measure) pair.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub scores: Vec<MeasureScore>,
    pub skipped: Vec<MeasureError>,
}

/// Scores every record under every requested measure. Output is ordered by
/// record, then by canonical measure order, independent of thread count.
pub fn compute_scores(
    records: &[GenerationRecord],
    measures: &[Measure],
    strictness: Strictness,
) -> Result<ScoreBatch, MeasureError> {
    let mut wanted = measures.to_vec();
    wanted.sort_unstable();
    wanted.dedup();

    let per_record: Vec<Vec<Result<MeasureScore, MeasureError>>> = records
        .par_iter()
        .map(|r| {
            let length = length_of(r);
            wanted
                .iter()
                .map(|&m| {
                    m.compute(r).map(|value| MeasureScore {
                        record_id: r.id.clone(),
                        measure: m,
                        length,
                        value,
                    })
                })
                .collect()
        })
        .collect();

    let mut batch = ScoreBatch {
        scores: Vec::with_capacity(records.len() * wanted.len()),
        skipped: Vec::new(),
    };
    for result in per_record.into_iter().flatten() {
        match (result, strictness) {
            (Ok(s), _) => batch.scores.push(s),
            (Err(e), Strictness::Strict) => return Err(e),
            (Err(e), Strictness::Skip) => {
                log::warn!("skipping: {e}");
                batch.skipped.push(e);
            }
        }
    }
    Ok(batch)
}

// ---------------------------------------------------------------------------
// Score CSV: `record_id,measure,length,value`
// ---------------------------------------------------------------------------

pub const SCORE_CSV_HEADER: &str = "record_id,measure,length,value";

/// 17 significant digits in scientific notation; round-trips any f64.
pub fn format_sig17(v: f64) -> String {
    if v == 0.0 {
        // Avoid printing a negative zero.
        return format!("{:.16e}", 0.0f64);
    }
    format!("{v:.16e}")
}

#[derive(Debug, Error)]
pub enum ScoreCsvError {
    #[error("failed reading scores: {0}")]
    Io(#[from] std::io::Error),
    #[error("scores line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn quote_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_scores_csv<'a>(
    mut out: impl Write,
    scores: impl IntoIterator<Item = &'a MeasureScore>,
) -> std::io::Result<()> {
    writeln!(out, "{SCORE_CSV_HEADER}")?;
    for s in scores {
        writeln!(
            out,
            "{},{},{},{}",
            quote_field(&s.record_id),
            s.measure,
            s.length,
            format_sig17(s.value)
        )?;
    }
    Ok(())
}

/// Splits one CSV line, honouring double-quoted fields.
fn split_csv_line(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut in_quotes = false;
    while let Some(c) = chars.next() {
        match (c, in_quotes) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', true) => in_quotes = false,
            ('"', false) if cur.is_empty() => in_quotes = true,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    if in_quotes {
        return Err("unterminated quoted field".into());
    }
    fields.push(cur);
    Ok(fields)
}

pub fn read_scores_csv(input: impl BufRead) -> Result<Vec<MeasureScore>, ScoreCsvError> {
    let mut out = Vec::new();
    let mut lines = input.lines().enumerate();
    match lines.next() {
        None => return Ok(out),
        Some((_, header)) => {
            let header = header?;
            if header.trim_end() != SCORE_CSV_HEADER {
                return Err(ScoreCsvError::Malformed {
                    line: 1,
                    message: format!("expected header '{SCORE_CSV_HEADER}', found '{header}'"),
                });
            }
        }
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ScoreCsvError::Malformed {
            line: line_no,
            message,
        };
        let fields = split_csv_line(&line).map_err(bad)?;
        let [id, measure, length, value]: [String; 4] = fields
            .try_into()
            .map_err(|f: Vec<String>| bad(format!("expected 4 fields, found {}", f.len())))?;
        let measure: Measure = measure.parse().map_err(|e: MeasureError| bad(e.to_string()))?;
        let length: usize = length
            .parse()
            .map_err(|e| bad(format!("bad length '{length}': {e}")))?;
        let value: f64 = value
            .parse()
            .map_err(|e| bad(format!("bad value '{value}': {e}")))?;
        if !value.is_finite() {
            return Err(bad(format!("non-finite value {value}")));
        }
        out.push(MeasureScore {
            record_id: id,
            measure,
            length,
            value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::SampledOutput;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn rec(lps: Vec<f64>) -> GenerationRecord {
        GenerationRecord::new("r", "", lps)
    }

    fn with_samples(samples: Vec<(&str, Vec<f64>)>) -> GenerationRecord {
        let mut r = rec(vec![-1.0]);
        r.samples = Some(
            samples
                .into_iter()
                .map(|(t, lps)| SampledOutput {
                    text: t.to_string(),
                    token_logprobs: lps,
                })
                .collect(),
        );
        r
    }

    #[test]
    fn msp_examples() {
        assert_eq!(msp(&rec(vec![-0.5, -1.5])), 2.0);
        let zero = msp(&rec(vec![0.0]));
        assert_eq!(zero, 0.0);
        assert!(zero.is_sign_positive());
        assert!((msp(&rec(vec![-0.1; 10])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ppl_examples() {
        assert_eq!(ppl(&rec(vec![-0.5, -1.5])), 1.0);
        for k in [1, 2, 7, 100] {
            assert!((ppl(&rec(vec![-LN_2; k])) - LN_2).abs() < 1e-15);
        }
        assert_eq!(ppl(&rec(vec![0.0, 0.0])), 0.0);
    }

    #[test]
    fn mte_examples() {
        let mut r = rec(vec![-1.0, -1.0]);
        r.token_entropies = Some(vec![LN_2, 0.0]);
        assert!((mte(&r).unwrap() - 0.346574).abs() < 1e-6);
        r.token_entropies = Some(vec![LN_2, LN_2]);
        assert_eq!(mte(&r).unwrap(), LN_2);
        r.token_entropies = None;
        assert_eq!(
            mte(&r),
            Err(MeasureError::MissingEntropies { id: "r".into() })
        );
    }

    #[test]
    fn mcse_examples() {
        assert_eq!(mcse(&with_samples(vec![("a", vec![-1.0, -1.0])])).unwrap(), 2.0);
        assert_eq!(
            mcse(&with_samples(vec![("a", vec![-1.0]), ("b", vec![-1.5, -1.5])])).unwrap(),
            2.0
        );
        assert!(matches!(
            mcse(&with_samples(vec![])),
            Err(MeasureError::MissingSamples { .. })
        ));
        assert!(mcse(&rec(vec![-1.0])).is_err());
    }

    #[test]
    fn mcnse_examples() {
        let unit = with_samples(vec![("a", vec![-0.3]), ("b", vec![-2.5])]);
        assert_eq!(mcnse(&unit).unwrap(), mcse(&unit).unwrap());
        let mixed = with_samples(vec![("a", vec![-2.0]), ("b", vec![-2.0, -2.0])]);
        assert_eq!(mcnse(&mixed).unwrap(), 2.0);
        assert_eq!(mcnse(&with_samples(vec![("a", vec![-3.0; 3])])).unwrap(), 3.0);
    }

    #[test]
    fn lsrl_examples() {
        let same = with_samples(vec![("x y z", vec![-1.0]); 3]);
        assert_eq!(lsrl(&same).unwrap(), 0.0);
        let disjoint = with_samples(vec![("a b", vec![-1.0]), ("c d", vec![-1.0])]);
        assert_eq!(lsrl(&disjoint).unwrap(), 1.0);
        let cat = with_samples(vec![("the cat sat", vec![-1.0]), ("the cat ran", vec![-1.0])]);
        assert!((lsrl(&cat).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            lsrl(&with_samples(vec![("a", vec![-1.0])])),
            Err(MeasureError::InsufficientSamples {
                id: "r".into(),
                found: 1
            })
        );
    }

    #[test]
    fn compute_scores_examples() {
        let recs = vec![rec(vec![-1.0]), GenerationRecord::new("s", "", vec![-2.0, -1.0])];
        let batch =
            compute_scores(&recs, &[Measure::Ppl, Measure::Msp], Strictness::Strict).unwrap();
        assert_eq!(batch.scores.len(), 4);
        let order: Vec<_> = batch
            .scores
            .iter()
            .map(|s| (s.record_id.as_str(), s.measure))
            .collect();
        assert_eq!(
            order,
            vec![
                ("r", Measure::Msp),
                ("r", Measure::Ppl),
                ("s", Measure::Msp),
                ("s", Measure::Ppl)
            ]
        );
        assert_eq!(batch.scores[3].length, 2);

        let err = compute_scores(&recs, &[Measure::Lsrl], Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("'r'"), "{err}");
        let skipped = compute_scores(&recs, &[Measure::Lsrl, Measure::Msp], Strictness::Skip).unwrap();
        assert_eq!(skipped.scores.len(), 2);
        assert_eq!(skipped.skipped.len(), 2);

        assert!(compute_scores(&recs, &[], Strictness::Strict).unwrap().scores.is_empty());
    }

    #[test]
    fn measure_tags_parse() {
        for m in Measure::ALL {
            assert_eq!(m.tag().parse::<Measure>().unwrap(), m);
        }
        assert_eq!("MSP".parse::<Measure>().unwrap(), Measure::Msp);
        assert!("bleu".parse::<Measure>().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let scores = vec![
            MeasureScore {
                record_id: "a,\"b\"".into(),
                measure: Measure::Mte,
                length: 12,
                value: 0.1 + 0.2,
            },
            MeasureScore {
                record_id: "plain".into(),
                measure: Measure::Lsrl,
                length: 1,
                value: -0.0,
            },
        ];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &scores).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("record_id,measure,length,value\n"));
        assert!(text.contains(",mte,12,3.0000000000000004e-1"), "{text}");
        assert!(!text.contains("-0.0"));
        let back = read_scores_csv(buf.as_slice()).unwrap();
        assert_eq!(back, scores);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let bad = "record_id,measure,length,value\na,msp,3\n";
        assert!(matches!(
            read_scores_csv(bad.as_bytes()),
            Err(ScoreCsvError::Malformed { line: 2, .. })
        ));
        let bad = "id,value\n";
        assert!(read_scores_csv(bad.as_bytes()).is_err());
    }

    fn arb_record() -> impl Strategy<Value = GenerationRecord> {
        (
            prop::collection::vec(-30.0f64..=0.0, 1..40),
            prop::collection::vec(
                (prop::collection::vec(0u8..5, 0..8), prop::collection::vec(-10.0f64..=0.0, 1..10)),
                2..6,
            ),
        )
            .prop_map(|(lps, samples)| {
                let mut r = GenerationRecord::new("p", "", lps.clone());
                r.token_entropies = Some(lps.iter().map(|l| -l).collect());
                r.samples = Some(
                    samples
                        .into_iter()
                        .map(|(words, token_logprobs)| SampledOutput {
                            text: words.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "),
                            token_logprobs,
                        })
                        .collect(),
                );
                r
            })
    }

    proptest! {
        #[test]
        fn ppl_times_length_is_msp(r in arb_record()) {
            let m = msp(&r);
            let p = ppl(&r) * length_of(&r) as f64;
            prop_assert!((p - m).abs() <= 1e-12 * m.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn all_measures_finite_and_in_range(r in arb_record()) {
            for m in Measure::ALL {
                let v = m.compute(&r).unwrap();
                prop_assert!(v.is_finite());
                prop_assert!(v >= 0.0, "{m} = {v}");
            }
            prop_assert!(lsrl(&r).unwrap() <= 1.0);
        }

        #[test]
        fn identical_samples_collapse(lps in prop::collection::vec(-10.0f64..=0.0, 1..20), m in 1usize..6) {
            let mut r = GenerationRecord::new("p", "", vec![-1.0]);
            let single = GenerationRecord::new("q", "", lps.clone());
            r.samples = Some(vec![SampledOutput { text: String::new(), token_logprobs: lps }; m]);
            let tol = 1e-12 * msp(&single).max(1.0);
            prop_assert!((mcse(&r).unwrap() - msp(&single)).abs() <= tol);
            prop_assert!((mcnse(&r).unwrap() - ppl(&single)).abs() <= tol);
        }
    }
}

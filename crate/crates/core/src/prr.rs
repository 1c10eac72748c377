//! Prediction–rejection curves and the prediction–rejection ratio.
//!
//! Instances are rejected most-uncertain first (ties: lower original index
//! first). With `N` instances there are `N` rejection levels `k = 0..N-1`;
//! level `k` reports the mean quality of the `N - k` retained instances, and
//! the area under the curve is the plain average over levels. The random
//! baseline is the flat line at mean quality, and the oracle rejects in
//! increasing order of quality:
//!
//! ```text
//! PRR = (AUC_unc - AUC_rnd) / (AUC_oracle - AUC_rnd)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{Measure, MeasureScore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrrError {
    #[error("prediction-rejection curve needs at least one instance")]
    Empty,
    #[error("{uncertainties} uncertainties but {qualities} qualities")]
    LengthMismatch {
        uncertainties: usize,
        qualities: usize,
    },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("all qualities are identical; the oracle and random curves coincide")]
    DegenerateQuality,
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("report key mismatch: {0}")]
    KeyMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rejection_rate: f64,
    pub mean_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrResult {
    pub curve_unc: Vec<CurvePoint>,
    pub curve_oracle: Vec<CurvePoint>,
    pub auc_unc: f64,
    pub auc_oracle: f64,
    pub auc_rnd: f64,
    pub prr: f64,
    pub n: usize,
}

fn check_inputs(uncertainties: &[f64], qualities: &[f64]) -> Result<(), PrrError> {
    if uncertainties.len() != qualities.len() {
        return Err(PrrError::LengthMismatch {
            uncertainties: uncertainties.len(),
            qualities: qualities.len(),
        });
    }
    if qualities.is_empty() {
        return Err(PrrError::Empty);
    }
    for (what, values) in [("uncertainty", uncertainties), ("quality", qualities)] {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(PrrError::NonFinite { what, index });
        }
    }
    Ok(())
}

/// Indices in rejection order: most uncertain first, ties by lower index.
pub fn rejection_order(uncertainties: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..uncertainties.len()).collect();
    order.sort_by(|&a, &b| {
        uncertainties[b]
            .total_cmp(&uncertainties[a])
            .then(a.cmp(&b))
    });
    order
}

fn curve_from_order(order: &[usize], qualities: &[f64]) -> Vec<CurvePoint> {
    let n = order.len();
    // Retained set at level k is order[k..]; accumulate from the back so two
    // orders that visit equal quality values produce bit-identical means.
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + qualities[order[k]];
    }
    (0..n)
        .map(|k| CurvePoint {
            rejection_rate: k as f64 / n as f64,
            mean_quality: suffix[k] / (n - k) as f64,
        })
        .collect()
}

pub fn pr_curve(uncertainties: &[f64], qualities: &[f64]) -> Result<Vec<CurvePoint>, PrrError> {
    check_inputs(uncertainties, qualities)?;
    Ok(curve_from_order(&rejection_order(uncertainties), qualities))
}

/// Rectangle-rule area: the mean of the curve's quality values.
pub fn auc(curve: &[CurvePoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().fold(0.0, |acc, p| acc + p.mean_quality) / curve.len() as f64
}

pub fn prr(uncertainties: &[f64], qualities: &[f64]) -> Result<PrrResult, PrrError> {
    check_inputs(uncertainties, qualities)?;
    let first = qualities[0];
    if qualities.iter().all(|&q| q == first) {
        return Err(PrrError::DegenerateQuality);
    }
    let n = qualities.len();
    let curve_unc = curve_from_order(&rejection_order(uncertainties), qualities);
    let negated: Vec<f64> = qualities.iter().map(|q| -q).collect();
    let curve_oracle = curve_from_order(&rejection_order(&negated), qualities);
    let auc_unc = auc(&curve_unc);
    let auc_oracle = auc(&curve_oracle);
    let auc_rnd = qualities.iter().fold(0.0, |acc, q| acc + q) / n as f64;
    let prr = (auc_unc - auc_rnd) / (auc_oracle - auc_rnd);
    Ok(PrrResult {
        curve_unc,
        curve_oracle,
        auc_unc,
        auc_oracle,
        auc_rnd,
        prr,
        n,
    })
}

// ---------------------------------------------------------------------------
// Base vs detrended comparison
// ---------------------------------------------------------------------------

/// One row of the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrComparison {
    pub dataset: String,
    pub measure: String,
    pub mode: String,
    pub prr_base: f64,
    pub prr_line: f64,
    pub delta: f64,
}

impl PrrComparison {
    pub fn new(dataset: &str, measure: &str, mode: &str, prr_base: f64, prr_line: f64) -> Self {
        Self {
            dataset: dataset.to_string(),
            measure: measure.to_string(),
            mode: mode.to_string(),
            prr_base,
            prr_line,
            delta: prr_line - prr_base,
        }
    }

    pub fn improved(&self) -> bool {
        self.delta > 0.0
    }

    /// Two-decimal `base / line` cell with an arrow on improvement,
    /// e.g. `0.48 / 0.58↑`.
    pub fn cell(&self) -> String {
        format_cell(self.prr_base, self.prr_line)
    }
}

pub fn format_cell(base: f64, line: f64) -> String {
    format!(
        "{base:.2} / {line:.2}{}",
        if line > base { "↑" } else { "" }
    )
}

fn group_by_measure(
    scores: &[MeasureScore],
    side: &str,
) -> Result<BTreeMap<Measure, HashMap<String, f64>>, PrrError> {
    let mut out: BTreeMap<Measure, HashMap<String, f64>> = BTreeMap::new();
    for s in scores {
        if out
            .entry(s.measure)
            .or_default()
            .insert(s.record_id.clone(), s.value)
            .is_some()
        {
            return Err(PrrError::Alignment(format!(
                "{side} scores list '{}' twice for {}",
                s.record_id, s.measure
            )));
        }
    }
    Ok(out)
}

/// Compares base and detrended scores per measure on the same instances.
/// Both sides must cover the same (measure, record id) pairs and every id
/// needs a quality.
pub fn compare_prr(
    dataset: &str,
    mode: &str,
    base: &[MeasureScore],
    line: &[MeasureScore],
    qualities: &HashMap<String, f64>,
) -> Result<Vec<PrrComparison>, PrrError> {
    let base_by = group_by_measure(base, "base")?;
    let line_by = group_by_measure(line, "line")?;
    let base_keys: BTreeSet<_> = base_by.keys().collect();
    let line_keys: BTreeSet<_> = line_by.keys().collect();
    if base_keys != line_keys {
        return Err(PrrError::Alignment(format!(
            "base covers measures {base_keys:?}, line covers {line_keys:?}"
        )));
    }
    let mut rows = Vec::new();
    for (measure, b) in &base_by {
        let l = &line_by[measure];
        let mut ids: Vec<&String> = b.keys().collect();
        ids.sort();
        if ids.len() != l.len() || ids.iter().any(|id| !l.contains_key(*id)) {
            return Err(PrrError::Alignment(format!(
                "base and line scores for {measure} cover different record ids"
            )));
        }
        let mut q = Vec::with_capacity(ids.len());
        for id in &ids {
            q.push(*qualities.get(*id).ok_or_else(|| {
                PrrError::Alignment(format!("no quality for record '{id}'"))
            })?);
        }
        let ub: Vec<f64> = ids.iter().map(|id| b[*id]).collect();
        let ul: Vec<f64> = ids.iter().map(|id| l[*id]).collect();
        let rb = prr(&ub, &q)?;
        let rl = prr(&ul, &q)?;
        rows.push(PrrComparison::new(dataset, measure.tag(), mode, rb.prr, rl.prr));
    }
    Ok(rows)
}

/// A single PRR evaluation of one score set, as written by the `prr` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrRunEntry {
    pub dataset: String,
    pub measure: String,
    pub mode: String,
    pub prr: f64,
    pub auc_unc: f64,
    pub auc_oracle: f64,
    pub auc_rnd: f64,
    pub n: usize,
}

impl PrrRunEntry {
    pub fn new(dataset: &str, measure: &str, mode: &str, r: &PrrResult) -> Self {
        Self {
            dataset: dataset.to_string(),
            measure: measure.to_string(),
            mode: mode.to_string(),
            prr: r.prr,
            auc_unc: r.auc_unc,
            auc_oracle: r.auc_oracle,
            auc_rnd: r.auc_rnd,
            n: r.n,
        }
    }
}

/// Pairs base and detrended runs on `(dataset, measure)`. The key sets must
/// match exactly. Output is sorted by dataset, then measure.
pub fn join_runs(
    base: &[PrrRunEntry],
    line: &[PrrRunEntry],
) -> Result<Vec<PrrComparison>, PrrError> {
    fn index<'a>(
        runs: &'a [PrrRunEntry],
        side: &str,
    ) -> Result<BTreeMap<(&'a str, &'a str), &'a PrrRunEntry>, PrrError> {
        let mut out = BTreeMap::new();
        for r in runs {
            if out
                .insert((r.dataset.as_str(), r.measure.as_str()), r)
                .is_some()
            {
                return Err(PrrError::KeyMismatch(format!(
                    "{side} runs list ({}, {}) twice",
                    r.dataset, r.measure
                )));
            }
        }
        Ok(out)
    }
    let b = index(base, "base")?;
    let l = index(line, "line")?;
    let only_base: Vec<_> = b.keys().filter(|k| !l.contains_key(*k)).collect();
    let only_line: Vec<_> = l.keys().filter(|k| !b.contains_key(*k)).collect();
    if !only_base.is_empty() || !only_line.is_empty() {
        return Err(PrrError::KeyMismatch(format!(
            "only in base: {only_base:?}; only in line: {only_line:?}"
        )));
    }
    Ok(b.iter()
        .map(|(k, br)| {
            let lr = l[k];
            PrrComparison::new(&br.dataset, &br.measure, &lr.mode, br.prr, lr.prr)
        })
        .collect())
}

/// Per-measure mean improvement across datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub measure: String,
    pub mean_delta: f64,
    pub datasets: usize,
}

pub fn summarize_by_measure(rows: &[PrrComparison]) -> Vec<MeasureSummary> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.measure.as_str()).or_insert((0.0, 0));
        e.0 += r.delta;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(m, (sum, n))| MeasureSummary {
            measure: m.to_string(),
            mean_delta: sum / n as f64,
            datasets: n,
        })
        .collect()
}

/// Best base PRR and best detrended PRR per dataset, each maximised over
/// measures independently.
pub fn best_per_dataset(rows: &[PrrComparison]) -> BTreeMap<String, (f64, f64)> {
    let mut out: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in rows {
        let e = out
            .entry(r.dataset.clone())
            .or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.max(r.prr_base);
        e.1 = e.1.max(r.prr_line);
    }
    out
}

/// Wide table: one row per measure plus a `best` row, one column per
/// dataset, cells formatted as `base / line` with `↑` on improvement.
pub fn render_table_csv(rows: &[PrrComparison]) -> String {
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    let mut measures: Vec<&str> = Vec::new();
    for r in rows {
        if !measures.contains(&r.measure.as_str()) {
            measures.push(&r.measure);
        }
    }
    measures.sort_by_key(|m| {
        m.parse::<Measure>()
            .map(|x| x as usize)
            .unwrap_or(usize::MAX)
    });
    let cell: HashMap<(&str, &str), &PrrComparison> = rows
        .iter()
        .map(|r| ((r.dataset.as_str(), r.measure.as_str()), r))
        .collect();

    let mut out = String::from("measure");
    for d in &datasets {
        out.push(',');
        out.push_str(d);
    }
    out.push('\n');
    for m in &measures {
        out.push_str(m);
        for d in &datasets {
            out.push(',');
            if let Some(r) = cell.get(&(*d, *m)) {
                out.push_str(&r.cell());
            }
        }
        out.push('\n');
    }
    let best = best_per_dataset(rows);
    out.push_str("best");
    for d in &datasets {
        let (b, l) = best[*d];
        let _ = write!(out, ",{}", format_cell(b, l));
    }
    out.push('\n');
    out
}

pub fn render_summary_csv(summary: &[MeasureSummary]) -> String {
    let mut out = String::from("measure,mean_delta,datasets\n");
    for s in summary {
        let _ = writeln!(out, "{},{},{}", s.measure, s.mean_delta, s.datasets);
    }
    out
}

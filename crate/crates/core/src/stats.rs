//! Polynomial least squares, Wald tests on the slope, and binned length trends.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("x and y differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {needed} points for this fit, got {n}")]
    InsufficientData { n: usize, needed: usize },
    #[error("design matrix is rank deficient (need at least {needed} distinct predictor values)")]
    SingularFit { needed: usize },
    #[error("degree must be at least 1, got {0}")]
    BadDegree(usize),
    #[error("degrees of freedom must be at least 1, got {0}")]
    BadDof(f64),
    #[error("non-finite input value {0}")]
    NonFinite(f64),
    #[error("cannot normalize lengths: all values equal {0}")]
    DegenerateRange(f64),
    #[error("need at least 2 bins, got {0}")]
    BadBins(usize),
}

/// Result of regressing a response on a polynomial in one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub degree: usize,
    /// `degree + 1` coefficients, constant term first.
    pub coefficients: Vec<f64>,
    /// Standard error of the linear coefficient.
    pub slope_se: f64,
    /// Linear coefficient over its standard error. Infinite for an exact fit
    /// with a non-zero slope (serialized as `null`).
    #[serde(with = "nonfinite_as_null")]
    pub t_stat: f64,
    /// Two-sided Wald p-value of the linear coefficient.
    pub p_value: f64,
    pub n: usize,
    pub r_squared: f64,
}

impl TrendFit {
    pub fn slope(&self) -> f64 {
        self.coefficients[1]
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Evaluates the fitted polynomial (Horner).
    pub fn predict(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    /// `null` reads back as +infinity; the sign is recovered by the caller
    /// from the slope when it matters.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Ordinary least squares fit of `y` on `1, x, ..., x^degree`, solved by QR.
///
/// When the residual sum of squares is below `1e-12` of the total sum of
/// squares (or both are zero) the fit is treated as exact: `slope_se = 0` and
/// `p_value` is 0 for a non-zero slope, 1 for a zero slope.
pub fn ols_polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<TrendFit, StatsError> {
    if degree == 0 {
        return Err(StatsError::BadDegree(degree));
    }
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if let Some(&bad) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(bad));
    }
    let n = x.len();
    let p = degree + 1;
    if n < degree + 2 {
        return Err(StatsError::InsufficientData {
            n,
            needed: degree + 2,
        });
    }
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < p {
        return Err(StatsError::SingularFit { needed: p });
    }

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let dof = (n - p) as f64;

    if y.iter().all(|&v| v == y[0]) {
        // Constant response: the exact solution is the constant itself.
        let mut coefficients = vec![0.0; p];
        coefficients[0] = y[0];
        return Ok(TrendFit {
            degree,
            coefficients,
            slope_se: 0.0,
            t_stat: 0.0,
            p_value: 1.0,
            n,
            r_squared: 1.0,
        });
    }

    let design = DMatrix::from_fn(n, p, |i, k| x[i].powi(k as i32));
    let qr = design.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if (0..p).any(|k| r[(k, k)].abs() <= 1e-12 * max_diag) {
        return Err(StatsError::SingularFit { needed: p });
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let coef = r
        .solve_upper_triangular(&rhs)
        .ok_or(StatsError::SingularFit { needed: p })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(StatsError::SingularFit { needed: p })?;

    let fitted = &design * &coef;
    let sse: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| (yi - fi).powi(2))
        .sum();
    let coefficients: Vec<f64> = coef.iter().copied().collect();
    let slope = coefficients[1];
    let r_squared = (1.0 - sse / sst).clamp(0.0, 1.0);

    if sse < 1e-12 * sst {
        let (t_stat, p_value) = if slope == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(slope), 0.0)
        };
        return Ok(TrendFit {
            degree,
            coefficients,
            slope_se: 0.0,
            t_stat,
            p_value,
            n,
            r_squared,
        });
    }

    // [(X'X)^-1]_{11} = sum_j (R^-1)_{1j}^2
    let inv_11: f64 = (0..p).map(|j| r_inv[(1, j)].powi(2)).sum();
    let sigma2 = sse / dof;
    let slope_se = (sigma2 * inv_11).sqrt();
    let t_stat = slope / slope_se;
    let p_value = wald_p_value(t_stat, dof)?;
    Ok(TrendFit {
        degree,
        coefficients,
        slope_se,
        t_stat,
        p_value,
        n,
        r_squared,
    })
}

// ---------------------------------------------------------------------------
// Student-t tail probability
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`. Takes both `x` and `1 - x` so
/// callers can pass an accurately computed complement.
fn inc_beta(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * one_minus_x.ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, one_minus_x) / b
    }
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student-t with `dof`
/// degrees of freedom.
pub fn wald_p_value(t_stat: f64, dof: f64) -> Result<f64, StatsError> {
    if !(dof >= 1.0) {
        return Err(StatsError::BadDof(dof));
    }
    if t_stat.is_nan() {
        return Err(StatsError::NonFinite(t_stat));
    }
    if t_stat.is_infinite() {
        return Ok(0.0);
    }
    let t2 = t_stat * t_stat;
    let x = dof / (dof + t2);
    let one_minus_x = t2 / (dof + t2);
    Ok(inc_beta(0.5 * dof, 0.5, x, one_minus_x).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Length normalization and binning
// ---------------------------------------------------------------------------

/// Min–max map of token lengths onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthNorm {
    pub min: usize,
    pub max: usize,
}

impl LengthNorm {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Result<Self, StatsError> {
        let mut it = lengths.into_iter();
        let first = it.next().ok_or(StatsError::InsufficientData { n: 0, needed: 2 })?;
        let (min, max) = it.fold((first, first), |(lo, hi), l| (lo.min(l), hi.max(l)));
        if min == max {
            return Err(StatsError::DegenerateRange(min as f64));
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, length: usize) -> f64 {
        (length as f64 - self.min as f64) / (self.max as f64 - self.min as f64)
    }

    pub fn contains(&self, length: usize) -> bool {
        (self.min..=self.max).contains(&length)
    }
}

pub fn normalize_lengths(lengths: &[usize]) -> Result<Vec<f64>, StatsError> {
    let norm = LengthNorm::from_lengths(lengths.iter().copied())?;
    Ok(lengths.iter().map(|&l| norm.apply(l)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitOn {
    /// Regress on every (normalized length, value) point.
    #[default]
    Raw,
    /// Regress bin means on bin centres (non-empty bins only).
    Bins,
}

impl FromStr for FitOn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "bins" => Ok(Self::Bins),
            other => Err(format!("unknown fit target '{other}' (expected raw or bins)")),
        }
    }
}

impl fmt::Display for FitOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Raw => "raw",
            Self::Bins => "bins",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedTrend {
    /// `n_bins + 1` equally spaced edges over normalized length `[0, 1]`.
    pub bin_edges: Vec<f64>,
    /// Mean response per bin; `None` for empty bins.
    pub bin_means: Vec<Option<f64>>,
    pub bin_counts: Vec<usize>,
    pub fit: TrendFit,
    pub fit_on: FitOn,
}

impl BinnedTrend {
    pub fn bin_centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }
}

pub const DEFAULT_BINS: usize = 20;

pub fn binned_trend(
    lengths: &[usize],
    values: &[f64],
    n_bins: usize,
) -> Result<BinnedTrend, StatsError> {
    binned_trend_with(lengths, values, n_bins, 1, FitOn::Raw)
}

pub fn binned_trend_with(
    lengths: &[usize],
    values: &[f64],
    n_bins: usize,
    degree: usize,
    fit_on: FitOn,
) -> Result<BinnedTrend, StatsError> {
    if n_bins < 2 {
        return Err(StatsError::BadBins(n_bins));
    }
    if lengths.len() != values.len() {
        return Err(StatsError::LengthMismatch {
            x: lengths.len(),
            y: values.len(),
        });
    }
    let xs = normalize_lengths(lengths)?;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&x, &v) in xs.iter().zip(values) {
        let b = ((x * n_bins as f64).floor() as usize).min(n_bins - 1);
        sums[b] += v;
        counts[b] += 1;
    }
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let bin_means: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    let fit = match fit_on {
        FitOn::Raw => ols_polyfit(&xs, values, degree)?,
        FitOn::Bins => {
            let (bx, by): (Vec<f64>, Vec<f64>) = bin_edges
                .windows(2)
                .zip(&bin_means)
                .filter_map(|(w, m)| m.map(|m| (0.5 * (w[0] + w[1]), m)))
                .unzip();
            ols_polyfit(&bx, &by, degree)?
        }
    };
    Ok(BinnedTrend {
        bin_edges,
        bin_means,
        bin_counts: counts,
        fit,
        fit_on,
    })
}

/// One row of the trend report: the length trend of one response in one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReportEntry {
    pub dataset: String,
    pub measure: String,
    pub slope: f64,
    pub p_value: f64,
    pub n: usize,
    pub r_squared: f64,
    pub degree: usize,
}

impl TrendReportEntry {
    pub fn new(dataset: &str, measure: &str, fit: &TrendFit) -> Self {
        Self {
            dataset: dataset.to_string(),
            measure: measure.to_string(),
            slope: fit.slope(),
            p_value: fit.p_value,
            n: fit.n,
            r_squared: fit.r_squared,
            degree: fit.degree,
        }
    }
}

//! Error statistics, Welch's t-test, two-factor ANOVA with replication, and
//! the Student-t / Fisher-F distributions they rest on.
//!
//! Distribution functions are built on the regularized incomplete beta
//! function; quantiles invert the CDFs by bisection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} values, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("unbalanced design: {0}")]
    Unbalanced(String),
}

/// Mean, sample standard deviation and size of a sample. This is also the
/// form in which published results are usually available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl SampleSummary {
    pub fn from_values(values: &[f64]) -> Result<Self, StatsError> {
        if values.len() < 2 {
            return Err(StatsError::TooFewSamples { needed: 2, got: values.len() });
        }
        let mean = mean(values);
        Ok(Self {
            mean,
            sd: sample_variance(values, mean).sqrt(),
            n: values.len(),
        })
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64], mean: f64) -> f64 {
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean squared deviation from the true value, in squared input units.
    pub mse: f64,
    /// Sample standard deviation of the measurements themselves.
    pub std_dev: f64,
    pub n: usize,
}

pub fn error_stats(measured: &[f64], actual: f64) -> Result<ErrorStats, StatsError> {
    let summary = SampleSummary::from_values(measured)?;
    let mse = measured.iter().map(|v| (v - actual).powi(2)).sum::<f64>() / measured.len() as f64;
    Ok(ErrorStats { mse, std_dev: summary.sd, n: summary.n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t_stat: f64,
    /// Welch–Satterthwaite degrees of freedom, not truncated.
    pub df: f64,
    pub t_crit_two_tail: f64,
    pub p_two_tail: f64,
    pub alpha: f64,
}

/// Two-sample t-test without assuming equal variances.
pub fn welch_t_test(
    a: &SampleSummary,
    b: &SampleSummary,
    alpha: f64,
) -> Result<TTestResult, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Domain(format!("alpha = {alpha}")));
    }
    for s in [a, b] {
        if s.n < 2 {
            return Err(StatsError::TooFewSamples { needed: 2, got: s.n });
        }
        if !(s.sd > 0.0) {
            return Err(StatsError::ZeroVariance);
        }
    }
    let va = a.sd * a.sd / a.n as f64;
    let vb = b.sd * b.sd / b.n as f64;
    let t_stat = (a.mean - b.mean) / (va + vb).sqrt();
    let df = (va + vb).powi(2)
        / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
    Ok(TTestResult {
        mean_a: a.mean,
        mean_b: b.mean,
        t_stat,
        df,
        t_crit_two_tail: t_quantile(1.0 - alpha / 2.0, df)?,
        p_two_tail: student_t_two_tail(t_stat, df)?,
        alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaSource {
    pub ss: f64,
    pub df: f64,
    pub ms: f64,
    pub f: f64,
    pub p_value: f64,
    pub f_critical: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    /// Row factor (e.g. measurement method).
    pub samples: AnovaSource,
    /// Column factor (e.g. width vs height).
    pub columns: AnovaSource,
    pub interaction: AnovaSource,
    pub within_ss: f64,
    pub within_df: f64,
    pub within_ms: f64,
    pub total_ss: f64,
    pub total_df: f64,
    pub alpha: f64,
}

/// Two-factor ANOVA with replication. `cells[r][c]` holds the replicates of
/// row level `r` and column level `c`; every cell must have the same size.
pub fn two_factor_anova_rep(cells: &[Vec<Vec<f64>>], alpha: f64) -> Result<AnovaResult, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Domain(format!("alpha = {alpha}")));
    }
    let rows = cells.len();
    let cols = cells.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(StatsError::Unbalanced(format!("need ≥ 2 levels per factor, got {rows}×{cols}")));
    }
    if cells.iter().any(|r| r.len() != cols) {
        return Err(StatsError::Unbalanced("rows have different column counts".into()));
    }
    let n = cells[0][0].len();
    if cells.iter().flatten().any(|c| c.len() != n) {
        return Err(StatsError::Unbalanced("cells have different replicate counts".into()));
    }
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }

    let cell_means: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().map(|c| mean(c)).collect()).collect();
    let grand = cell_means.iter().flatten().sum::<f64>() / (rows * cols) as f64;
    let row_means: Vec<f64> = cell_means.iter().map(|r| r.iter().sum::<f64>() / cols as f64).collect();
    let col_means: Vec<f64> = (0..cols)
        .map(|c| cell_means.iter().map(|r| r[c]).sum::<f64>() / rows as f64)
        .collect();

    let nf = n as f64;
    let ss_rows = nf * cols as f64 * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * rows as f64 * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_inter = 0.0;
    let mut ss_within = 0.0;
    let mut ss_total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let m = cell_means[r][c];
            ss_inter += nf * (m - row_means[r] - col_means[c] + grand).powi(2);
            for v in &cells[r][c] {
                ss_within += (v - m).powi(2);
                ss_total += (v - grand).powi(2);
            }
        }
    }

    let df_rows = (rows - 1) as f64;
    let df_cols = (cols - 1) as f64;
    let df_inter = df_rows * df_cols;
    let df_within = (rows * cols * (n - 1)) as f64;
    let ms_within = ss_within / df_within;
    if !(ms_within > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    let source = |ss: f64, df: f64| -> Result<AnovaSource, StatsError> {
        let ms = ss / df;
        let f = ms / ms_within;
        Ok(AnovaSource {
            ss,
            df,
            ms,
            f,
            p_value: f_upper_tail(f, df, df_within)?,
            f_critical: f_quantile(1.0 - alpha, df, df_within)?,
        })
    };
    Ok(AnovaResult {
        samples: source(ss_rows, df_rows)?,
        columns: source(ss_cols, df_cols)?,
        interaction: source(ss_inter, df_inter)?,
        within_ss: ss_within,
        within_df: df_within,
        within_ms: ms_within,
        total_ss: ss_total,
        total_df: (rows * cols * n - 1) as f64,
        alpha,
    })
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection keeps the series in its accurate range
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

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64, StatsError> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(StatsError::Domain(format!("I_x(a, b) with a = {a}, b = {b}, x = {x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the continued fraction converges fast only below the mean of the distribution
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(ln_front.exp() * beta_continued_fraction(a, b, x) / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b)
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn check_df(df: f64) -> Result<(), StatsError> {
    if df > 0.0 && df.is_finite() {
        Ok(())
    } else {
        Err(StatsError::Domain(format!("degrees of freedom {df}")))
    }
}

pub fn student_t_cdf(t: f64, df: f64) -> Result<f64, StatsError> {
    check_df(df)?;
    if t.is_nan() {
        return Err(StatsError::Domain("t is NaN".into()));
    }
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))?;
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// P(|T| ≥ |t|), computed without cancellation.
pub fn student_t_two_tail(t: f64, df: f64) -> Result<f64, StatsError> {
    check_df(df)?;
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

pub fn f_cdf(x: f64, df1: f64, df2: f64) -> Result<f64, StatsError> {
    check_df(df1)?;
    check_df(df2)?;
    if x.is_nan() {
        return Err(StatsError::Domain("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    regularized_incomplete_beta(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2))
}

fn f_upper_tail(x: f64, df1: f64, df2: f64) -> Result<f64, StatsError> {
    if x <= 0.0 {
        return Ok(1.0);
    }
    regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df1 * x + df2))
}

fn check_probability(p: f64) -> Result<(), StatsError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(StatsError::Domain(format!("probability {p}")))
    }
}

/// Smallest `x` in `[lo, ∞)` with `cdf(x) ≥ p` for a non-decreasing `cdf`.
fn invert_cdf(
    p: f64,
    mut lo: f64,
    cdf: impl Fn(f64) -> Result<f64, StatsError>,
) -> Result<f64, StatsError> {
    let mut hi = lo.abs().max(1.0);
    while cdf(hi)? < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(StatsError::Domain(format!("quantile {p} does not exist")));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn t_quantile(p: f64, df: f64) -> Result<f64, StatsError> {
    check_probability(p)?;
    check_df(df)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    // solve in the upper half and mirror for symmetry
    let upper = p.max(1.0 - p);
    let q = invert_cdf(upper, 0.0, |t| student_t_cdf(t, df))?;
    Ok(if p > 0.5 { q } else { -q })
}

pub fn f_quantile(p: f64, df1: f64, df2: f64) -> Result<f64, StatsError> {
    check_probability(p)?;
    check_df(df1)?;
    check_df(df2)?;
    invert_cdf(p, 0.0, |x| f_cdf(x, df1, df2))
}

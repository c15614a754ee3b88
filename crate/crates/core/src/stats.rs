//! Two-sample t-tests, Cohen's d, contingency chi-square, and the special
//! functions behind their p-values.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("each group needs at least 2 samples (got {a} and {b})")]
    TooFewSamples { a: usize, b: usize },
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("both groups have zero variance but different means (d = {}infinity)", if *.positive { "+" } else { "-" })]
    DegenerateSamples { positive: bool },
    #[error("table {axis} {index} has a zero total")]
    ZeroMarginal { axis: &'static str, index: usize },
    #[error("Yates correction applies to 2x2 tables only (df = {df})")]
    YatesOnlyFor2x2 { df: usize },
    #[error("table must be a non-empty rectangle with at least 2 rows and 2 columns")]
    BadShape,
}

// ---------------------------------------------------------------------------
// Special functions

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

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
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
    for m in 1..=MAX_ITER {
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

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized lower incomplete gamma P(s, x).
pub fn reg_lower_gamma(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < s + 1.0 {
        gamma_series(s, x)
    } else {
        1.0 - gamma_cf(s, x)
    }
}

/// Regularized upper incomplete gamma Q(s, x) = 1 - P(s, x).
pub fn reg_upper_gamma(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < s + 1.0 {
        1.0 - gamma_series(s, x)
    } else {
        gamma_cf(s, x)
    }
}

fn gamma_series(s: f64, x: f64) -> f64 {
    let mut ap = s;
    let mut sum = 1.0 / s;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + s * x.ln() - ln_gamma(s)).exp()
}

fn gamma_cf(s: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
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
    (-x + s * x.ln() - ln_gamma(s)).exp() * h
}

/// Student t cumulative distribution P(T <= t) with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    reg_upper_gamma(df / 2.0, x / 2.0).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// t-tests

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GroupSummary {
    pub fn of(xs: &[f64]) -> GroupSummary {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        GroupSummary { n, mean, sd: var.sqrt() }
    }

    fn var(&self) -> f64 {
        self.sd * self.sd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestVariant {
    Welch,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub variant: TTestVariant,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub cohens_d: f64,
    pub a: GroupSummary,
    pub b: GroupSummary,
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite df. Cohen's d
/// uses the pooled standard deviation.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    t_test(a, b, TTestVariant::Welch)
}

/// Student's pooled-variance t-test, for sensitivity checks.
pub fn student_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    t_test(a, b, TTestVariant::Student)
}

pub fn t_test(a: &[f64], b: &[f64], variant: TTestVariant) -> Result<TTestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples { a: a.len(), b: b.len() });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let sa = GroupSummary::of(a);
    let sb = GroupSummary::of(b);
    let (na, nb) = (sa.n as f64, sb.n as f64);
    let diff = sa.mean - sb.mean;
    let pooled_var = ((na - 1.0) * sa.var() + (nb - 1.0) * sb.var()) / (na + nb - 2.0);

    if sa.var() == 0.0 && sb.var() == 0.0 {
        if diff != 0.0 {
            return Err(StatsError::DegenerateSamples { positive: diff > 0.0 });
        }
        return Ok(TTestResult {
            variant,
            t: 0.0,
            df: na + nb - 2.0,
            p_two_sided: 1.0,
            cohens_d: 0.0,
            a: sa,
            b: sb,
        });
    }

    let (t, df) = match variant {
        TTestVariant::Welch => {
            let va = sa.var() / na;
            let vb = sb.var() / nb;
            let se2 = va + vb;
            let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
            (diff / se2.sqrt(), df)
        }
        TTestVariant::Student => {
            let se = (pooled_var * (1.0 / na + 1.0 / nb)).sqrt();
            (diff / se, na + nb - 2.0)
        }
    };
    Ok(TTestResult {
        variant,
        t,
        df,
        p_two_sided: t_two_sided_p(t, df),
        cohens_d: diff / pooled_var.sqrt(),
        a: sa,
        b: sb,
    })
}

// ---------------------------------------------------------------------------
// Chi-square

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub yates: bool,
    pub observed: Vec<Vec<u64>>,
    pub expected: Vec<Vec<f64>>,
}

/// Pearson chi-square test of independence on an r x c table of counts.
///
/// With `yates`, each |O - E| is reduced by 0.5 (never below zero); only
/// valid when df = 1.
pub fn chi_square(table: &[Vec<u64>], yates: bool) -> Result<ChiSquareResult, StatsError> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(StatsError::BadShape);
    }
    let df = (rows - 1) * (cols - 1);
    if yates && df != 1 {
        return Err(StatsError::YatesOnlyFor2x2 { df });
    }
    let row_totals: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_totals: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    if let Some(i) = row_totals.iter().position(|&t| t == 0.0) {
        return Err(StatsError::ZeroMarginal { axis: "row", index: i });
    }
    if let Some(j) = col_totals.iter().position(|&t| t == 0.0) {
        return Err(StatsError::ZeroMarginal { axis: "column", index: j });
    }
    let total: f64 = row_totals.iter().sum();
    let correction = if yates { 0.5 } else { 0.0 };

    let mut chi2 = 0.0;
    let mut expected = vec![vec![0.0; cols]; rows];
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_totals[i] * col_totals[j] / total;
            expected[i][j] = e;
            let dev = ((o as f64 - e).abs() - correction).max(0.0);
            chi2 += dev * dev / e;
        }
    }
    Ok(ChiSquareResult {
        chi2,
        df,
        p: chi2_sf(chi2, df as f64),
        yates,
        observed: table.to_vec(),
        expected,
    })
}

// ---------------------------------------------------------------------------
// Feature filtering

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "EXT>INT")]
    ExtGreater,
    #[serde(rename = "EXT<INT")]
    ExtLess,
}

impl Direction {
    pub fn of(diff: f64) -> Option<Direction> {
        if diff > 0.0 {
            Some(Direction::ExtGreater)
        } else if diff < 0.0 {
            Some(Direction::ExtLess)
        } else {
            None
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ExtGreater => "EXT > INT",
            Direction::ExtLess => "EXT < INT",
        })
    }
}

/// Significance stars: `***` p < .001, `**` p < .01, `*` p < .05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificantFeature {
    pub feature: String,
    pub p: f64,
    pub d: f64,
    pub direction: Direction,
}

/// Keeps features with p < alpha and |d| > d_min, strongest effect first.
/// Group `a` of each result is the extrovert group.
pub fn significance_filter(
    results: &[(String, TTestResult)],
    alpha: f64,
    d_min: f64,
) -> Vec<SignificantFeature> {
    let mut kept: Vec<SignificantFeature> = results
        .iter()
        .filter(|(_, r)| r.p_two_sided < alpha && r.cohens_d.abs() > d_min)
        .filter_map(|(name, r)| {
            Direction::of(r.cohens_d).map(|direction| SignificantFeature {
                feature: name.clone(),
                p: r.p_two_sided,
                d: r.cohens_d,
                direction,
            })
        })
        .collect();
    // stable: ties keep input order
    kept.sort_by(|x, y| y.d.abs().total_cmp(&x.d.abs()));
    kept
}

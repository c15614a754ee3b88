//! Oracles shared by the property suite and the acceptance target. None of
//! them call into the crate's own numerics.

#![allow(dead_code)]

pub mod invariants;

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Cases per property. Every proptest block uses this.
pub const CASES: u32 = 1000;

/// Composite Simpson's rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// I_x(a, b) as a ratio of two quadratures; smooth for a, b >= 3.
pub fn inc_beta_by_quadrature(a: f64, b: f64, x: f64) -> f64 {
    let f = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
    let n = 20_000;
    simpson(f, 0.0, x, n) / simpson(f, 0.0, 1.0, n)
}

/// P(s, x) as a ratio of two quadratures; the tail past `s + 120` is negligible for s <= 30.
pub fn lower_gamma_by_quadrature(s: f64, x: f64) -> f64 {
    let f = |t: f64| if t == 0.0 { 0.0 } else { ((s - 1.0) * t.ln() - t).exp() };
    let upper = (s + 120.0).max(x);
    simpson(f, 0.0, x, 40_000) / simpson(f, 0.0, upper, 80_000)
}

#[derive(Debug, Clone, Copy)]
pub struct WelchOracle {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub d: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Textbook Welch test, p-value from statrs' Student t distribution.
pub fn welch_oracle(a: &[f64], b: &[f64]) -> WelchOracle {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    let p = 2.0 * dist.sf(t.abs());
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
    WelchOracle { t, df, p, d: (ma - mb) / pooled.sqrt() }
}

/// Pearson chi-square of a 2x2 table in closed form, no continuity correction.
pub fn chi2_2x2_closed_form(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let n = a + b + c + d;
    n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d))
}

/// |x - y| scaled by max(1, |y|).
pub fn rel_err(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(1.0)
}

/// Deterministic sample pairs for fixed-size oracle sweeps (splitmix64).
pub fn sample_pairs(count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut state = seed;
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..count)
        .map(|_| {
            let na = 2 + (next() * 30.0) as usize;
            let nb = 2 + (next() * 30.0) as usize;
            let shift = next() * 4.0 - 2.0;
            let spread = 0.1 + next() * 5.0;
            let a = (0..na).map(|_| shift + spread * next()).collect();
            let b = (0..nb).map(|_| next() * 3.0).collect();
            (a, b)
        })
        .collect()
}

/// 50 (a, b, x) points for the incomplete beta: a 5 x 5 shape grid at two x values.
pub fn beta_grid() -> Vec<(f64, f64, f64)> {
    let shapes = [3.0, 4.5, 7.0, 12.0, 20.0];
    let mut out = Vec::new();
    for a in shapes {
        for b in shapes {
            for x in [0.2, 0.65] {
                out.push((a, b, x));
            }
        }
    }
    out
}

/// 50 (s, x) points for the regularized lower gamma.
pub fn gamma_grid() -> Vec<(f64, f64)> {
    let shapes = [3.0, 5.5, 10.0, 18.0, 28.0];
    let xs = [0.5, 2.0, 4.0, 7.5, 12.0, 18.0, 25.0, 33.0, 45.0, 70.0];
    shapes.iter().flat_map(|&s| xs.iter().map(move |&x| (s, x))).collect()
}

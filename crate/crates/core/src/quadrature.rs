//! Adaptive Gauss–Legendre integration on finite intervals.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const ORDER: usize = 64;
const MAX_DEPTH: usize = 30;

/// Nodes and weights of the 64-point rule on `[-1, 1]`.
fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(ORDER))
}

/// Roots of `P_n` by Newton from the Chebyshev-like initial guesses.
fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn fixed<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (xs, ws) = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * xs.iter().zip(ws).map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
}

/// `∫_a^b f` to relative tolerance `rtol`, by bisecting any panel whose
/// 64-point value disagrees with the sum over its halves.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rtol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = fixed(&f, a, b);
    let v = refine(&f, a, b, whole, rtol, 0)?;
    if !v.is_finite() {
        return Err(Error::NonConvergence(format!("non-finite integral on [{a}, {b}]")));
    }
    Ok(v)
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, rtol: f64, depth: usize) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = fixed(f, a, m);
    let right = fixed(f, m, b);
    let split = left + right;
    if (split - whole).abs() <= rtol * split.abs() || (split - whole).abs() < 1e-300 {
        return Ok(split);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::NonConvergence(format!("quadrature depth exhausted near [{a}, {b}]")));
    }
    Ok(refine(f, a, m, left, rtol, depth + 1)? + refine(f, m, b, right, rtol, depth + 1)?)
}

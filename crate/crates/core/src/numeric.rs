//! Small numerical toolkit shared by the solvers: log-domain sums,
//! bracketed root finding and golden-section minimization.

use crate::error::{Error, Result};

/// Iteration cap for every scalar nonlinear solve.
pub const MAX_ITER: usize = 200;

/// `ln(sum_i exp(x_i))`, stable for large magnitudes. Empty input gives `-inf`.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let xs: Vec<f64> = terms.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax weights `exp(x_i - lse(x))`.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs.iter().copied());
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// Evenly spaced points on `[a, b]`, both ends included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
        }
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// Plain bisection for a continuous `f` with `f(lo)` and `f(hi)` of opposite sign.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::NonConvergence(format!(
            "bisection bracket [{lo}, {hi}] has no sign change ({flo}, {fhi})"
        )));
    }
    // Enough halvings to hit machine resolution on any finite bracket.
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || (hi - lo) <= xtol {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Newton's method safeguarded by a bracket that is maintained throughout.
///
/// `f` returns `(value, derivative)`; the root must be bracketed by `[lo, hi]`.
/// Converges when the step falls below `xtol * max(1, |x|)` or the value below `ftol`.
pub fn newton_bracketed<F>(mut f: F, lo: f64, hi: f64, x0: f64, xtol: f64, ftol: f64) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let (fa, _) = f(a);
    let (fb, _) = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NonConvergence(format!(
            "non-finite value at bracket end ({a}: {fa}, {b}: {fb})"
        )));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NonConvergence(format!(
            "root not bracketed in [{a}, {b}] ({fa}, {fb})"
        )));
    }
    let increasing = fb > 0.0;
    let mut x = if x0 > a && x0 < b { x0 } else { 0.5 * (a + b) };
    for _ in 0..MAX_ITER {
        let (fx, dfx) = f(x);
        if !fx.is_finite() {
            return Err(Error::NonConvergence(format!("non-finite value at x = {x}")));
        }
        if fx.abs() <= ftol {
            return Ok(x);
        }
        if (fx > 0.0) == increasing {
            b = x;
        } else {
            a = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && dfx.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        let step = (next - x).abs();
        x = next;
        if step <= xtol * x.abs().max(1.0) || (b - a) <= xtol * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence(format!(
        "Newton iteration cap reached in [{a}, {b}]"
    )))
}

/// Expands `[x0 - step, x0 + step]` geometrically until a monotone `f` changes sign.
pub fn expand_bracket<F>(mut f: F, x0: f64, step: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let mut h = step.abs().max(1e-8);
    let mut lo = x0 - h;
    let mut hi = x0 + h;
    for _ in 0..80 {
        let (flo, fhi) = (f(lo), f(hi));
        if flo.is_finite() && fhi.is_finite() && flo.signum() != fhi.signum() {
            return Ok((lo, hi));
        }
        if flo == 0.0 || fhi == 0.0 {
            return Ok((lo, hi));
        }
        h *= 2.0;
        lo = x0 - h;
        hi = x0 + h;
    }
    Err(Error::NonConvergence(format!(
        "could not bracket a root around {x0}"
    )))
}

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
/// Returns `(argmin, min)` among all evaluated points.
pub fn golden_section_min<F>(mut f: F, a: f64, b: f64, iters: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if b - a <= f64::EPSILON * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive_and_survives_large_inputs() {
        let xs = [0.1, -2.0, 3.5];
        let naive: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - naive).abs() < 1e-14);
        assert!((log_sum_exp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
    }

    #[test]
    fn newton_finds_sqrt_two() {
        let r = newton_bracketed(|x| (x * x - 2.0, 2.0 * x), 0.0, 2.0, 1.0, 1e-15, 0.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn newton_rejects_unbracketed() {
        assert!(newton_bracketed(|x| (x * x + 1.0, 2.0 * x), -1.0, 1.0, 0.0, 1e-12, 0.0).is_err());
    }

    #[test]
    fn bisection_and_expansion() {
        let f = |x: f64| x.powi(3) - 8.0;
        let (lo, hi) = expand_bracket(f, 0.0, 0.5).unwrap();
        let r = bisect(f, lo, hi, 1e-14).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, fx) = golden_section_min(|x| (x - 0.3).powi(2) + 1.0, -5.0, 5.0, 200);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-14);
    }

    #[test]
    fn significant_digit_rounding() {
        assert_eq!(round_sig(0.123_456_789_012_345_67, 15), 0.123456789012346);
        assert_eq!(round_sig(-1234.5, 2), -1200.0);
        assert!(round_sig(f64::NAN, 15).is_nan());
    }
}

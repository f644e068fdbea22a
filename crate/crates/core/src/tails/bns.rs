//! Barndorff-Nielsen–Shephard stochastic volatility:
//!
//! ```text
//! dX_t       = (m + beta sigma_t^2) dt + sigma_t dW_t + rho dZ_{lambda t}
//! dsigma_t^2 = -lambda sigma_t^2 dt + dZ_{lambda t}
//! ```
//!
//! with `Z` a compound Poisson subordinator. Conditional Laplace transforms of
//! `X_T` are explicit up to a time integral of the subordinator's cumulant
//! `kappa(theta) = sum_k mass_k (e^{theta y_k} - 1)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::utility::EXP_LIMIT;

use super::levy::LevyTriplet;

const QUAD_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnsParams {
    pub m: f64,
    pub beta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub sigma0_sq: f64,
    /// Jump part of `Z`: positive atoms only, no drift or diffusion.
    pub subordinator: LevyTriplet,
}

impl BnsParams {
    pub fn new(m: f64, beta: f64, lambda: f64, rho: f64, sigma0_sq: f64, jumps: Vec<(f64, f64)>) -> Result<Self> {
        let p = Self { m, beta, lambda, rho, sigma0_sq, subordinator: LevyTriplet { b: 0.0, c: 0.0, jumps } };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.rho < 0.0) || !(self.sigma0_sq > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need lambda > 0, rho < 0, sigma0_sq > 0; got {}, {}, {}",
                self.lambda, self.rho, self.sigma0_sq
            )));
        }
        if !self.m.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidParams("drift parameters must be finite".into()));
        }
        let z = &self.subordinator;
        if z.b != 0.0 || z.c != 0.0 {
            return Err(Error::InvalidParams("subordinator must be pure jump".into()));
        }
        if z.jumps.iter().any(|&(y, mass)| !(y > 0.0 && y.is_finite() && mass > 0.0 && mass.is_finite())) {
            return Err(Error::InvalidParams("subordinator atoms need y > 0 and mass > 0".into()));
        }
        Ok(())
    }

    /// `eps(s, T) = (1 - e^{-lambda (T - s)}) / lambda`.
    pub fn eps(&self, s: f64, horizon: f64) -> f64 {
        -(-self.lambda * (horizon - s)).exp_m1() / self.lambda
    }

    /// `kappa(theta) = sum_k mass_k (e^{theta y_k} - 1)`.
    pub fn kappa(&self, theta: f64) -> Result<f64> {
        let mut k = 0.0;
        for &(y, mass) in &self.subordinator.jumps {
            if theta * y > EXP_LIMIT {
                return Err(Error::Overflow { q: theta });
            }
            k += mass * (theta * y).exp_m1();
        }
        Ok(k)
    }

    fn f(&self, s: f64, horizon: f64, q: f64) -> f64 {
        self.rho * q + 0.5 * (q * q + 2.0 * self.beta * q) * self.eps(s, horizon)
    }

    /// `∫_a^b lambda kappa(f(s, q)) ds`.
    fn kappa_integral(&self, a: f64, b: f64, horizon: f64, q: f64) -> Result<f64> {
        if self.subordinator.jumps.is_empty() {
            return Ok(0.0);
        }
        let ymax = self.subordinator.jumps.iter().map(|j| j.0).fold(0.0, f64::max);
        // f(., q) is monotone in s, so its extremes sit at the end points
        for s in [a, b] {
            if self.f(s, horizon, q) * ymax > EXP_LIMIT {
                return Err(Error::Overflow { q });
            }
        }
        integrate(|s| self.lambda * self.kappa(self.f(s, horizon, q)).unwrap_or(f64::INFINITY), a, b, QUAD_RTOL)
    }
}

/// `ln E[e^{q X_T} | F_t]` given `X_t` and `sigma_t^2`.
pub fn bns_laplace(params: &BnsParams, t: f64, horizon: f64, q: f64, x_t: f64, sigma_t_sq: f64) -> Result<f64> {
    params.validate()?;
    if !(t < horizon) {
        return Err(Error::InvalidParams(format!("need t < T, got t = {t}, T = {horizon}")));
    }
    let gauss = q * (x_t + params.m * (horizon - t))
        + 0.5 * (q * q + 2.0 * params.beta * q) * params.eps(t, horizon) * sigma_t_sq;
    Ok(gauss + params.kappa_integral(t, horizon, horizon, q)?)
}

/// An observed move over `[t, t+h]`: the log-price increment and the change in
/// `eps(., T) sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathIncrement {
    pub dx: f64,
    pub d_eps_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnsTailsReport {
    /// `(q, bracket)` per path sample.
    pub brackets: Vec<Vec<(f64, f64)>>,
    /// Every bracket at the largest `|q|` on both rays is below `-limit`.
    pub diverges: bool,
    /// Coefficient of `q^6` in the polynomial lower bound of the cumulant integral.
    pub q6_coefficient: f64,
    /// First `q` at which the cumulant overflowed, if any.
    pub overflow: Option<f64>,
}

/// `q (dX - m h) + (q^2 + 2 beta q)/2 · d(eps sigma^2) - ∫_t^{t+h} lambda kappa(f(s, q)) ds`.
pub fn bns_bracket(params: &BnsParams, t: f64, h: f64, horizon: f64, inc: PathIncrement, q: f64) -> Result<f64> {
    let lin = q * (inc.dx - params.m * h) + 0.5 * (q * q + 2.0 * params.beta * q) * inc.d_eps_var;
    Ok(lin - params.kappa_integral(t, t + h, horizon, q)?)
}

/// `(1/48) lambda ∫_t^{t+h} eps(s, T)^3 ds · sum_k mass_k y_k^3`.
pub fn q6_coefficient(params: &BnsParams, t: f64, h: f64, horizon: f64) -> Result<f64> {
    let moment: f64 = params.subordinator.jumps.iter().map(|&(y, mass)| mass * y.powi(3)).sum();
    let time = integrate(|s| params.eps(s, horizon).powi(3), t, t + h, QUAD_RTOL)?;
    Ok(params.lambda * time * moment / 48.0)
}

/// Brackets for every sampled increment along `±q_schedule`; `diverges` uses
/// the threshold `-limit` at the last magnitude.
pub fn bns_tails_check(
    params: &BnsParams,
    t: f64,
    h: f64,
    horizon: f64,
    path_sample: &[PathIncrement],
    q_schedule: &[f64],
    limit: f64,
) -> Result<BnsTailsReport> {
    params.validate()?;
    if !(h > 0.0) || t + h > horizon {
        return Err(Error::InvalidParams(format!("need h > 0 and t + h <= T, got t = {t}, h = {h}, T = {horizon}")));
    }
    let qmax = q_schedule.iter().fold(0.0f64, |a, q| a.max(q.abs()));
    let mut overflow = None;
    let mut diverges = true;
    let mut brackets = Vec::with_capacity(path_sample.len());
    for inc in path_sample {
        let mut trace = Vec::new();
        for &q in q_schedule {
            for sq in [q.abs(), -q.abs()] {
                match bns_bracket(params, t, h, horizon, *inc, sq) {
                    Ok(v) => {
                        if sq.abs() == qmax && !(v < -limit) {
                            diverges = false;
                        }
                        trace.push((sq, v));
                    }
                    Err(_) => {
                        overflow.get_or_insert(sq);
                        diverges = false;
                    }
                }
            }
        }
        brackets.push(trace);
    }
    Ok(BnsTailsReport { brackets, diverges, q6_coefficient: q6_coefficient(params, t, h, horizon)?, overflow })
}

/// Jump times and sizes of `Z_{lambda s}` on `[0, until]`.
fn jumps<R: Rng + ?Sized>(params: &BnsParams, until: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(y, mass) in &params.subordinator.jumps {
        let rate = params.lambda * mass * until;
        let n = if rate > 0.0 { Poisson::new(rate).expect("positive rate").sample(rng) as usize } else { 0 };
        out.extend((0..n).map(|_| (rng.random_range(0.0..until), y)));
    }
    out
}

/// One draw of `X_T` from `X_0 = 0`, `sigma_0^2` as given.
pub fn simulate_terminal<R: Rng + ?Sized>(params: &BnsParams, horizon: f64, rng: &mut R) -> f64 {
    let js = jumps(params, horizon, rng);
    let integrated = params.sigma0_sq * params.eps(0.0, horizon)
        + js.iter().map(|&(s, y)| y * params.eps(s, horizon)).sum::<f64>();
    let total: f64 = js.iter().map(|j| j.1).sum();
    let z: f64 = StandardNormal.sample(rng);
    params.m * horizon + params.beta * integrated + params.rho * total + integrated.sqrt() * z
}

/// One draw of the increment over `[t, t+h]` started from `X_0 = 0`.
pub fn simulate_increment<R: Rng + ?Sized>(params: &BnsParams, t: f64, h: f64, horizon: f64, rng: &mut R) -> PathIncrement {
    let end = t + h;
    let js = jumps(params, end, rng);
    let var_at = |s: f64| {
        params.sigma0_sq * (-params.lambda * s).exp()
            + js.iter().filter(|j| j.0 <= s).map(|&(u, y)| y * (-params.lambda * (s - u)).exp()).sum::<f64>()
    };
    // integrated variance over [t, t+h]: sigma_t^2 eps_h(t) + sum y eps_h(u) for jumps in (t, t+h]
    let eps_h = |s: f64| -(-params.lambda * (end - s)).exp_m1() / params.lambda;
    let integrated = var_at(t) * eps_h(t) + js.iter().filter(|j| j.0 > t).map(|&(u, y)| y * eps_h(u)).sum::<f64>();
    let jump_sum: f64 = js.iter().filter(|j| j.0 > t).map(|j| j.1).sum();
    let z: f64 = StandardNormal.sample(rng);
    let dx = params.m * h + params.beta * integrated + params.rho * jump_sum + integrated.sqrt() * z;
    PathIncrement {
        dx,
        d_eps_var: params.eps(end, horizon) * var_at(end) - params.eps(t, horizon) * var_at(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn generic() -> BnsParams {
        BnsParams::new(0.0, -0.5, 1.0, -0.3, 0.04, vec![(0.1, 1.0)]).unwrap()
    }

    #[test]
    fn zero_exponent_at_zero() {
        assert_eq!(bns_laplace(&generic(), 0.0, 1.0, 0.0, 0.3, 0.05).unwrap(), 0.0);
        let inc = PathIncrement { dx: 0.2, d_eps_var: -0.01 };
        assert_eq!(bns_bracket(&generic(), 0.0, 0.5, 1.0, inc, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_reduction_matches_lognormal_moment() {
        let p = BnsParams::new(0.1, -0.5, 3.0, -0.2, 0.09, vec![]).unwrap();
        for q in [-2.0, 0.5, 3.0] {
            let eps = (1.0 - (-3.0f64 * 0.75).exp()) / 3.0;
            let var = 0.09 * eps;
            let expected = q * (0.2 + 0.1 * 0.75) + (-0.5 * q + 0.5 * q * q) * var;
            let got = bns_laplace(&p, 0.25, 1.0, q, 0.2, 0.09).unwrap();
            assert!((got - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn q6_coefficient_closed_form() {
        let p = generic();
        // ∫_0^1 (1 - e^{-(1-s)})^3 ds = ∫_0^1 (1 - e^{-u})^3 du
        let exact = 1.0 - 3.0 * (1.0 - (-1.0f64).exp()) + 1.5 * (1.0 - (-2.0f64).exp()) - (1.0 - (-3.0f64).exp()) / 3.0;
        let c = q6_coefficient(&p, 0.0, 1.0, 1.0).unwrap();
        assert!((c - exact * 1e-3 / 48.0).abs() < 1e-15);
        assert!(c > 0.0);
    }

    #[test]
    fn monte_carlo_agrees_for_moderate_q() {
        let p = generic();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..200_000).map(|_| simulate_terminal(&p, 1.0, &mut rng)).collect();
        for q in [-1.0, 1.0] {
            let vals: Vec<f64> = xs.iter().map(|x| (q * x).exp()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let exact = bns_laplace(&p, 0.0, 1.0, q, 0.0, p.sigma0_sq).unwrap().exp();
            assert!((mean - exact).abs() < 3.0 * sd / n.sqrt(), "q = {q}: {mean} vs {exact}");
        }
    }

    #[test]
    fn brackets_diverge_at_fifty() {
        let p = generic();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sample: Vec<PathIncrement> = (0..20).map(|_| simulate_increment(&p, 0.2, 0.5, 1.0, &mut rng)).collect();
        let r = bns_tails_check(&p, 0.2, 0.5, 1.0, &sample, &[1.0, 10.0, 50.0], 1e3).unwrap();
        assert!(r.diverges && r.overflow.is_none() && r.q6_coefficient > 0.0);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(BnsParams::new(0.0, 0.0, 1.0, 0.3, 0.04, vec![]).is_err());
        assert!(BnsParams::new(0.0, 0.0, 1.0, -0.3, 0.04, vec![(-0.1, 1.0)]).is_err());
        assert!(bns_laplace(&generic(), 1.0, 1.0, 1.0, 0.0, 0.04).is_err());
    }
}

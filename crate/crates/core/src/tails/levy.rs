//! Lévy exponents of diffusion plus finite-activity jumps and the decay of
//! `exp(q Δ - h f(q))` along both rays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::EXP_LIMIT;

/// Drift `b`, diffusion coefficient `c` and a jump measure with finitely many
/// atoms `(x, mass)`, truncation function `x 1{|x| < 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyTriplet {
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub jumps: Vec<(f64, f64)>,
}

impl LevyTriplet {
    pub fn new(b: f64, c: f64, jumps: Vec<(f64, f64)>) -> Result<Self> {
        let t = Self { b, c, jumps };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.b.is_finite() || !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParams(format!("need finite drift and c >= 0, got b = {}, c = {}", self.b, self.c)));
        }
        for &(x, m) in &self.jumps {
            if x == 0.0 || !x.is_finite() || !(m > 0.0 && m.is_finite()) {
                return Err(Error::InvalidParams(format!("jump atom ({x}, {m}) needs x != 0 and mass > 0")));
            }
        }
        if self.c == 0.0 && self.jumps.is_empty() {
            return Err(Error::InvalidParams("deterministic triplet: need c > 0 or a jump".into()));
        }
        Ok(())
    }
}

/// `f(q) = b q + c q^2 / 2 + sum_k mass_k (e^{q x_k} - 1 - q x_k 1{|x_k| < 1})`.
pub fn levy_exponent(triplet: &LevyTriplet, q: f64) -> Result<f64> {
    let mut f = triplet.b * q + 0.5 * triplet.c * q * q;
    for &(x, m) in &triplet.jumps {
        if q * x > EXP_LIMIT {
            return Err(Error::Overflow { q });
        }
        let comp = if x.abs() < 1.0 { q * x } else { 0.0 };
        f += m * ((q * x).exp_m1() - comp);
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RayBehaviour {
    /// Jumps towards the ray make the exponent grow exponentially.
    Exponential,
    /// The diffusion makes it grow quadratically.
    Quadratic,
    /// Only linear growth: decay depends on the increment.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayReport {
    pub behaviour: RayBehaviour,
    /// For linear growth, the increment threshold: decay iff `Δ < threshold`
    /// on the positive ray and `Δ > threshold` on the negative ray.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub delta: f64,
    /// `(q, q Δ - h f(q))` along the positive ray, stopped at the first overflow.
    pub positive: Vec<(f64, f64)>,
    pub negative: Vec<(f64, f64)>,
    pub decays_positive: bool,
    pub decays_negative: bool,
    /// First `q` at which the exponent overflowed, if any.
    pub overflow: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevyTailsReport {
    pub h: f64,
    pub positive_ray: RayReport,
    pub negative_ray: RayReport,
    pub samples: Vec<SampleOutcome>,
}

fn classify(triplet: &LevyTriplet, h: f64, sign: f64) -> RayReport {
    if triplet.jumps.iter().any(|&(x, _)| x * sign > 0.0) {
        return RayReport { behaviour: RayBehaviour::Exponential, threshold: None };
    }
    if triplet.c > 0.0 {
        return RayReport { behaviour: RayBehaviour::Quadratic, threshold: None };
    }
    // f(q) = q (b - sum_{|x|<1} mass x) + O(1) along this ray
    let small: f64 = triplet.jumps.iter().filter(|(x, _)| x.abs() < 1.0).map(|(x, m)| m * x).sum();
    RayReport { behaviour: RayBehaviour::Linear, threshold: Some(h * (triplet.b - small)) }
}

/// Evaluates `q Δ - h f(q)` for every increment sample and both rays, and
/// decides decay from the asymptotic growth of `f` on each ray.
pub fn levy_tails_check(
    triplet: &LevyTriplet,
    h: f64,
    samples: &[f64],
    q_schedule: &[f64],
) -> Result<LevyTailsReport> {
    triplet.validate()?;
    if !(h > 0.0) {
        return Err(Error::InvalidParams(format!("step h = {h} must be positive")));
    }
    let positive_ray = classify(triplet, h, 1.0);
    let negative_ray = classify(triplet, h, -1.0);
    let decays = |ray: &RayReport, delta: f64, sign: f64| match ray.threshold {
        None => true,
        Some(th) => {
            if sign > 0.0 {
                delta < th
            } else {
                delta > th
            }
        }
    };
    let samples = samples
        .iter()
        .map(|&delta| {
            let mut overflow = None;
            let mut trace = |sign: f64| {
                let mut out = Vec::new();
                for &q in q_schedule {
                    let q = sign * q.abs();
                    match levy_exponent(triplet, q) {
                        Ok(f) => out.push((q, q * delta - h * f)),
                        Err(_) => {
                            overflow.get_or_insert(q);
                            break;
                        }
                    }
                }
                out
            };
            let positive = trace(1.0);
            let negative = trace(-1.0);
            SampleOutcome {
                delta,
                positive,
                negative,
                decays_positive: decays(&positive_ray, delta, 1.0),
                decays_negative: decays(&negative_ray, delta, -1.0),
                overflow,
            }
        })
        .collect();
    Ok(LevyTailsReport { h, positive_ray, negative_ray, samples })
}

//! Market-maker utility functions.
//!
//! Every utility is strictly concave, strictly increasing, vanishes at
//! `+inf`, and has absolute risk aversion `a(x) = -u''(x)/u'(x)` inside
//! `[1/c, c]`. Evaluation goes through `ln(-u)` and `ln(u')` so that very
//! negative wealth levels do not overflow.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp};

/// Exponent magnitude at which `exp` overflows a double.
pub const EXP_LIMIT: f64 = 700.0;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied utility given as `u`, `u'`, `u''` callables.
#[derive(Clone)]
pub struct CustomUtility {
    pub value: ScalarFn,
    pub marginal: ScalarFn,
    pub curvature: ScalarFn,
    /// Arguments are clamped to `[-domain, domain]`.
    pub domain: f64,
}

impl fmt::Debug for CustomUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomUtility").field("domain", &self.domain).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum UtilityKind {
    /// `u(x) = -exp(-alpha x)`.
    Exponential { alpha: f64 },
    /// `u(x) = -sum_k w_k exp(-a_k x)`, atoms stored as `(a_k, w_k)`.
    Mixture { atoms: Vec<(f64, f64)> },
    Custom(CustomUtility),
}

#[derive(Debug, Clone)]
pub struct UtilitySpec {
    kind: UtilityKind,
    risk_aversion_bound: f64,
    stabilization: Option<(f64, f64)>,
}

impl UtilitySpec {
    pub fn exponential(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidUtility(format!("exponential alpha must be positive, got {alpha}")));
        }
        Ok(Self {
            kind: UtilityKind::Exponential { alpha },
            risk_aversion_bound: alpha.max(1.0 / alpha),
            stabilization: Some((alpha, alpha)),
        })
    }

    /// Mixture of exponentials; atoms are `(risk_aversion, weight)` pairs.
    pub fn mixture(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidUtility("mixture needs at least one atom".into()));
        }
        for &(a, w) in &atoms {
            if !(a.is_finite() && a > 0.0 && w.is_finite() && w > 0.0) {
                return Err(Error::InvalidUtility(format!(
                    "mixture atom ({a}, {w}) must have positive risk aversion and weight"
                )));
            }
        }
        let lo = atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
        let hi = atoms.iter().map(|a| a.0).fold(0.0, f64::max);
        Ok(Self {
            kind: UtilityKind::Mixture { atoms },
            risk_aversion_bound: hi.max(1.0 / lo),
            stabilization: Some((lo, hi)),
        })
    }

    /// Custom utility. The clamp domain is `[-700/c, 700/c]`; the invariants
    /// are sampled on a grid over that domain.
    pub fn custom(
        value: ScalarFn,
        marginal: ScalarFn,
        curvature: ScalarFn,
        risk_aversion_bound: f64,
        stabilization: Option<(f64, f64)>,
    ) -> Result<Self> {
        if !(risk_aversion_bound.is_finite() && risk_aversion_bound >= 1.0) {
            return Err(Error::InvalidUtility(format!(
                "risk-aversion bound c must satisfy c >= 1, got {risk_aversion_bound}"
            )));
        }
        if let Some((lo, hi)) = stabilization {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidUtility(format!(
                    "stabilization levels must satisfy 0 < a_lower <= a_upper, got ({lo}, {hi})"
                )));
            }
        }
        let spec = Self {
            kind: UtilityKind::Custom(CustomUtility {
                value,
                marginal,
                curvature,
                domain: EXP_LIMIT / risk_aversion_bound,
            }),
            risk_aversion_bound,
            stabilization,
        };
        let d = EXP_LIMIT / risk_aversion_bound;
        spec.check_invariants(&numeric::linspace(-d, d, 2001))?;
        Ok(spec)
    }

    pub fn kind(&self) -> &UtilityKind {
        &self.kind
    }

    /// The constant `c` with `1/c <= a(x) <= c`.
    pub fn risk_aversion_bound(&self) -> f64 {
        self.risk_aversion_bound
    }

    pub fn stabilization(&self) -> Option<(f64, f64)> {
        self.stabilization
    }

    /// Largest risk aversion the utility can exhibit.
    pub fn max_risk_aversion(&self) -> f64 {
        match &self.kind {
            UtilityKind::Exponential { alpha } => *alpha,
            UtilityKind::Mixture { atoms } => atoms.iter().map(|a| a.0).fold(0.0, f64::max),
            UtilityKind::Custom(_) => self.risk_aversion_bound,
        }
    }

    fn clamp(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Custom(c) => x.clamp(-c.domain, c.domain),
            _ => x,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Custom(c) => (c.value)(self.clamp(x)),
            _ => -self.ln_neg_value(x).exp(),
        }
    }

    pub fn marginal(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Custom(c) => (c.marginal)(self.clamp(x)),
            _ => self.ln_marginal(x).exp(),
        }
    }

    pub fn curvature(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Exponential { alpha } => -alpha * alpha * (-alpha * x).exp(),
            UtilityKind::Mixture { atoms } => -log_sum_exp(
                atoms.iter().map(|&(a, w)| (w * a * a).ln() - a * x),
            )
            .exp(),
            UtilityKind::Custom(c) => (c.curvature)(self.clamp(x)),
        }
    }

    /// `ln(-u(x))`.
    pub fn ln_neg_value(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Exponential { alpha } => -alpha * x,
            UtilityKind::Mixture { atoms } => log_sum_exp(atoms.iter().map(|&(a, w)| w.ln() - a * x)),
            UtilityKind::Custom(c) => (-(c.value)(self.clamp(x))).ln(),
        }
    }

    /// `ln(u'(x))`.
    pub fn ln_marginal(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Exponential { alpha } => alpha.ln() - alpha * x,
            UtilityKind::Mixture { atoms } => log_sum_exp(atoms.iter().map(|&(a, w)| (w * a).ln() - a * x)),
            UtilityKind::Custom(c) => (c.marginal)(self.clamp(x)).ln(),
        }
    }

    /// Absolute risk aversion `-u''(x)/u'(x)`.
    pub fn risk_aversion(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Exponential { alpha } => *alpha,
            UtilityKind::Mixture { atoms } => {
                let logits: Vec<f64> = atoms.iter().map(|&(a, w)| (w * a).ln() - a * x).collect();
                numeric::softmax(&logits)
                    .iter()
                    .zip(atoms)
                    .map(|(p, &(a, _))| p * a)
                    .sum()
            }
            UtilityKind::Custom(c) => {
                let y = self.clamp(x);
                -(c.curvature)(y) / (c.marginal)(y)
            }
        }
    }

    /// Solves `ln u'(y) = ln_lambda` for `y`.
    pub fn inverse_marginal(&self, ln_lambda: f64) -> Result<f64> {
        match &self.kind {
            UtilityKind::Exponential { alpha } => Ok((alpha.ln() - ln_lambda) / alpha),
            _ => {
                let c = self.risk_aversion_bound;
                let g = |y: f64| (self.ln_marginal(y) - ln_lambda, -self.risk_aversion(y));
                let g0 = g(0.0).0;
                if !g0.is_finite() {
                    return Err(Error::NonConvergence(format!(
                        "marginal utility not finite while inverting at ln(lambda) = {ln_lambda}"
                    )));
                }
                // slope of ln u' lies in [-c, -1/c], so the root is within |g0| c of 0
                let r = g0.abs() * c * 1.01 + 1e-9;
                let y = numeric::newton_bracketed(g, -r, r, 0.0, 1e-15, 0.0)?;
                if let UtilityKind::Custom(cu) = &self.kind {
                    if y.abs() > cu.domain {
                        return Err(Error::NonConvergence(format!(
                            "inverse marginal {y} outside the clamp domain {}",
                            cu.domain
                        )));
                    }
                }
                Ok(y)
            }
        }
    }

    /// Samples the utility invariants on `grid`.
    pub fn check_invariants(&self, grid: &[f64]) -> Result<()> {
        let c = self.risk_aversion_bound;
        let tol = 1e-9;
        for &x in grid {
            let (u, du, d2u) = (self.value(x), self.marginal(x), self.curvature(x));
            if !(u < 0.0 && du > 0.0 && d2u < 0.0) {
                return Err(Error::InvalidUtility(format!(
                    "shape violated at x = {x}: u = {u}, u' = {du}, u'' = {d2u}"
                )));
            }
            let a = self.risk_aversion(x);
            if a < (1.0 / c) * (1.0 - tol) || a > c * (1.0 + tol) {
                return Err(Error::InvalidUtility(format!(
                    "risk aversion {a} at x = {x} outside [1/{c}, {c}]"
                )));
            }
        }
        Ok(())
    }
}

/// Serialized utility, e.g. `{kind = "exponential", alpha = 1.0}` or
/// `{kind = "mixture", atoms = [[1.0, 1.0], [2.0, 0.5]]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilityConfig {
    Exponential { alpha: f64 },
    Mixture { atoms: Vec<[f64; 2]> },
}

impl TryFrom<UtilityConfig> for UtilitySpec {
    type Error = Error;

    fn try_from(cfg: UtilityConfig) -> Result<Self> {
        match cfg {
            UtilityConfig::Exponential { alpha } => UtilitySpec::exponential(alpha),
            UtilityConfig::Mixture { atoms } => {
                UtilitySpec::mixture(atoms.into_iter().map(|[a, w]| (a, w)).collect())
            }
        }
    }
}

impl UtilitySpec {
    /// Serializable form; `None` for custom utilities.
    pub fn to_config(&self) -> Option<UtilityConfig> {
        match &self.kind {
            UtilityKind::Exponential { alpha } => Some(UtilityConfig::Exponential { alpha: *alpha }),
            UtilityKind::Mixture { atoms } => Some(UtilityConfig::Mixture {
                atoms: atoms.iter().map(|&(a, w)| [a, w]).collect(),
            }),
            UtilityKind::Custom(_) => None,
        }
    }
}

impl<'de> Deserialize<'de> for UtilitySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let cfg = UtilityConfig::deserialize(d)?;
        UtilitySpec::try_from(cfg).map_err(serde::de::Error::custom)
    }
}

impl Serialize for UtilitySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.to_config() {
            Some(cfg) => cfg.serialize(s),
            None => Err(serde::ser::Error::custom("custom utilities cannot be serialized")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix() -> UtilitySpec {
        UtilitySpec::mixture(vec![(1.0, 1.0), (3.0, 0.5)]).unwrap()
    }

    #[test]
    fn exponential_basics() {
        let u = UtilitySpec::exponential(2.0).unwrap();
        assert_eq!(u.value(0.0), -1.0);
        assert!((u.marginal(1.0) - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(u.risk_aversion(-40.0), 2.0);
        assert_eq!(u.stabilization(), Some((2.0, 2.0)));
        assert_eq!(u.risk_aversion_bound(), 2.0);
        assert_eq!(UtilitySpec::exponential(0.25).unwrap().risk_aversion_bound(), 4.0);
    }

    #[test]
    fn mixture_shape_and_stabilization() {
        let u = mix();
        u.check_invariants(&numeric::linspace(-50.0, 50.0, 501)).unwrap();
        assert_eq!(u.stabilization(), Some((1.0, 3.0)));
        assert!((u.risk_aversion(-50.0) - 3.0).abs() < 1e-12);
        assert!((u.risk_aversion(50.0) - 1.0).abs() < 1e-12);
        let x = 0.7;
        assert!((u.value(x) - (-(-x).exp() - 0.5 * (-3.0 * x).exp())).abs() < 1e-15);
        assert!((u.curvature(x) - (-(-x).exp() - 4.5 * (-3.0 * x).exp())).abs() < 1e-14);
    }

    #[test]
    fn log_domain_survives_deep_losses() {
        let u = mix();
        let l = u.ln_neg_value(-5000.0);
        assert!(l.is_finite() && (l - (0.5f64.ln() + 15000.0)).abs() < 1e-9);
    }

    #[test]
    fn inverse_marginal_roundtrip() {
        for u in [UtilitySpec::exponential(0.5).unwrap(), mix()] {
            for y in [-30.0, -1.0, 0.0, 2.5, 40.0] {
                let back = u.inverse_marginal(u.ln_marginal(y)).unwrap();
                assert!((back - y).abs() < 1e-10, "{y} -> {back}");
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(UtilitySpec::exponential(0.0).is_err());
        assert!(UtilitySpec::mixture(vec![]).is_err());
        assert!(UtilitySpec::mixture(vec![(1.0, -1.0)]).is_err());
    }

    #[test]
    fn custom_utility_is_checked() {
        let ok = UtilitySpec::custom(
            Arc::new(|x: f64| -(-x).exp()),
            Arc::new(|x: f64| (-x).exp()),
            Arc::new(|x: f64| -(-x).exp()),
            1.0,
            Some((1.0, 1.0)),
        )
        .unwrap();
        assert!((ok.inverse_marginal(0.0).unwrap()).abs() < 1e-12);
        // risk aversion 2 violates c = 1
        let bad = UtilitySpec::custom(
            Arc::new(|x: f64| -(-2.0 * x).exp()),
            Arc::new(|x: f64| 2.0 * (-2.0 * x).exp()),
            Arc::new(|x: f64| -4.0 * (-2.0 * x).exp()),
            1.0,
            None,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn config_roundtrip() {
        let u: UtilitySpec = serde_json::from_str(r#"{"kind":"mixture","atoms":[[1.0,1.0],[2.0,0.5]]}"#).unwrap();
        assert_eq!(u.stabilization(), Some((1.0, 2.0)));
        let s = serde_json::to_string(&u).unwrap();
        assert_eq!(s, r#"{"kind":"mixture","atoms":[[1.0,1.0],[2.0,0.5]]}"#);
        let e: UtilitySpec = serde_json::from_str(r#"{"kind":"exponential","alpha":1.0}"#).unwrap();
        assert_eq!(e.value(0.0), -1.0);
        assert!(serde_json::from_str::<UtilitySpec>(r#"{"kind":"exponential","alpha":-1.0}"#).is_err());
    }
}

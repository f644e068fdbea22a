//! Representative agent, Pareto allocations and the exponential comparison
//! bounds for stabilizing risk aversion.
//!
//! The sup-convolution `r(v, x) = sup { sum_m v_m u_m(x_m) : sum_m x_m = x }`
//! is solved through its multiplier: with `mu = ln lambda`, each share is
//! `x_m = (u'_m)^{-1}(lambda / v_m)` and `mu` is found from the budget
//! identity, which is strictly decreasing in `mu`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp};
use crate::tree::ScenarioTree;
use crate::utility::{UtilityKind, UtilitySpec};

#[derive(Debug, Clone)]
pub struct MarketMakerPanel {
    makers: Vec<UtilitySpec>,
    initial_allocation: Vec<f64>,
    endowment_base: f64,
    endowment_position: Vec<f64>,
}

/// TOML/JSON form of a panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelConfig {
    pub makers: Vec<UtilitySpec>,
    #[serde(default)]
    pub initial_allocation: Option<Vec<f64>>,
    #[serde(default)]
    pub endowment_base: f64,
    #[serde(default)]
    pub endowment_position: Vec<f64>,
}

impl MarketMakerPanel {
    /// `initial_allocation` must split `endowment_base`; an empty
    /// `endowment_position` means no initial security holdings.
    pub fn new(
        makers: Vec<UtilitySpec>,
        initial_allocation: Vec<f64>,
        endowment_base: f64,
        endowment_position: Vec<f64>,
    ) -> Result<Self> {
        if makers.is_empty() {
            return Err(Error::InvalidParams("panel needs at least one market maker".into()));
        }
        if initial_allocation.len() != makers.len() {
            return Err(Error::InvalidParams(format!(
                "initial allocation has {} entries for {} makers",
                initial_allocation.len(),
                makers.len()
            )));
        }
        let total: f64 = initial_allocation.iter().sum();
        if !endowment_base.is_finite() || (total - endowment_base).abs() > 1e-9 * (1.0 + endowment_base.abs()) {
            return Err(Error::InvalidParams(format!(
                "initial allocation sums to {total}, endowment base is {endowment_base}"
            )));
        }
        Ok(Self { makers, initial_allocation, endowment_base, endowment_position })
    }

    /// Panel with zero endowment and zero initial wealth for every maker.
    pub fn unendowed(makers: Vec<UtilitySpec>) -> Result<Self> {
        let m = makers.len();
        Self::new(makers, vec![0.0; m], 0.0, Vec::new())
    }

    /// Single maker with exponential utility and no endowment.
    pub fn single_exponential(alpha: f64) -> Result<Self> {
        Self::unendowed(vec![UtilitySpec::exponential(alpha)?])
    }

    pub fn from_config(cfg: PanelConfig) -> Result<Self> {
        let alloc = match cfg.initial_allocation {
            Some(a) => a,
            None => {
                let ones = vec![1.0; cfg.makers.len()];
                solve_allocation(&cfg.makers, &ones, cfg.endowment_base)?.0
            }
        };
        Self::new(cfg.makers, alloc, cfg.endowment_base, cfg.endowment_position)
    }

    pub fn to_config(&self) -> PanelConfig {
        PanelConfig {
            makers: self.makers.clone(),
            initial_allocation: Some(self.initial_allocation.clone()),
            endowment_base: self.endowment_base,
            endowment_position: self.endowment_position.clone(),
        }
    }

    pub fn makers(&self) -> &[UtilitySpec] {
        &self.makers
    }

    pub fn len(&self) -> usize {
        self.makers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.makers.is_empty()
    }

    pub fn initial_allocation(&self) -> &[f64] {
        &self.initial_allocation
    }

    pub fn endowment_base(&self) -> f64 {
        self.endowment_base
    }

    pub fn endowment_position(&self) -> &[f64] {
        &self.endowment_position
    }

    /// Common risk-aversion bound `c` of the panel.
    pub fn risk_aversion_bound(&self) -> f64 {
        self.makers.iter().map(|m| m.risk_aversion_bound()).fold(1.0, f64::max)
    }

    /// Total initial endowment `Σ_0 = base + <q_0, psi>` for payoff `psi`.
    pub fn endowment(&self, psi: &[f64]) -> f64 {
        self.endowment_base
            + self.endowment_position.iter().zip(psi).map(|(q, p)| q * p).sum::<f64>()
    }

    /// Weights `v_0` supporting the initial allocation, normalized to `v_0^1 = 1`.
    pub fn initial_weights(&self) -> Vec<f64> {
        let ref_ln = self.makers[0].ln_marginal(self.initial_allocation[0]);
        self.makers
            .iter()
            .zip(&self.initial_allocation)
            .map(|(u, &a)| (ref_ln - u.ln_marginal(a)).exp())
            .collect()
    }

    /// Initial expected utilities `u_0^m = E[u_m(alpha_0^m)]`, where `alpha_0` is
    /// the Pareto allocation of `Σ_0` under the initial weights.
    pub fn initial_levels(&self, tree: &ScenarioTree) -> Result<Vec<f64>> {
        let v0 = self.initial_weights();
        let root = tree.root();
        let probs = tree.conditional_leaf_probs(root);
        let mut acc: Vec<Vec<f64>> = vec![Vec::with_capacity(probs.len()); self.len()];
        for (pos, p) in tree.leaf_range(root).zip(&probs) {
            let total = self.endowment(tree.payoff(pos));
            let (shares, _) = solve_allocation(&self.makers, &v0, total)?;
            for (m, u) in self.makers.iter().enumerate() {
                acc[m].push(p.ln() + u.ln_neg_value(shares[m]));
            }
        }
        Ok(acc.into_iter().map(|terms| -log_sum_exp(terms).exp()).collect())
    }
}

/// Maximizer of the representative agent's problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoAllocation {
    pub shares: Vec<f64>,
    /// Common marginal value `lambda = v_m u'_m(x_m) = ∂_x r(v, x)`.
    pub multiplier: f64,
    /// `r(v, x)`.
    pub value: f64,
}

/// Pareto shares for weights `v` and total wealth `total`, together with
/// `ln lambda`.
pub(crate) fn solve_allocation(makers: &[UtilitySpec], v: &[f64], total: f64) -> Result<(Vec<f64>, f64)> {
    if makers.len() == 1 {
        let ln_lambda = v[0].ln() + makers[0].ln_marginal(total);
        return Ok((vec![total], ln_lambda));
    }
    let ln_v: Vec<f64> = v.iter().map(|w| w.ln()).collect();

    // all exponential: shares are affine in mu and the budget solves exactly
    let alphas: Option<Vec<f64>> = makers
        .iter()
        .map(|u| match u.kind() {
            UtilityKind::Exponential { alpha } => Some(*alpha),
            _ => None,
        })
        .collect();
    if let Some(alphas) = alphas {
        let inv_sum: f64 = alphas.iter().map(|a| 1.0 / a).sum();
        let num: f64 = alphas.iter().zip(&ln_v).map(|(a, lv)| (a.ln() + lv) / a).sum();
        let mu = (num - total) / inv_sum;
        let shares = alphas.iter().zip(&ln_v).map(|(a, lv)| (a.ln() + lv - mu) / a).collect();
        return Ok((shares, mu));
    }

    let c = makers.iter().map(|u| u.risk_aversion_bound()).fold(1.0, f64::max);
    let m = makers.len() as f64;
    let budget = |mu: f64| -> Result<(f64, f64)> {
        let mut sum = 0.0;
        let mut slope = 0.0;
        for (u, lv) in makers.iter().zip(&ln_v) {
            let y = u.inverse_marginal(mu - lv)?;
            sum += y;
            slope -= 1.0 / u.risk_aversion(y);
        }
        Ok((sum - total, slope))
    };
    // start from the exponential proxy with risk aversions taken at total/M
    let proxy: Vec<f64> = makers.iter().map(|u| u.risk_aversion(total / m)).collect();
    let inv_sum: f64 = proxy.iter().map(|a| 1.0 / a).sum();
    let mu0 = (proxy.iter().zip(&ln_v).zip(makers).map(|((a, lv), u)| (u.ln_marginal(total / m) + lv + a * total / m) / a).sum::<f64>() - total)
        / inv_sum;
    let (h0, _) = budget(mu0)?;
    // |d budget / d mu| >= M / c
    let r = h0.abs() * c / m * 1.01 + 1e-12;
    let mut err = None;
    let mu = numeric::newton_bracketed(
        |mu| match budget(mu) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                (f64::NAN, f64::NAN)
            }
        },
        mu0 - r,
        mu0 + r,
        mu0,
        1e-15,
        1e-13 * (1.0 + total.abs()),
    );
    if let Some(e) = err {
        return Err(e);
    }
    let mu = mu?;
    let mut shares: Vec<f64> = makers
        .iter()
        .zip(&ln_v)
        .map(|(u, lv)| u.inverse_marginal(mu - lv))
        .collect::<Result<_>>()?;
    // absorb the last rounding residue into the least risk-averse share
    let resid = total - shares.iter().sum::<f64>();
    let k = (0..shares.len())
        .max_by(|&i, &j| {
            let ai = makers[i].risk_aversion(shares[i]);
            let aj = makers[j].risk_aversion(shares[j]);
            aj.total_cmp(&ai)
        })
        .unwrap_or(0);
    shares[k] += resid;
    Ok((shares, mu))
}

fn check_weights(v: &[f64], panel: &MarketMakerPanel) -> Result<()> {
    if v.len() != panel.len() {
        return Err(Error::InvalidParams(format!("{} weights for {} makers", v.len(), panel.len())));
    }
    if v.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidParams("weights must be strictly positive".into()));
    }
    Ok(())
}

/// Pareto allocation of wealth `x` under weights `v`, with `r(v, x)`.
pub fn representative_utility(v: &[f64], x: f64, panel: &MarketMakerPanel) -> Result<ParetoAllocation> {
    check_weights(v, panel)?;
    let (shares, ln_lambda) = solve_allocation(panel.makers(), v, x)?;
    let value = panel
        .makers()
        .iter()
        .zip(v)
        .zip(&shares)
        .map(|((u, w), s)| w * u.value(*s))
        .sum();
    Ok(ParetoAllocation { shares, multiplier: ln_lambda.exp(), value })
}

/// Absolute risk aversion of the representative agent,
/// `a_r = 1 / sum_m 1/a_m(x_m)` at the Pareto shares.
pub fn representative_risk_aversion(v: &[f64], x: f64, panel: &MarketMakerPanel) -> Result<f64> {
    let alloc = representative_utility(v, x, panel)?;
    let tol: f64 = panel
        .makers()
        .iter()
        .zip(&alloc.shares)
        .map(|(u, s)| 1.0 / u.risk_aversion(*s))
        .sum();
    Ok(1.0 / tol)
}

/// Weights `v_0` making `v_0^m u'_m(alpha_0^m)` equal across makers, `v_0^1 = 1`.
pub fn initial_weights(panel: &MarketMakerPanel) -> Vec<f64> {
    panel.initial_weights()
}

/// Envelope `-e^{-a_lower x} - e^{-a_upper x}` of a stabilizing utility.
pub fn exponential_envelope(spec: &UtilitySpec, x: f64) -> Result<f64> {
    let (lo, hi) = spec.stabilization().ok_or(Error::StabilizationMissing)?;
    Ok(-(-lo * x).exp() - (-hi * x).exp())
}

/// Extremes of `u(x) / (-e^{-a_lower x} - e^{-a_upper x})` over `grid`, returned
/// as `(C1, C2)` with `C1 <= C2`. Every grid point satisfies
/// `C1 <= u(x)/envelope(x) <= C2`, i.e. `C2·env <= u <= C1·env`.
pub fn lemma2_bounds(spec: &UtilitySpec, grid: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = spec.stabilization().ok_or(Error::StabilizationMissing)?;
    if grid.is_empty() {
        return Err(Error::InvalidParams("empty grid".into()));
    }
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::NEG_INFINITY;
    for &x in grid {
        // ratio in log form: ln(-u) - ln(e^{-lo x} + e^{-hi x})
        let ratio = (spec.ln_neg_value(x) - log_sum_exp([-lo * x, -hi * x])).exp();
        c1 = c1.min(ratio);
        c2 = c2.max(ratio);
    }
    Ok((c1, c2))
}

/// Default comparison grid: `[-50, 50]` in steps of 0.05.
pub fn default_lemma_grid() -> Vec<f64> {
    numeric::linspace(-50.0, 50.0, 2001)
}

/// Constant `C` of the conditional lower bound, from the ratio band
/// `[C1, C2]`: `C = max(C2/C1, C2/C1^{a_lower/a_upper})`.
pub fn lemma3_constant(spec: &UtilitySpec, grid: &[f64]) -> Result<f64> {
    let (lo, hi) = spec.stabilization().ok_or(Error::StabilizationMissing)?;
    let (c1, c2) = lemma2_bounds(spec, grid)?;
    let rho = lo / hi;
    Ok((c2 / c1).max(c2 / c1.powf(rho)))
}

/// `f(y) = y - (-y)^{a_lower/a_upper}` for `y <= 0`.
pub fn lemma3_transform(spec: &UtilitySpec, y: f64) -> Result<f64> {
    let (lo, hi) = spec.stabilization().ok_or(Error::StabilizationMissing)?;
    Ok(y - (-y).max(0.0).powf(lo / hi))
}

/// Lower bound for `E[u(x + Σ) | F_t]` at `node_t` in terms of time-`(t-1)`
/// information at `node_parent`:
/// `C f( E[u(x+Σ)|F_{t-1}] · E[e^{-a_upper Σ}|F_t] / E[e^{-a_upper Σ}|F_{t-1}] )`.
/// `sigma` is leaf-indexed.
pub fn lemma3_lower_bound(
    spec: &UtilitySpec,
    x: f64,
    sigma: &[f64],
    tree: &ScenarioTree,
    node_t: usize,
    node_parent: usize,
) -> Result<f64> {
    let (_, hi) = spec.stabilization().ok_or(Error::StabilizationMissing)?;
    if tree.parent(node_t) != Some(node_parent) {
        return Err(Error::InvalidParams(format!(
            "node {} is not a child of {}",
            tree.id(node_t),
            tree.id(node_parent)
        )));
    }
    let c = lemma3_constant(spec, &default_lemma_grid())?;
    let ln_moment = |n: usize| {
        let probs = tree.conditional_leaf_probs(n);
        log_sum_exp(tree.leaf_range(n).zip(&probs).map(|(pos, p)| p.ln() - hi * sigma[pos]))
    };
    let ln_util = {
        let probs = tree.conditional_leaf_probs(node_parent);
        log_sum_exp(
            tree.leaf_range(node_parent)
                .zip(&probs)
                .map(|(pos, p)| p.ln() + spec.ln_neg_value(x + sigma[pos])),
        )
    };
    let y = -(ln_util + ln_moment(node_t) - ln_moment(node_parent)).exp();
    Ok(c * lemma3_transform(spec, y)?)
}

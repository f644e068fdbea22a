//! Completeness and exact replication in binomial trees with a single
//! exponential market maker.
//!
//! The endowment is removed by the change of measure
//! `dP'/dP = exp(-alpha Σ_0) / E[exp(-alpha Σ_0)]`. Under `P'` a claim `H` is
//! replicated from `pi = (1/alpha) ln E'[exp(alpha H)]` by choosing, at every
//! node, the position whose one-step utility ratio
//! `E'[exp(-alpha Q psi) | child] / E'[exp(-alpha Q psi) | node]` equals the
//! ratio of the density martingale `E'[exp(alpha H) | .]`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, investor_pnl, Strategy};
use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp};
use crate::pareto::MarketMakerPanel;
use crate::tree::{ScenarioTree, TreeFile};
use crate::utility::UtilitySpec;

/// Targets closer than this to an endpoint of the attainable ratio range are
/// treated as unattainable.
pub const ENDPOINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct BinomialModel {
    tree: ScenarioTree,
    alpha: f64,
    endowment_base: f64,
    endowment_position: f64,
    /// `ln P'` of each leaf.
    ln_leaf: Vec<f64>,
}

/// JSON form: `{"alpha", "endowment_base", "endowment_position", "tree"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinomialModelFile {
    pub alpha: f64,
    #[serde(default)]
    pub endowment_base: f64,
    #[serde(default)]
    pub endowment_position: Vec<f64>,
    pub tree: TreeFile,
}

impl BinomialModel {
    pub fn new(tree: ScenarioTree, alpha: f64, endowment_base: f64, endowment_position: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParams(format!("risk aversion must be positive, got {alpha}")));
        }
        if tree.securities() != 1 {
            return Err(Error::MultiAssetUnsupported(tree.securities()));
        }
        for n in 0..tree.len() {
            if !tree.is_leaf(n) && tree.children(n).len() != 2 {
                return Err(Error::NotBinomial(format!(
                    "node {} has {} children",
                    tree.id(n),
                    tree.children(n).len()
                )));
            }
        }
        let root_probs = tree.conditional_leaf_probs(tree.root());
        let raw: Vec<f64> = root_probs
            .iter()
            .enumerate()
            .map(|(pos, p)| p.ln() - alpha * (endowment_base + endowment_position * tree.payoff_scalar(pos)))
            .collect();
        let norm = log_sum_exp(raw.iter().copied());
        let ln_leaf = raw.iter().map(|x| x - norm).collect();
        Ok(Self { tree, alpha, endowment_base, endowment_position, ln_leaf })
    }

    /// Model without endowment.
    pub fn unendowed(tree: ScenarioTree, alpha: f64) -> Result<Self> {
        Self::new(tree, alpha, 0.0, 0.0)
    }

    pub fn from_file(file: BinomialModelFile) -> Result<Self> {
        let position = match file.endowment_position.as_slice() {
            [] => 0.0,
            [q] => *q,
            other => return Err(Error::MultiAssetUnsupported(other.len())),
        };
        Self::new(ScenarioTree::from_file(file.tree)?, file.alpha, file.endowment_base, position)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: BinomialModelFile =
            serde_json::from_str(s).map_err(|e| Error::InvalidParams(format!("model JSON: {e}")))?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> BinomialModelFile {
        BinomialModelFile {
            alpha: self.alpha,
            endowment_base: self.endowment_base,
            endowment_position: vec![self.endowment_position],
            tree: self.tree.to_file(),
        }
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The single-maker panel carrying this model's endowment.
    pub fn panel(&self) -> MarketMakerPanel {
        MarketMakerPanel::new(
            vec![UtilitySpec::exponential(self.alpha).expect("alpha validated")],
            vec![self.endowment_base],
            self.endowment_base,
            vec![self.endowment_position],
        )
        .expect("single maker owns the base endowment")
    }

    /// `ln E'[exp(g) | n]` for a leaf-indexed exponent `g`.
    fn ln_cond<F: Fn(usize) -> f64>(&self, n: usize, g: F) -> f64 {
        let range = self.tree.leaf_range(n);
        let ln_mass = log_sum_exp(range.clone().map(|pos| self.ln_leaf[pos]));
        log_sum_exp(range.map(|pos| self.ln_leaf[pos] + g(pos))) - ln_mass
    }

    /// `P'(psi = value | n)`.
    fn atom(&self, n: usize, value: f64) -> f64 {
        let key = numeric::round_sig(value, 12);
        self.ln_cond(n, |pos| {
            if numeric::round_sig(self.tree.payoff_scalar(pos), 12) == key {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completeness {
    pub complete: bool,
    pub violations: Vec<Violation>,
    /// At every non-leaf node at least one child moves an extremum. Reported
    /// only; no solver relies on it.
    pub weak_condition: bool,
}

/// A child node is fine when it moves the lower or the upper conditional
/// extremum of its parent strictly inwards.
pub fn completeness_check(model: &BinomialModel) -> Result<Completeness> {
    let tree = model.tree();
    let mut violations = Vec::new();
    let mut weak = true;
    for n in 0..tree.len() {
        if tree.is_leaf(n) {
            continue;
        }
        let (lo, hi) = tree.conditional_extrema(n)?;
        let mut any = false;
        for &c in tree.children(n) {
            let (clo, chi) = tree.conditional_extrema(c)?;
            if lo < clo || hi > chi {
                any = true;
            } else {
                violations.push(Violation {
                    node: tree.id(c).to_string(),
                    reason: format!(
                        "conditional range [{clo}, {chi}] keeps both extrema of {} ([{lo}, {hi}])",
                        tree.id(n)
                    ),
                });
            }
        }
        weak &= any;
    }
    Ok(Completeness { complete: violations.is_empty(), violations, weak_condition: weak })
}

/// Endpoints of the attainable one-step ratio for `child`: the limit as the
/// position tends to `+inf` (mass ratio of the parent's minimum atom) and to
/// `-inf` (mass ratio of its maximum atom), both under the endowment-adjusted
/// measure.
pub fn claim3_interval(model: &BinomialModel, child: usize) -> Result<(f64, f64)> {
    let tree = model.tree();
    let parent = tree
        .parent(child)
        .ok_or_else(|| Error::InvalidParams(format!("node {} has no parent", tree.id(child))))?;
    if tree.children(parent).len() != 2 {
        return Err(Error::NotBinomial(format!("node {} is not binary", tree.id(parent))));
    }
    let (lo, hi) = tree.conditional_extrema(parent)?;
    Ok((model.atom(child, lo) / model.atom(parent, lo), model.atom(child, hi) / model.atom(parent, hi)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub pi: f64,
    pub strategy: Strategy,
}

/// Exact replication of the leaf-indexed claim `h`, or `Infeasible` at the
/// first node whose target ratio lies outside the attainable range.
pub fn replicate(model: &BinomialModel, h: &[f64]) -> Result<Replication> {
    let tree = model.tree();
    if h.len() != tree.num_leaves() {
        return Err(Error::InvalidParams(format!("claim has {} values for {} leaves", h.len(), tree.num_leaves())));
    }
    let a = model.alpha;
    let ln_z: Vec<f64> = (0..tree.len()).map(|n| model.ln_cond(n, |pos| a * h[pos])).collect();
    let pi = ln_z[tree.root()] / a;
    let (rlo, rhi) = tree.conditional_extrema(tree.root())?;
    let cap = if rhi > rlo { 700.0 / (a * (rhi - rlo)) } else { 1.0 };
    let mut strategy = Strategy::zero(tree);
    for n in tree.interior_from(tree.root()) {
        let child = tree.children(n)[0];
        let target = ln_z[child] - ln_z[n];
        let q = solve_ratio(model, n, child, target, cap)?;
        strategy.set(tree, n, vec![q])?;
    }
    Ok(Replication { pi, strategy })
}

/// `ln E'[exp(-alpha q psi) | child] - ln E'[exp(-alpha q psi) | node]`.
fn ln_ratio(model: &BinomialModel, node: usize, child: usize, q: f64) -> f64 {
    let g = |pos: usize| -model.alpha * q * model.tree.payoff_scalar(pos);
    model.ln_cond(child, g) - model.ln_cond(node, g)
}

fn solve_ratio(model: &BinomialModel, node: usize, child: usize, ln_target: f64, cap: f64) -> Result<f64> {
    let tree = model.tree();
    let infeasible = || Error::Infeasible { node: tree.id(node).to_string() };
    let (lo, hi) = tree.conditional_extrema(node)?;
    if lo == hi {
        // the ratio is identically one
        return if ln_target.abs() <= ENDPOINT_TOL { Ok(0.0) } else { Err(infeasible()) };
    }
    let target = ln_target.exp();
    let (end_pos, end_neg) = claim3_interval(model, child)?;
    let (a, b) = (end_pos.min(end_neg), end_pos.max(end_neg));
    if !(target > a + ENDPOINT_TOL && target < b - ENDPOINT_TOL) {
        return Err(infeasible());
    }
    let f = |q: f64| ln_ratio(model, node, child, q) - ln_target;
    let mut cap = cap;
    for _ in 0..3 {
        let (fl, fh) = (f(-cap), f(cap));
        if fl.signum() != fh.signum() {
            return numeric::bisect(f, -cap, cap, 0.0);
        }
        cap *= 4.0;
    }
    Err(infeasible())
}

/// `max_leaf |pi - X_T - <Q_T, psi> - H|` after evolving the dynamics under `strategy`.
pub fn replication_verify(model: &BinomialModel, h: &[f64], pi: f64, strategy: &Strategy) -> Result<f64> {
    let tree = model.tree();
    let panel = model.panel();
    let u0 = panel.initial_levels(tree)?;
    let path = evolve(tree, &panel, tree.root(), &u0, strategy)?;
    let pnl = investor_pnl(tree, &path, strategy);
    Ok(pnl.iter().zip(h).fold(0.0, |w, (x, hv)| w.max((pi - x - hv).abs())))
}

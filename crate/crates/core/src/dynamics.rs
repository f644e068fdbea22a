//! Indifference cash balances, Pareto weights and utility evolution along a
//! scenario tree.
//!
//! At a node `n` at time `t-1` with utility levels `U_{t-1}`, a position `Q`
//! for the next period is priced by the cash `X` and weights `v` for which the
//! leafwise Pareto allocation of `Σ_0 + X + <Q, psi>` leaves every market
//! maker's conditional expected utility unchanged. Utilities at the children
//! are the conditional expectations of the same allocation.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp, MAX_ITER};
use crate::pareto::{solve_allocation, MarketMakerPanel};
use crate::tree::ScenarioTree;
use crate::utility::{UtilityKind, UtilitySpec};

/// Residual target on the log-utility equations.
const LOG_TOL: f64 = 1e-13;
/// Largest residual accepted from any solver path.
const ACCEPT_TOL: f64 = 1e-11;

/// Predictable positions: the vector at a non-leaf node is held over the
/// period that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    securities: usize,
    positions: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn zero(tree: &ScenarioTree) -> Self {
        Self::from_fn(tree, |_| vec![0.0; tree.securities()])
    }

    /// Same position at every non-leaf node.
    pub fn constant(tree: &ScenarioTree, q: &[f64]) -> Self {
        Self::from_fn(tree, |_| q.to_vec())
    }

    /// Position `f(node)` at every non-leaf node.
    pub fn from_fn<F: FnMut(usize) -> Vec<f64>>(tree: &ScenarioTree, mut f: F) -> Self {
        let positions = (0..tree.len())
            .map(|n| if tree.is_leaf(n) { Vec::new() } else { f(n) })
            .collect();
        Self { securities: tree.securities(), positions }
    }

    /// Positions keyed by node id; unlisted non-leaf nodes hold nothing.
    pub fn from_map(tree: &ScenarioTree, map: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut s = Self::zero(tree);
        for (id, q) in map {
            let n = tree
                .lookup(id)
                .ok_or_else(|| Error::InvalidParams(format!("strategy names unknown node {id}")))?;
            s.set(tree, n, q.clone())?;
        }
        Ok(s)
    }

    pub fn to_map(&self, tree: &ScenarioTree) -> BTreeMap<String, Vec<f64>> {
        (0..tree.len())
            .filter(|&n| !tree.is_leaf(n))
            .map(|n| (tree.id(n).to_string(), self.positions[n].clone()))
            .collect()
    }

    pub fn set(&mut self, tree: &ScenarioTree, node: usize, q: Vec<f64>) -> Result<()> {
        if tree.is_leaf(node) {
            return Err(Error::InvalidParams(format!("leaf {} cannot hold a position", tree.id(node))));
        }
        if q.len() != self.securities {
            return Err(Error::InvalidParams(format!(
                "position at {} has {} entries for {} securities",
                tree.id(node),
                q.len(),
                self.securities
            )));
        }
        self.positions[node] = q;
        Ok(())
    }

    /// Position held over the period after `node` (empty at leaves).
    pub fn get(&self, node: usize) -> &[f64] {
        &self.positions[node]
    }

    pub fn securities(&self) -> usize {
        self.securities
    }

    /// Largest absolute position component.
    pub fn max_abs(&self) -> f64 {
        self.positions.iter().flatten().fold(0.0, |a, q| a.max(q.abs()))
    }
}

/// How the per-node `(X, v)` system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMethod {
    /// Closed form for one exponential maker, Newton with nested-bisection
    /// fallback otherwise.
    #[default]
    Auto,
    /// Newton (with fallback) even where a closed form exists.
    Generic,
    /// Nested bisection only.
    Nested,
}

/// Result of one indifference step at a non-leaf node.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Cash balance `X` for the coming period.
    pub cash: f64,
    /// Pareto weights with `v^1 = 1`.
    pub unit_weights: Vec<f64>,
    /// Pareto weights scaled so that `E[lambda | node] = 1`; with this scaling
    /// `1/c <= -U^m V^m <= c`.
    pub weights: Vec<f64>,
    /// Utility levels at each child, in child order.
    pub child_levels: Vec<Vec<f64>>,
}

/// Data of the node equations that do not depend on `(X, v)`.
struct NodeProblem<'a> {
    makers: &'a [UtilitySpec],
    ln_p: Vec<f64>,
    /// `Σ_0 + <Q, psi>` per leaf below the node.
    base: Vec<f64>,
    /// `ln(-U_prev^m)`.
    target: Vec<f64>,
}

struct NodeEval {
    resid: Vec<f64>,
    jac: Option<DMatrix<f64>>,
    /// Shares per leaf, maker-major within each leaf.
    shares: Vec<Vec<f64>>,
    ln_lambda: Vec<f64>,
}

impl NodeProblem<'_> {
    fn m(&self) -> usize {
        self.makers.len()
    }

    /// Residuals `ln E[-u_m(x_m)] - ln(-U_m)` and optionally their Jacobian in
    /// `(X, ln v_2, .., ln v_M)`.
    fn eval(&self, cash: f64, ln_v: &[f64], jac: bool) -> Result<NodeEval> {
        let m = self.m();
        let v: Vec<f64> = ln_v.iter().map(|l| l.exp()).collect();
        let mut shares = Vec::with_capacity(self.base.len());
        let mut ln_lambda = Vec::with_capacity(self.base.len());
        for b in &self.base {
            let (s, l) = solve_allocation(self.makers, &v, b + cash)?;
            shares.push(s);
            ln_lambda.push(l);
        }
        let mut resid = vec![0.0; m];
        let mut lvals = vec![0.0; m];
        for k in 0..m {
            let u = &self.makers[k];
            let l = log_sum_exp(self.ln_p.iter().zip(&shares).map(|(lp, s)| lp + u.ln_neg_value(s[k])));
            lvals[k] = l;
            resid[k] = l - self.target[k];
        }
        if resid.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonConvergence(format!("non-finite utility at cash {cash}")));
        }
        let jac = if jac {
            let mut j = DMatrix::zeros(m, m);
            for (lp, s) in self.ln_p.iter().zip(&shares) {
                let tau: Vec<f64> = (0..m).map(|k| 1.0 / self.makers[k].risk_aversion(s[k])).collect();
                let total: f64 = tau.iter().sum();
                for r in 0..m {
                    let weight = (lp + self.makers[r].ln_marginal(s[r]) - lvals[r]).exp();
                    j[(r, 0)] -= weight * tau[r] / total;
                    for k in 1..m {
                        let d = if r == k { tau[r] } else { 0.0 } - tau[r] * tau[k] / total;
                        j[(r, k)] -= weight * d;
                    }
                }
            }
            Some(j)
        } else {
            None
        };
        Ok(NodeEval { resid, jac, shares, ln_lambda })
    }
}

fn norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Unknowns `(X, ln v_2..ln v_M)` packed with `ln v_1 = 0`.
fn unpack(theta: &DVector<f64>) -> (f64, Vec<f64>) {
    let mut ln_v = vec![0.0];
    ln_v.extend(theta.iter().skip(1));
    (theta[0], ln_v)
}

/// Root in `X` of a decreasing scalar residual, weights fixed.
fn solve_cash(p: &NodeProblem, ln_v: &[f64], row: usize, x0: f64) -> Result<f64> {
    let c = p.makers.iter().map(|u| u.risk_aversion_bound()).fold(1.0, f64::max);
    let slot = RefCell::new(None);
    let f = |x: f64| guard(p.eval(x, ln_v, false).map(|e| e.resid[row]), &slot);
    let r0 = f(x0);
    let found = numeric::expand_bracket(&f, x0, r0.abs() * c + 1e-6)
        .and_then(|(lo, hi)| numeric::bisect(&f, lo, hi, 1e-15 * (1.0 + x0.abs())));
    settle(found, slot)
}

/// Records the first error of a scalar evaluation and maps it to `NaN`.
fn guard(r: Result<f64>, slot: &RefCell<Option<Error>>) -> f64 {
    r.unwrap_or_else(|e| {
        slot.borrow_mut().get_or_insert(e);
        f64::NAN
    })
}

/// Prefers a recorded evaluation error over the solver's own outcome.
fn settle<T>(r: Result<T>, slot: RefCell<Option<Error>>) -> Result<T> {
    match slot.into_inner() {
        Some(e) => Err(e),
        None => r,
    }
}

fn newton(p: &NodeProblem, cash0: f64, ln_v0: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = p.m();
    let mut theta = DVector::from_iterator(m, std::iter::once(cash0).chain(ln_v0.iter().skip(1).copied()));
    let (_, lv) = unpack(&theta);
    theta[0] = solve_cash(p, &lv, 0, cash0)?;
    for _ in 0..MAX_ITER {
        let (x, lv) = unpack(&theta);
        let e = p.eval(x, &lv, true)?;
        let r0 = norm(&e.resid);
        if r0 <= LOG_TOL {
            return Ok((x, lv));
        }
        let jac = e.jac.expect("Jacobian requested");
        let rhs = -DVector::from_vec(e.resid.clone());
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonConvergence("singular indifference Jacobian".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &theta + &step * t;
            let (tx, tlv) = unpack(&trial);
            if let Ok(te) = p.eval(tx, &tlv, false) {
                if norm(&te.resid) < (1.0 - 1e-4 * t) * r0 {
                    theta = trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if r0 <= ACCEPT_TOL {
                return Ok((x, lv));
            }
            return Err(Error::NonConvergence(format!("Newton line search stalled at residual {r0:e}")));
        }
    }
    Err(Error::NonConvergence("Newton iteration cap reached".into()))
}

/// Outer bisection on `X`, inner Gauss–Seidel bisection on each `ln v_m`.
fn nested(p: &NodeProblem, cash0: f64, ln_v0: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = p.m();
    let inner = |x: f64, lv: &mut Vec<f64>| -> Result<f64> {
        for _ in 0..MAX_ITER {
            for k in 1..m {
                let slot = RefCell::new(None);
                let base = lv.clone();
                let f = |l: f64| {
                    let mut trial = base.clone();
                    trial[k] = l;
                    guard(p.eval(x, &trial, false).map(|e| e.resid[k]), &slot)
                };
                let found = numeric::expand_bracket(&f, lv[k], 0.5)
                    .and_then(|(lo, hi)| numeric::bisect(&f, lo, hi, 1e-15));
                lv[k] = settle(found, slot)?;
            }
            let e = p.eval(x, lv, false)?;
            if norm(&e.resid[1..]) <= LOG_TOL {
                return Ok(e.resid[0]);
            }
        }
        Err(Error::NonConvergence("Gauss-Seidel sweep cap reached".into()))
    };
    let lv = RefCell::new(ln_v0.to_vec());
    let slot = RefCell::new(None);
    let outer = |x: f64| guard(inner(x, &mut lv.borrow_mut()), &slot);
    let c = p.makers.iter().map(|u| u.risk_aversion_bound()).fold(1.0, f64::max);
    let r0 = outer(cash0);
    let found = numeric::expand_bracket(&outer, cash0, r0.abs() * c * m as f64 + 1e-6)
        .and_then(|(lo, hi)| numeric::bisect(&outer, lo, hi, 1e-15 * (1.0 + cash0.abs())));
    let x = settle(found, slot)?;
    let mut lv = ln_v0.to_vec();
    inner(x, &mut lv)?;
    Ok((x, lv))
}

/// Indifference cash for one exponential maker:
/// `X = (1/alpha) (ln E[exp(-alpha (Σ_0 + <Q, psi>))] - ln(-U))`.
pub fn exponential_cash(alpha: f64, ln_p: &[f64], base: &[f64], u_prev: f64) -> f64 {
    (log_sum_exp(ln_p.iter().zip(base).map(|(lp, b)| lp - alpha * b)) - (-u_prev).ln()) / alpha
}

fn check_levels(u: &[f64], m: usize) -> Result<()> {
    if u.len() != m {
        return Err(Error::InvalidParams(format!("{} utility levels for {m} makers", u.len())));
    }
    if u.iter().any(|x| !(x.is_finite() && *x < 0.0)) {
        return Err(Error::InvalidParams("utility levels must be finite and negative".into()));
    }
    Ok(())
}

/// Equations at `node` for position `q`.
fn node_problem<'a>(
    tree: &ScenarioTree,
    panel: &'a MarketMakerPanel,
    node: usize,
    u_prev: &[f64],
    q: &[f64],
) -> Result<NodeProblem<'a>> {
    if tree.is_leaf(node) {
        return Err(Error::InvalidParams(format!("node {} is a leaf", tree.id(node))));
    }
    check_levels(u_prev, panel.len())?;
    if q.len() != tree.securities() {
        return Err(Error::InvalidParams(format!(
            "position has {} entries for {} securities",
            q.len(),
            tree.securities()
        )));
    }
    let ln_p = tree.conditional_leaf_probs(node).iter().map(|p| p.ln()).collect();
    let base = tree
        .leaf_range(node)
        .map(|pos| {
            let psi = tree.payoff(pos);
            panel.endowment(psi) + q.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let target = u_prev.iter().map(|u| (-u).ln()).collect();
    Ok(NodeProblem { makers: panel.makers(), ln_p, base, target })
}

/// Solves the node equations for `(X, ln v)` with `ln v_1 = 0`.
fn solve_node(p: &NodeProblem, method: StepMethod, hint: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let m = p.m();
    if m == 1 {
        if let (StepMethod::Auto, UtilityKind::Exponential { alpha }) = (method, p.makers[0].kind()) {
            let u_prev = -p.target[0].exp();
            return Ok((exponential_cash(*alpha, &p.ln_p, &p.base, u_prev), vec![0.0]));
        }
        return generic_single(p);
    }
    let ln_v0: Vec<f64> = match hint {
        Some(h) if h.len() == m => h.iter().map(|w| (w / h[0]).ln()).collect(),
        _ => vec![0.0; m],
    };
    let cash0 = 0.0;
    match method {
        StepMethod::Nested => nested(p, cash0, &ln_v0),
        _ => newton(p, cash0, &ln_v0).or_else(|_| nested(p, cash0, &ln_v0)),
    }
}

/// One maker: the residual slope in `X` lies in `[-c, -1/c]`.
fn generic_single(p: &NodeProblem) -> Result<(f64, Vec<f64>)> {
    let u = &p.makers[0];
    let c = u.risk_aversion_bound();
    let ln_v = [0.0];
    let f = |x: f64| match p.eval(x, &ln_v, false) {
        Ok(e) => {
            let s: Vec<f64> = e.shares.iter().map(|s| s[0]).collect();
            let l = e.resid[0] + p.target[0];
            let slope = -p
                .ln_p
                .iter()
                .zip(&s)
                .map(|(lp, y)| (lp + u.ln_marginal(*y) - l).exp())
                .sum::<f64>();
            (e.resid[0], slope)
        }
        Err(_) => (f64::NAN, f64::NAN),
    };
    // start from the exponential proxy with the risk aversion at the mean base
    let mean: f64 = p.ln_p.iter().zip(&p.base).map(|(lp, b)| lp.exp() * b).sum();
    let a = u.risk_aversion(mean);
    let x0 = (log_sum_exp(p.ln_p.iter().zip(&p.base).map(|(lp, b)| lp - a * b)) - p.target[0]) / a;
    let r0 = f(x0).0;
    if !r0.is_finite() {
        return Err(Error::NonConvergence(format!("non-finite utility at cash {x0}")));
    }
    let r = r0.abs() * c * 1.01 + 1e-12 * (1.0 + x0.abs());
    let x = numeric::newton_bracketed(f, x0 - r, x0 + r, x0, 1e-16, LOG_TOL)?;
    Ok((x, vec![0.0]))
}

fn outcome(tree: &ScenarioTree, node: usize, p: &NodeProblem, cash: f64, ln_v: &[f64]) -> Result<StepOutcome> {
    let e = p.eval(cash, ln_v, false)?;
    if norm(&e.resid) > ACCEPT_TOL {
        return Err(Error::NonConvergence(format!(
            "indifference residual {:e} at node {}",
            norm(&e.resid),
            tree.id(node)
        )));
    }
    let ln_mean_lambda = log_sum_exp(p.ln_p.iter().zip(&e.ln_lambda).map(|(a, b)| a + b));
    let unit_weights: Vec<f64> = ln_v.iter().map(|l| l.exp()).collect();
    let weights = ln_v.iter().map(|l| (l - ln_mean_lambda).exp()).collect();
    let start = tree.leaf_range(node).start;
    let child_levels = tree
        .children(node)
        .iter()
        .map(|&c| {
            let ln_pc = tree.node(c).prob.ln();
            let range = tree.leaf_range(c);
            p.makers
                .iter()
                .enumerate()
                .map(|(k, u)| {
                    -log_sum_exp(
                        range
                            .clone()
                            .map(|pos| p.ln_p[pos - start] - ln_pc + u.ln_neg_value(e.shares[pos - start][k])),
                    )
                    .exp()
                })
                .collect()
        })
        .collect();
    Ok(StepOutcome { cash, unit_weights, weights, child_levels })
}

/// Cash, weights and child utilities for holding `q` over the period after `node`.
pub fn indifference_step(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    node: usize,
    u_prev: &[f64],
    q: &[f64],
) -> Result<StepOutcome> {
    indifference_step_with(tree, panel, node, u_prev, q, StepMethod::Auto, None)
}

/// [`indifference_step`] with an explicit solver and optional starting weights.
pub fn indifference_step_with(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    node: usize,
    u_prev: &[f64],
    q: &[f64],
    method: StepMethod,
    hint: Option<&[f64]>,
) -> Result<StepOutcome> {
    let p = node_problem(tree, panel, node, u_prev, q)?;
    let (cash, ln_v) = solve_node(&p, method, hint)?;
    outcome(tree, node, &p, cash, &ln_v)
}

/// Evolved state on the subtree below the start node.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPath {
    pub start: usize,
    /// Utility levels per node (`None` outside the subtree).
    pub levels: Vec<Option<Vec<f64>>>,
    /// Cash for the period after each non-leaf node.
    pub cash: Vec<Option<f64>>,
    /// Weights with `E[lambda | node] = 1` for the period after each non-leaf node.
    pub weights: Vec<Option<Vec<f64>>>,
    /// Weights with `v^1 = 1`.
    pub unit_weights: Vec<Option<Vec<f64>>>,
    /// Positions used at each non-leaf node.
    pub positions: Vec<Option<Vec<f64>>>,
}

impl SystemPath {
    /// Worst relative gap `|U_n - sum_c p_c U_c|_inf / |U_n|_inf` over solved nodes.
    pub fn martingale_residual(&self, tree: &ScenarioTree) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..tree.len() {
            let (Some(u), Some(_)) = (&self.levels[n], self.cash[n]) else { continue };
            let scale = norm(u);
            for (k, uk) in u.iter().enumerate() {
                let e: f64 = tree
                    .children(n)
                    .iter()
                    .map(|&c| tree.node(c).prob * self.levels[c].as_ref().map_or(f64::NAN, |l| l[k]))
                    .sum();
                worst = worst.max((uk - e).abs() / scale);
            }
        }
        worst
    }

    /// Range of `-U^m V^m` over all solved nodes and makers.
    pub fn band(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (u, v) in self.levels.iter().zip(&self.weights) {
            if let (Some(u), Some(v)) = (u, v) {
                for (a, b) in u.iter().zip(v) {
                    lo = lo.min(-a * b);
                    hi = hi.max(-a * b);
                }
            }
        }
        (lo, hi)
    }

    /// CSV with columns `node_id,time,U1..UM,V1..VM,X,Q1..QJ`; fields that do
    /// not apply at a node are left empty.
    pub fn to_csv(&self, tree: &ScenarioTree) -> String {
        let m = self.levels.iter().flatten().next().map_or(0, |u| u.len());
        let j = tree.securities();
        let mut header = vec!["node_id".to_string(), "time".to_string()];
        header.extend((1..=m).map(|k| format!("U{k}")));
        header.extend((1..=m).map(|k| format!("V{k}")));
        header.push("X".into());
        header.extend((1..=j).map(|k| format!("Q{k}")));
        let mut out = header.join(",");
        out.push('\n');
        let fmt = |x: f64| format!("{}", numeric::round_sig(x, 15));
        let blank = |n: usize| vec![String::new(); n];
        for n in 0..tree.len() {
            let Some(u) = &self.levels[n] else { continue };
            let mut row = vec![tree.id(n).to_string(), tree.time(n).to_string()];
            row.extend(u.iter().map(|&x| fmt(x)));
            row.extend(self.weights[n].as_ref().map_or_else(|| blank(m), |v| v.iter().map(|&x| fmt(x)).collect()));
            row.push(self.cash[n].map_or_else(String::new, fmt));
            row.extend(self.positions[n].as_ref().map_or_else(|| blank(j), |q| q.iter().map(|&x| fmt(x)).collect()));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs the indifference steps from `start` with levels `u_start` down to the
/// leaves, using `strategy` at every non-leaf node of the subtree.
pub fn evolve(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    start: usize,
    u_start: &[f64],
    strategy: &Strategy,
) -> Result<SystemPath> {
    evolve_with(tree, panel, start, u_start, strategy, StepMethod::Auto)
}

pub fn evolve_with(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    start: usize,
    u_start: &[f64],
    strategy: &Strategy,
    method: StepMethod,
) -> Result<SystemPath> {
    check_levels(u_start, panel.len())?;
    let len = tree.len();
    let mut path = SystemPath {
        start,
        levels: vec![None; len],
        cash: vec![None; len],
        weights: vec![None; len],
        unit_weights: vec![None; len],
        positions: vec![None; len],
    };
    path.levels[start] = Some(u_start.to_vec());
    let initial = panel.initial_weights();
    for n in tree.interior_from(start) {
        let u = path.levels[n].clone().expect("parent visited first");
        let q = strategy.get(n);
        let hint = tree
            .parent(n)
            .and_then(|par| path.unit_weights[par].as_deref())
            .unwrap_or(&initial);
        let step = indifference_step_with(tree, panel, n, &u, q, method, Some(hint)).map_err(|e| match e {
            Error::NonConvergence(msg) => Error::NonConvergence(format!("at node {}: {msg}", tree.id(n))),
            other => other,
        })?;
        for (&c, lv) in tree.children(n).iter().zip(step.child_levels) {
            path.levels[c] = Some(lv);
        }
        path.cash[n] = Some(step.cash);
        path.weights[n] = Some(step.weights);
        path.unit_weights[n] = Some(step.unit_weights);
        path.positions[n] = Some(q.to_vec());
    }
    Ok(path)
}

/// Market makers' terminal gain `X_T + <Q_T, psi>` per leaf; `NaN` at leaves
/// outside the evolved subtree.
pub fn investor_pnl(tree: &ScenarioTree, path: &SystemPath, strategy: &Strategy) -> Vec<f64> {
    tree.leaves()
        .iter()
        .enumerate()
        .map(|(pos, &leaf)| {
            let Some(par) = tree.parent(leaf) else { return f64::NAN };
            match path.cash[par] {
                Some(x) => x + strategy.get(par).iter().zip(tree.payoff(pos)).map(|(a, b)| a * b).sum::<f64>(),
                None => f64::NAN,
            }
        })
        .collect()
}

/// Point `(v, x, q)` at which the value/cash duality is tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacySample {
    pub v: Vec<f64>,
    pub x: f64,
    pub q: Vec<f64>,
}

/// `F(v, x, q) = E[r(v, Σ_0 + x + <q, psi>) | node]`.
pub fn value_function(tree: &ScenarioTree, panel: &MarketMakerPanel, node: usize, s: &ConjugacySample) -> Result<f64> {
    let probs = tree.conditional_leaf_probs(node);
    let mut total = 0.0;
    for (pos, p) in tree.leaf_range(node).zip(probs) {
        let psi = tree.payoff(pos);
        let w = panel.endowment(psi) + s.x + s.q.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>();
        let (shares, _) = solve_allocation(panel.makers(), &s.v, w)?;
        total += p * panel.makers().iter().zip(&s.v).zip(&shares).map(|((u, v), y)| v * u.value(*y)).sum::<f64>();
    }
    Ok(total)
}

/// `G(u, 1, q)`: the cash that makes the levels `u` attainable with position `q`.
pub fn cash_function(tree: &ScenarioTree, panel: &MarketMakerPanel, node: usize, u: &[f64], q: &[f64]) -> Result<f64> {
    let p = node_problem(tree, panel, node, u, q)?;
    Ok(solve_node(&p, StepMethod::Auto, None)?.0)
}

/// Worst relative gap between `F(v, x, q)` and `sup { <u, v> : G(u, 1, q) <= x }`
/// over `samples`, with the supremum found numerically from `G` alone.
pub fn conjugacy_check(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    node: usize,
    samples: &[ConjugacySample],
) -> Result<f64> {
    let m = panel.len();
    let mut worst: f64 = 0.0;
    for s in samples {
        if s.v.len() != m || s.v.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParams("sample weights must be positive, one per maker".into()));
        }
        let direct = value_function(tree, panel, node, s)?;
        // G is increasing in every u_m: for the other levels fixed, find u_1 on the
        // constraint surface, then maximize <u, v> over the other levels.
        let level_one = |rest: &[f64]| -> Result<f64> {
            let g = |l: f64| {
                let mut u = vec![-l.exp()];
                u.extend(rest.iter().map(|r| -r.exp()));
                cash_function(tree, panel, node, &u, &s.q).map_or(f64::NAN, |x| x - s.x)
            };
            let (lo, hi) = numeric::expand_bracket(g, 0.0, 1.0)?;
            Ok(-numeric::bisect(g, lo, hi, 1e-15)?.exp())
        };
        let objective = |rest: &[f64]| -> f64 {
            match level_one(rest) {
                Ok(u1) => -(s.v[0] * u1 + s.v[1..].iter().zip(rest).map(|(v, r)| -v * r.exp()).sum::<f64>()),
                Err(_) => f64::INFINITY,
            }
        };
        let dual = if m == 1 {
            s.v[0] * level_one(&[])?
        } else {
            // coordinate sweeps of golden-section search over ln(-u_m), m >= 2,
            // started at the direct allocation's levels widened by a unit box
            let start = allocation_levels(tree, panel, node, s)?;
            let mut rest: Vec<f64> = start[1..].iter().map(|u| (-u).ln()).collect();
            let mut best = objective(&rest);
            for _ in 0..if m == 2 { 1 } else { 8 } {
                for k in 0..rest.len() {
                    let centre = rest[k];
                    let (arg, val) = numeric::golden_section_min(
                        |l| {
                            let mut r = rest.clone();
                            r[k] = l;
                            objective(&r)
                        },
                        centre - 1.0,
                        centre + 1.0,
                        120,
                    );
                    if val < best {
                        best = val;
                        rest[k] = arg;
                    }
                }
            }
            -best
        };
        worst = worst.max((dual - direct).abs() / direct.abs());
    }
    Ok(worst)
}

fn allocation_levels(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    node: usize,
    s: &ConjugacySample,
) -> Result<Vec<f64>> {
    let probs = tree.conditional_leaf_probs(node);
    let mut levels = vec![0.0; panel.len()];
    for (pos, p) in tree.leaf_range(node).zip(probs) {
        let psi = tree.payoff(pos);
        let w = panel.endowment(psi) + s.x + s.q.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>();
        let (shares, _) = solve_allocation(panel.makers(), &s.v, w)?;
        for (k, u) in panel.makers().iter().enumerate() {
            levels[k] += p * u.value(shares[k]);
        }
    }
    Ok(levels)
}

//! Superreplication price search, attainment diagnostics, efficient-friction
//! probes and cash-ratio asymptotics.
//!
//! The price of a strategy is the smallest initial capital that covers the
//! claim on every leaf, `max_leaf (X_T + <Q_T, psi> + H)`. The search minimizes
//! it coordinate by coordinate over boxes of growing half-width; the curve of
//! best prices against box size is the evidence for or against attainment.

use rayon::prelude::*;
use serde::Serialize;

use crate::binomial::{completeness_check, replicate, BinomialModel};
use crate::dynamics::{evolve, indifference_step, investor_pnl, Strategy};
use crate::error::{Error, Result};
use crate::numeric;
use crate::pareto::MarketMakerPanel;
use crate::tree::{two_period_counterexample, ScenarioTree};
use crate::utility::UtilityKind;

#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Box half-width per refinement level, increasing.
    pub bounds: Vec<f64>,
    /// Grid points per coordinate scan, endpoints included.
    pub grid_points: usize,
    /// Golden-section iterations around the best grid point.
    pub golden_iters: usize,
    /// Coordinate sweeps per refinement level.
    pub sweeps: usize,
    /// Cap on the estimated number of strategy evaluations.
    pub budget: usize,
    /// `|Q|` beyond which a boundary optimizer counts as diverging.
    pub divergence_threshold: f64,
    /// Relative price decrease per refinement that counts as strict.
    pub min_decrease: f64,
    /// Refinements over which divergence must persist.
    pub consecutive: usize,
    /// Extra starting point for the search.
    pub warm_start: Option<Strategy>,
    /// Also start from exact replication when the model is a complete
    /// binomial tree with one exponential maker.
    pub replication_start: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            bounds: (0..6).map(|k| 2f64.powi(k)).collect(),
            grid_points: 21,
            golden_iters: 40,
            sweeps: 3,
            budget: 5_000_000,
            divergence_threshold: 10.0,
            min_decrease: 1e-4,
            consecutive: 5,
            warm_start: None,
            replication_start: true,
        }
    }
}

impl SearchConfig {
    /// Estimated strategy evaluations for `coords` free coordinates.
    pub fn estimated_evaluations(&self, coords: usize) -> usize {
        self.bounds.len() * self.sweeps * coords * (self.grid_points + self.golden_iters + 2) + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attainment {
    Attained,
    NotAttainedEvidence,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub level: usize,
    pub bound: f64,
    /// Cumulative strategy evaluations.
    pub evaluations: usize,
    pub price: f64,
    /// Largest absolute position of the best strategy.
    pub max_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperrepResult {
    pub price_upper: f64,
    pub price_curve: Vec<CurvePoint>,
    pub attained: Attainment,
    pub best_strategy: Strategy,
}

/// Capital needed by `strategy` to cover `h` on every leaf; `+inf` when the
/// dynamics cannot be solved.
pub fn strategy_price(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    u0: &[f64],
    h: &[f64],
    strategy: &Strategy,
) -> f64 {
    match evolve(tree, panel, tree.root(), u0, strategy) {
        Ok(path) => investor_pnl(tree, &path, strategy)
            .iter()
            .zip(h)
            .map(|(x, hv)| x + hv)
            .fold(f64::NEG_INFINITY, f64::max),
        Err(_) => f64::INFINITY,
    }
}

fn clamp_strategy(tree: &ScenarioTree, s: &Strategy, bound: f64) -> Strategy {
    Strategy::from_fn(tree, |n| s.get(n).iter().map(|q| q.clamp(-bound, bound)).collect())
}

fn with_coord(tree: &ScenarioTree, s: &Strategy, node: usize, j: usize, value: f64) -> Strategy {
    let mut out = s.clone();
    let mut q = s.get(node).to_vec();
    q[j] = value;
    out.set(tree, node, q).expect("coordinate of a non-leaf node");
    out
}

/// Warm start from exact replication when the model is a complete binomial
/// tree with one exponential maker.
fn replication_start(tree: &ScenarioTree, panel: &MarketMakerPanel, h: &[f64]) -> Option<Strategy> {
    let [maker] = panel.makers() else { return None };
    let UtilityKind::Exponential { alpha } = maker.kind() else { return None };
    let position = panel.endowment_position().first().copied().unwrap_or(0.0);
    let model = BinomialModel::new(tree.clone(), *alpha, panel.endowment_base(), position).ok()?;
    if !completeness_check(&model).ok()?.complete {
        return None;
    }
    replicate(&model, h).ok().map(|r| r.strategy)
}

/// Upper bound on the superreplication price of the leaf-indexed claim `h`
/// for a system started at the root with the panel's initial levels.
pub fn superreplication_price(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    h: &[f64],
    search: &SearchConfig,
) -> Result<SuperrepResult> {
    if h.len() != tree.num_leaves() {
        return Err(Error::InvalidParams(format!("claim has {} values for {} leaves", h.len(), tree.num_leaves())));
    }
    if search.bounds.is_empty() || search.grid_points < 2 {
        return Err(Error::InvalidParams("search needs at least one level and two grid points".into()));
    }
    let coords: Vec<(usize, usize)> = tree
        .interior_from(tree.root())
        .into_iter()
        .flat_map(|n| (0..tree.securities()).map(move |j| (n, j)))
        .collect();
    let needed = search.estimated_evaluations(coords.len());
    if needed > search.budget {
        return Err(Error::BudgetExceeded { needed, cap: search.budget });
    }
    let u0 = panel.initial_levels(tree)?;
    let price = |s: &Strategy| strategy_price(tree, panel, &u0, h, s);

    let mut evaluations = 0usize;
    let mut best = Strategy::zero(tree);
    let mut best_price = price(&best);
    evaluations += 1;
    let replicated = if search.replication_start { replication_start(tree, panel, h) } else { None };
    for start in [search.warm_start.clone(), replicated].into_iter().flatten() {
        let p = price(&start);
        evaluations += 1;
        if p < best_price {
            best = start;
            best_price = p;
        }
    }

    let mut curve = Vec::with_capacity(search.bounds.len());
    for (level, &bound) in search.bounds.iter().enumerate() {
        // the incumbent stays eligible even when it lies outside the box
        let mut cur = clamp_strategy(tree, &best, bound);
        let mut cur_price = price(&cur);
        evaluations += 1;
        if best_price < cur_price {
            cur = best.clone();
            cur_price = best_price;
        }
        for _ in 0..search.sweeps {
            for &(node, j) in &coords {
                let grid = numeric::linspace(-bound, bound, search.grid_points);
                let values: Vec<f64> = grid
                    .par_iter()
                    .map(|&g| price(&with_coord(tree, &cur, node, j, g)))
                    .collect();
                evaluations += grid.len();
                let i = values
                    .iter()
                    .enumerate()
                    .fold(0, |b, (k, v)| if *v < values[b] { k } else { b });
                let (lo, hi) = (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]);
                let (g_arg, g_val) = numeric::golden_section_min(
                    |x| price(&with_coord(tree, &cur, node, j, x)),
                    lo,
                    hi,
                    search.golden_iters,
                );
                evaluations += search.golden_iters + 2;
                let (arg, val) = if g_val < values[i] { (g_arg, g_val) } else { (grid[i], values[i]) };
                if val < cur_price {
                    cur = with_coord(tree, &cur, node, j, arg);
                    cur_price = val;
                }
            }
        }
        if cur_price < best_price {
            best = cur;
            best_price = cur_price;
        }
        curve.push(CurvePoint {
            level,
            bound,
            evaluations,
            price: best_price,
            max_position: best.max_abs(),
        });
    }

    // exact re-verification of the reported strategy
    let verified = price(&best);
    if !verified.is_finite() {
        return Err(Error::NonConvergence("no searched strategy could be evaluated".into()));
    }
    let attained = classify(&curve, search);
    Ok(SuperrepResult { price_upper: verified, price_curve: curve, attained, best_strategy: best })
}

fn classify(curve: &[CurvePoint], search: &SearchConfig) -> Attainment {
    let k = search.consecutive;
    let last = curve.last().expect("at least one level");
    if curve.len() > k {
        let tail = &curve[curve.len() - k - 1..];
        let decreasing = tail.windows(2).all(|w| {
            w[1].price > 0.0 && w[0].price - w[1].price > search.min_decrease * w[0].price.abs()
        });
        let on_boundary = tail[1..].iter().all(|p| p.max_position >= p.bound * (1.0 - 1e-9));
        if decreasing && on_boundary && last.max_position > search.divergence_threshold {
            return Attainment::NotAttainedEvidence;
        }
    }
    if curve.len() >= 2 {
        let prev = &curve[curve.len() - 2];
        let stable = (prev.price - last.price).abs() <= 1e-9 * (1.0 + last.price.abs());
        if stable && last.max_position < 0.99 * last.bound {
            return Attainment::Attained;
        }
    }
    Attainment::Unknown
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrictionReport {
    pub scales: Vec<f64>,
    /// Leaf ids below the probed nodes, aligned with the loss columns.
    pub leaves: Vec<String>,
    /// Losses `X_T + <Q_T, psi>` per scale (rows) and leaf (columns).
    pub losses: Vec<Vec<f64>>,
    /// Leaves whose loss still grows linearly over the last two scales.
    pub diverging_leaves: Vec<String>,
    pub diverges: bool,
    /// Scales at which the dynamics could not be solved, with the reason.
    pub failures: Vec<(f64, String)>,
}

/// Growth per unit of scale above which a loss is taken to diverge.
const DIVERGENCE_SLOPE: f64 = 1e-3;

/// Starts every time-`(t-1)` node at `u_levels`, holds `scale * direction`
/// over period `t` and liquidates afterwards, and tracks the resulting losses.
pub fn efficient_friction_probe(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    t: usize,
    u_levels: &[f64],
    scales: &[f64],
    direction: &Strategy,
) -> Result<FrictionReport> {
    if t == 0 || t > tree.horizon() {
        return Err(Error::InvalidParams(format!("probe time {t} outside 1..={}", tree.horizon())));
    }
    let starts = tree.nodes_at(t - 1);
    let positions: Vec<usize> = starts.iter().flat_map(|&n| tree.leaf_range(n)).collect();
    let leaves: Vec<String> = positions.iter().map(|&pos| tree.id(tree.leaves()[pos]).to_string()).collect();
    let mut losses = Vec::new();
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    'scales: for &scale in scales {
        let strat = Strategy::from_fn(tree, |n| {
            if tree.time(n) == t - 1 {
                direction.get(n).iter().map(|d| scale * d).collect()
            } else {
                vec![0.0; tree.securities()]
            }
        });
        let mut row = vec![f64::NAN; tree.num_leaves()];
        for &n in &starts {
            match evolve(tree, panel, n, u_levels, &strat) {
                Ok(path) => {
                    let pnl = investor_pnl(tree, &path, &strat);
                    for pos in tree.leaf_range(n) {
                        row[pos] = pnl[pos];
                    }
                }
                Err(e) => {
                    failures.push((scale, e.to_string()));
                    continue 'scales;
                }
            }
        }
        losses.push(positions.iter().map(|&pos| row[pos]).collect::<Vec<f64>>());
        kept.push(scale);
    }
    let mut diverging_leaves = Vec::new();
    if kept.len() >= 2 {
        let (a, b) = (kept.len() - 2, kept.len() - 1);
        let ds = kept[b] - kept[a];
        for (i, id) in leaves.iter().enumerate() {
            if ds > 0.0 && (losses[b][i] - losses[a][i]) / ds > DIVERGENCE_SLOPE {
                diverging_leaves.push(id.clone());
            }
        }
    }
    Ok(FrictionReport {
        scales: kept,
        leaves,
        diverges: !diverging_leaves.is_empty(),
        losses,
        diverging_leaves,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CashRatio {
    pub node: String,
    /// `(Q, X(Q)/Q)` along the schedule.
    pub ratios: Vec<(f64, f64)>,
    /// Ratio at the largest scale.
    pub estimate: f64,
    /// `-psi_lower` for long positions, `-psi_upper` for short ones.
    pub expected: f64,
}

/// `X(Q)/Q` at every time-`(t-1)` node as `Q = sign * scale` grows, for a
/// single security.
pub fn cash_ratio_asymptotics(
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    t: usize,
    sign: f64,
    scales: &[f64],
    u_levels: &[f64],
) -> Result<Vec<CashRatio>> {
    if tree.securities() != 1 {
        return Err(Error::MultiAssetUnsupported(tree.securities()));
    }
    if t == 0 || t > tree.horizon() {
        return Err(Error::InvalidParams(format!("time {t} outside 1..={}", tree.horizon())));
    }
    if sign == 0.0 || scales.is_empty() {
        return Err(Error::InvalidParams("need a nonzero direction and at least one scale".into()));
    }
    let s = sign.signum();
    tree.nodes_at(t - 1)
        .into_iter()
        .map(|n| {
            let (lo, hi) = tree.conditional_extrema(n)?;
            let ratios = scales
                .iter()
                .map(|&scale| {
                    let q = s * scale;
                    let step = indifference_step(tree, panel, n, u_levels, &[q])?;
                    Ok((q, step.cash / q))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CashRatio {
                node: tree.id(n).to_string(),
                estimate: ratios.last().expect("nonempty schedule").1,
                ratios,
                expected: if s > 0.0 { -lo } else { -hi },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeLimits {
    pub node: String,
    /// Limit of the utility level at the node as the first position grows.
    pub level_limit: f64,
    /// Limit of the second-period cash.
    pub cash_limit: f64,
    /// `(Q_1, U_1, X_2)` computed by the dynamics along the schedule.
    pub trace: Vec<(f64, f64, f64)>,
    /// Sign of `dU_1/dQ_1`, the same for every `Q_1`.
    pub derivative_sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub a: f64,
    pub b: f64,
    pub up: NodeLimits,
    pub down: NodeLimits,
    /// Superreplication search for `H = -X_2` (limit cash).
    pub search: SuperrepResult,
    /// The price zero is approached but no searched strategy reaches it.
    pub not_attained: bool,
}

/// The two-period model whose payoff depends only on the second move: as the
/// first-period position grows, the cash balances converge, so the limit
/// claim has price zero without any strategy achieving it.
#[allow(clippy::too_many_arguments)]
pub fn counterexample_run(
    p1: f64,
    p2: f64,
    p3: f64,
    alpha: f64,
    psi_u: f64,
    psi_d: f64,
    q_schedule: &[f64],
    search: &SearchConfig,
) -> Result<CounterexampleReport> {
    for (name, p) in [("p1", p1), ("p2", p2), ("p3", p3)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParams(format!("{name} = {p} must lie in (0, 1)")));
        }
    }
    if p2 == p3 {
        return Err(Error::InvalidParams("p2 and p3 must differ".into()));
    }
    if !(psi_u > psi_d) {
        return Err(Error::InvalidParams("psi_u must exceed psi_d".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParams(format!("risk aversion must be positive, got {alpha}")));
    }
    let tree = two_period_counterexample(p1, p2, p3, psi_u, psi_d)?;
    let panel = MarketMakerPanel::single_exponential(alpha)?;
    let b = p1 * p2 + (1.0 - p1) * p3;
    let limits = |a: f64| {
        let level = -(1.0 - a) / (1.0 - b);
        (level, ((1.0 - b) / (1.0 - a)).ln() / alpha)
    };
    let root = tree.root();
    let (up, down) = (tree.lookup("u").expect("up node"), tree.lookup("d").expect("down node"));
    let mut traces = [Vec::new(), Vec::new()];
    for &q in q_schedule {
        let strat = Strategy::from_fn(&tree, |n| vec![if n == root { q } else { 0.0 }]);
        let path = evolve(&tree, &panel, root, &[-1.0], &strat)?;
        for (trace, node) in traces.iter_mut().zip([up, down]) {
            let level = path.levels[node].as_ref().expect("evolved")[0];
            trace.push((q, level, path.cash[node].expect("interior")));
        }
    }
    let [up_trace, down_trace] = traces;
    let node_limits = |node: usize, a: f64, trace: Vec<(f64, f64, f64)>| {
        let (level_limit, cash_limit) = limits(a);
        NodeLimits {
            node: tree.id(node).to_string(),
            level_limit,
            cash_limit,
            trace,
            derivative_sign: (a - b).signum(),
        }
    };
    let h: Vec<f64> = tree
        .leaves()
        .iter()
        .map(|&l| if tree.is_descendant(l, up) { -limits(p2).1 } else { -limits(p3).1 })
        .collect();
    let result = superreplication_price(&tree, &panel, &h, search)?;
    let not_attained = result.attained == Attainment::NotAttainedEvidence
        && result.price_curve.iter().all(|p| p.price > 0.0);
    Ok(CounterexampleReport {
        a: p2,
        b,
        up: node_limits(up, p2, up_trace),
        down: node_limits(down, p3, down_trace),
        search: result,
        not_attained,
    })
}

use std::io;

use indiff_core::binomial::{completeness_check, replicate, replication_verify};
use indiff_core::dynamics::{evolve, investor_pnl, Strategy};
use indiff_core::superrep::{
    counterexample_run, efficient_friction_probe, superreplication_price, CurvePoint, SearchConfig,
};
use indiff_core::tails::bns::{bns_tails_check, simulate_increment};
use indiff_core::tails::levy::levy_tails_check;
use indiff_core::tails::{decreasing_tails_check, tail_dominance, TailMode, Thresholds};
use indiff_core::tree::RandomTreeConfig;
use indiff_core::{MarketMakerPanel, ScenarioTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{self, ConfigError};
use crate::output::{num, to_json, Artifacts, Table};
use crate::{Command, Common};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] indiff_core::Error),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Engine(indiff_core::Error::Infeasible { .. }) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Ray magnitudes of the ratio traces written by `tails-tree`.
const RAY_SCHEDULE: [f64; 4] = [10.0, 50.0, 100.0, 200.0];

pub fn run(common: &Common, command: Command) -> Result<()> {
    let out = Artifacts::new(common.out.clone())?;
    match command {
        Command::Simulate { tree, panel, strategy } => {
            let tree = match tree {
                Some(p) => config::tree(&p)?,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
                    let t = ScenarioTree::random(&mut rng, &RandomTreeConfig::default());
                    out.file("tree.json", &to_json(&t.to_file()))?;
                    t
                }
            };
            let panel = load_panel(panel.as_deref())?;
            let strategy = match strategy {
                Some(p) => Strategy::from_map(&tree, &config::strategy(&p)?)?,
                None => Strategy::zero(&tree),
            };
            simulate(&out, common, &tree, &panel, &strategy)
        }
        Command::Superreplicate { tree, panel, claim } => {
            let tree = config::tree(&tree)?;
            let panel = config::panel(&panel)?;
            let h = config::claim(&claim, &tree)?;
            let search = search_config(common);
            let r = superreplication_price(&tree, &panel, &h, &search)?;
            out.file("price_curve.csv", &curve_csv(&r.price_curve))?;
            out.summary(
                "superreplicate.json",
                &to_json(&json!({
                    "price_upper": r.price_upper,
                    "attained": r.attained,
                    "price_curve": r.price_curve,
                    "best_strategy": r.best_strategy.to_map(&tree),
                })),
            )?;
            Ok(())
        }
        Command::Completeness { model } => {
            let model = config::model(&model)?;
            out.summary("completeness.json", &to_json(&completeness_check(&model)?))?;
            Ok(())
        }
        Command::Replicate { model, claim } => {
            let model = config::model(&model)?;
            let h = config::claim(&claim, model.tree())?;
            let r = replicate(&model, &h)?;
            let residual = replication_verify(&model, &h, r.pi, &r.strategy)?;
            let tree = model.tree();
            let mut table = Table::new(&["node_id", "time", "Q1"]);
            for n in tree.interior_from(tree.root()) {
                table.row([tree.id(n).to_string(), tree.time(n).to_string(), num(r.strategy.get(n)[0])]);
            }
            out.file("strategy.csv", &table.into_string())?;
            out.summary(
                "replicate.json",
                &to_json(&json!({
                    "pi": r.pi,
                    "strategy": r.strategy.to_map(tree),
                    "residual": residual,
                    "verified": residual <= common.tol,
                })),
            )?;
            Ok(())
        }
        Command::Counterexample { p1, p2, p3, alpha, psi_u, psi_d, q } => {
            let r = counterexample_run(p1, p2, p3, alpha, psi_u, psi_d, &q, &search_config(common))?;
            let mut table = Table::new(&["node_id", "Q1", "U1", "X2"]);
            for limits in [&r.up, &r.down] {
                for &(q1, u1, x2) in &limits.trace {
                    table.row([limits.node.clone(), num(q1), num(u1), num(x2)]);
                }
            }
            out.file("trace.csv", &table.into_string())?;
            out.file("price_curve.csv", &curve_csv(&r.search.price_curve))?;
            out.summary(
                "counterexample.json",
                &to_json(&json!({
                    "a": r.a,
                    "b": r.b,
                    "up": r.up,
                    "down": r.down,
                    "price_upper": r.search.price_upper,
                    "attained": r.search.attained,
                    "not_attained": r.not_attained,
                    "price_curve": r.search.price_curve,
                })),
            )?;
            Ok(())
        }
        Command::FrictionProbe { tree, panel, t, levels, scales, strategy } => {
            let tree = config::tree(&tree)?;
            let panel = load_panel(panel.as_deref())?;
            let levels = if levels.is_empty() { vec![-1.0; panel.len()] } else { levels };
            let direction = match strategy {
                Some(p) => Strategy::from_map(&tree, &config::strategy(&p)?)?,
                None => Strategy::constant(&tree, &vec![1.0; tree.securities()]),
            };
            let r = efficient_friction_probe(&tree, &panel, t, &levels, &scales, &direction)?;
            let header: Vec<&str> = std::iter::once("scale").chain(r.leaves.iter().map(String::as_str)).collect();
            let mut table = Table::new(&header);
            for (scale, row) in r.scales.iter().zip(&r.losses) {
                table.row(std::iter::once(num(*scale)).chain(row.iter().map(|&x| num(x))));
            }
            out.file("losses.csv", &table.into_string())?;
            out.summary("friction_probe.json", &to_json(&r))?;
            Ok(())
        }
        Command::TailsTree { tree, t, q } => {
            let tree = config::tree(&tree)?;
            let mode = match q {
                Some(q) => TailMode::Numeric { q },
                None if tree.securities() == 1 => TailMode::Exact,
                None => TailMode::Numeric { q: 200.0 },
            };
            let r = decreasing_tails_check(&tree, t, mode)?;
            let mut table = Table::new(&["node_id", "child_id", "axis", "sign", "q", "ratio"]);
            for n in tree.nodes_at(t - 1) {
                let parent = tree.conditional_distribution(n);
                for &c in tree.children(n) {
                    let d = tail_dominance(&tree.conditional_distribution(c), &parent, &RAY_SCHEDULE, Thresholds::default())?;
                    for ray in &d.rays {
                        for &(q, ratio) in &ray.ratios {
                            table.row([
                                tree.id(n).to_string(),
                                tree.id(c).to_string(),
                                ray.axis.to_string(),
                                num(ray.sign),
                                num(q),
                                num(ratio),
                            ]);
                        }
                    }
                }
            }
            out.file("ratios.csv", &table.into_string())?;
            out.summary("tails_tree.json", &to_json(&json!({ "mode": mode, "report": r })))?;
            Ok(())
        }
        Command::TailsLevy { triplet, h, samples, q } => {
            let triplet = config::triplet(&triplet)?;
            let samples = config::samples(&samples)?;
            let r = levy_tails_check(&triplet, h, &samples, &q)?;
            let mut table = Table::new(&["delta", "q", "exponent"]);
            for s in &r.samples {
                for &(q, v) in s.positive.iter().chain(&s.negative) {
                    table.row([num(s.delta), num(q), num(v)]);
                }
            }
            out.file("traces.csv", &table.into_string())?;
            out.summary("tails_levy.json", &to_json(&r))?;
            Ok(())
        }
        Command::TailsBns { params, t, h, horizon, paths, q, limit } => {
            let params = config::bns(&params)?;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let sample: Vec<_> = (0..paths).map(|_| simulate_increment(&params, t, h, horizon, &mut rng)).collect();
            let r = bns_tails_check(&params, t, h, horizon, &sample, &q, limit)?;
            let mut table = Table::new(&["path", "q", "bracket"]);
            for (i, trace) in r.brackets.iter().enumerate() {
                for &(q, v) in trace {
                    table.row([i.to_string(), num(q), num(v)]);
                }
            }
            out.file("brackets.csv", &table.into_string())?;
            out.summary("tails_bns.json", &to_json(&json!({ "increments": sample, "report": r })))?;
            Ok(())
        }
    }
}

fn load_panel(path: Option<&std::path::Path>) -> Result<MarketMakerPanel> {
    Ok(match path {
        Some(p) => config::panel(p)?,
        None => MarketMakerPanel::single_exponential(1.0)?,
    })
}

fn search_config(common: &Common) -> SearchConfig {
    let mut cfg = SearchConfig::default();
    if let Some(b) = common.budget {
        cfg.budget = b;
    }
    cfg
}

fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut table = Table::new(&["level", "bound", "evaluations", "price", "max_position"]);
    for p in curve {
        table.row([p.level.to_string(), num(p.bound), p.evaluations.to_string(), num(p.price), num(p.max_position)]);
    }
    table.into_string()
}

fn simulate(
    out: &Artifacts,
    common: &Common,
    tree: &ScenarioTree,
    panel: &MarketMakerPanel,
    strategy: &Strategy,
) -> Result<()> {
    let u0 = panel.initial_levels(tree)?;
    let path = evolve(tree, panel, tree.root(), &u0, strategy)?;
    let residual = path.martingale_residual(tree);
    let (lower, upper) = path.band();
    let losses: serde_json::Map<String, serde_json::Value> = investor_pnl(tree, &path, strategy)
        .into_iter()
        .enumerate()
        .map(|(pos, x)| (tree.id(tree.leaves()[pos]).to_string(), json!(x)))
        .collect();
    out.file("path.csv", &path.to_csv(tree))?;
    out.summary(
        "simulate.json",
        &to_json(&json!({
            "nodes": tree.len(),
            "leaves": tree.num_leaves(),
            "makers": panel.len(),
            "initial_levels": u0,
            "root_cash": path.cash[tree.root()],
            "martingale_residual": residual,
            "martingale_ok": residual <= common.tol,
            "band": { "lower": lower, "upper": upper, "bound": panel.risk_aversion_bound() },
            "investor_losses": losses,
        })),
    )?;
    Ok(())
}

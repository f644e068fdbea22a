//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line. Run with `cargo test --test acceptance -- --nocapture`.

use std::time::Instant;

use indiff_core::binomial::{completeness_check, replicate, replication_verify, BinomialModel};
use indiff_core::dynamics::{evolve, indifference_step_with, investor_pnl, StepMethod, Strategy};
use indiff_core::numeric::{bisect, linspace};
use indiff_core::pareto::{default_lemma_grid, exponential_envelope, lemma2_bounds, lemma3_lower_bound};
use indiff_core::superrep::{
    cash_ratio_asymptotics, counterexample_run, superreplication_price, Attainment, SearchConfig,
};
use indiff_core::tails::bns::{bns_laplace, bns_tails_check, simulate_increment, simulate_terminal, BnsParams};
use indiff_core::tails::levy::{levy_tails_check, LevyTriplet, RayBehaviour};
use indiff_core::tails::{decreasing_tails_check, TailMode};
use indiff_core::tree::RandomTreeConfig;
use indiff_core::{MarketMakerPanel, ScenarioTree, UtilitySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {id:>2} {:<32} {} {detail}", name, if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn random_maker(rng: &mut ChaCha8Rng) -> UtilitySpec {
    if rng.random_bool(0.5) {
        UtilitySpec::exponential(rng.random_range(0.5..2.5)).unwrap()
    } else {
        let a1 = rng.random_range(0.5..1.5);
        let a2 = a1 + rng.random_range(0.2..2.0);
        UtilitySpec::mixture(vec![(a1, rng.random_range(0.2..2.0)), (a2, rng.random_range(0.2..2.0))]).unwrap()
    }
}

#[test]
fn criterion_01_counterexample() {
    let start = Instant::now();
    let schedule = [1.0, 10.0, 100.0, 1000.0];
    let r = counterexample_run(0.5, 0.6, 0.4, 1.0, 1.0, 0.0, &schedule, &SearchConfig::default()).unwrap();
    let (a, b) = (0.6f64, 0.5f64);
    let level_oracle = -(1.0 - a) / (1.0 - b);
    let cash_oracle = ((1.0 - b) / (1.0 - a)).ln();
    let (q, u1, x2) = *r.up.trace.last().unwrap();
    let last_price = r.search.price_curve.last().unwrap().price;
    let decreasing = r.search.price_curve.windows(2).all(|w| w[1].price <= w[0].price);
    let secs = start.elapsed().as_secs_f64();
    let ok = q == 1e3
        && (u1 - level_oracle).abs() < 1e-3
        && (x2 - cash_oracle).abs() < 1e-3
        && decreasing
        && last_price < 1e-2
        && r.search.attained == Attainment::NotAttainedEvidence
        && secs < 10.0;
    report(
        1,
        "counterexample",
        ok,
        format!("U1={u1:.6} X2={x2:.6} last price={last_price:.3e} attained={:?} {secs:.2}s", r.search.attained),
    );
}

#[test]
fn criterion_02_martingale_and_band() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = RandomTreeConfig { horizon: (1, 4), ..Default::default() };
    let mut worst_residual = 0.0f64;
    let mut band_ok = true;
    for _ in 0..100 {
        let tree = ScenarioTree::random(&mut rng, &cfg);
        let makers: Vec<UtilitySpec> = (0..rng.random_range(1..=2)).map(|_| random_maker(&mut rng)).collect();
        let u0: Vec<f64> = makers.iter().map(|_| -rng.random_range(0.3..3.0)).collect();
        let panel = MarketMakerPanel::unendowed(makers).unwrap();
        let c = panel.risk_aversion_bound();
        let strat = Strategy::from_fn(&tree, |_| vec![rng.random_range(-2.0..2.0)]);
        let path = evolve(&tree, &panel, tree.root(), &u0, &strat).unwrap();
        worst_residual = worst_residual.max(path.martingale_residual(&tree));
        let (lo, hi) = path.band();
        band_ok &= lo >= 1.0 / c - 1e-12 && hi <= c + 1e-12;
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_residual <= 1e-9 && band_ok && secs < 60.0;
    report(2, "martingale and band", ok, format!("max residual={worst_residual:.2e} band={band_ok} {secs:.2}s"));
}

#[test]
fn criterion_03_closed_form_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let tree = ScenarioTree::random(&mut rng, &RandomTreeConfig::default());
        let alpha = rng.random_range(0.5..3.0);
        let base = rng.random_range(-1.0..1.0);
        let position = rng.random_range(-1.0..1.0);
        let panel =
            MarketMakerPanel::new(vec![UtilitySpec::exponential(alpha).unwrap()], vec![base], base, vec![position])
                .unwrap();
        let interior = tree.interior_from(tree.root());
        let node = interior[rng.random_range(0..interior.len())];
        let q = rng.random_range(-3.0..3.0);
        let u = -rng.random_range(0.2..5.0);
        let generic = indifference_step_with(&tree, &panel, node, &[u], &[q], StepMethod::Generic, None).unwrap();
        let probs = tree.conditional_leaf_probs(node);
        let moment: f64 = tree
            .leaf_range(node)
            .zip(&probs)
            .map(|(pos, p)| {
                let psi = tree.payoff_scalar(pos);
                p * (-alpha * (base + position * psi + q * psi)).exp()
            })
            .sum();
        let closed = (moment / -u).ln() / alpha;
        worst = worst.max((generic.cash - closed).abs());
    }
    report(3, "closed form vs generic solver", worst <= 1e-9, format!("max |dX|={worst:.2e} over 1000 draws"));
}

/// Capital per leaf needed by `strategy` to deliver `h`.
fn capital(tree: &ScenarioTree, panel: &MarketMakerPanel, h: &[f64], strategy: &Strategy) -> Vec<f64> {
    let path = evolve(tree, panel, tree.root(), &[-1.0], strategy).unwrap();
    investor_pnl(tree, &path, strategy).iter().zip(h).map(|(x, hv)| x + hv).collect()
}

const SEARCH_BOX: f64 = 100.0;

/// Root of `g` on `[-SEARCH_BOX, SEARCH_BOX]` by a sign change, `0` when `g`
/// vanishes identically.
fn sign_change_root<F: Fn(f64) -> f64>(g: F) -> Option<f64> {
    let (lo, hi) = (g(-SEARCH_BOX), g(SEARCH_BOX));
    if lo.abs() < 1e-12 && hi.abs() < 1e-12 {
        return Some(0.0);
    }
    if lo.signum() == hi.signum() {
        return None;
    }
    bisect(&g, -SEARCH_BOX, SEARCH_BOX, 1e-13).ok()
}

/// Brute-force replication on a two-period binomial tree: equalise the
/// capital across the two leaves below each time-1 node, then across the
/// time-1 nodes.
fn replicable(tree: &ScenarioTree, panel: &MarketMakerPanel, h: &[f64]) -> bool {
    let root = tree.root();
    let mids = tree.children(root).to_vec();
    let strategy = |q_root: f64, q_mid: &[f64]| {
        Strategy::from_fn(tree, |n| {
            vec![if n == root { q_root } else { mids.iter().position(|&m| m == n).map_or(0.0, |k| q_mid[k]) }]
        })
    };
    let inner = |q_root: f64| -> Option<Vec<f64>> {
        let mut q_mid = vec![0.0; mids.len()];
        for k in 0..mids.len() {
            let leaves: Vec<usize> = tree.leaf_range(mids[k]).collect();
            let root_k = sign_change_root(|q| {
                let mut trial = q_mid.clone();
                trial[k] = q;
                let cap = capital(tree, panel, h, &strategy(q_root, &trial));
                cap[leaves[0]] - cap[leaves[1]]
            })?;
            q_mid[k] = root_k;
        }
        Some(q_mid)
    };
    if inner(0.0).is_none() {
        return false;
    }
    let left = tree.leaf_range(mids[0]).start;
    let right = tree.leaf_range(mids[1]).start;
    let outer = |q_root: f64| {
        let q_mid = inner(q_root).expect("time-1 solvability does not depend on the root position");
        let cap = capital(tree, panel, h, &strategy(q_root, &q_mid));
        cap[left] - cap[right]
    };
    let Some(q_root) = sign_change_root(outer) else { return false };
    let q_mid = inner(q_root).unwrap();
    let cap = capital(tree, panel, h, &strategy(q_root, &q_mid));
    let (lo, hi) = cap.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
    hi - lo < 1e-8
}

#[test]
fn criterion_04_completeness_equivalence() {
    let alpha = 1.0;
    let scale = 10.0 / alpha;
    let panel = MarketMakerPanel::single_exponential(alpha).unwrap();
    let outcomes: Vec<(bool, bool)> = (0..256u32)
        .into_par_iter()
        .map(|code| {
            let values: Vec<f64> = (0..4).map(|k| ((code >> (2 * k)) & 3) as f64).collect();
            let tree = ScenarioTree::binomial(
                2,
                |p| match p {
                    [] => 0.5,
                    [1] => 0.6,
                    _ => 0.4,
                },
                |p| {
                    let k = usize::from(p[0] < 0) * 2 + usize::from(p[1] < 0);
                    vec![values[k]]
                },
            )
            .unwrap();
            let model = BinomialModel::unendowed(tree.clone(), alpha).unwrap();
            let complete = completeness_check(&model).unwrap().complete;
            let brute = (0..4).all(|k| {
                let h: Vec<f64> = (0..4).map(|j| if j == k { scale } else { 0.0 }).collect();
                replicable(&tree, &panel, &h)
            });
            (complete, brute)
        })
        .collect();
    let agree = outcomes.iter().filter(|(a, b)| a == b).count();
    let complete = outcomes.iter().filter(|(a, _)| *a).count();
    report(
        4,
        "completeness equivalence",
        agree == outcomes.len(),
        format!("{agree}/{} agree, {complete} complete", outcomes.len()),
    );
}

#[test]
fn criterion_05_replication_pricing() {
    let tree = ScenarioTree::binomial(1, |_| 0.5, |p| vec![f64::from(p[0])]).unwrap();
    let model = BinomialModel::unendowed(tree.clone(), 1.0).unwrap();
    let h: Vec<f64> = (0..tree.num_leaves()).map(|pos| tree.payoff_scalar(pos)).collect();
    let r = replicate(&model, &h).unwrap();
    let exact = 1f64.cosh().ln();
    let q = r.strategy.get(tree.root())[0];
    let residual = replication_verify(&model, &h, r.pi, &r.strategy).unwrap();
    let panel = MarketMakerPanel::single_exponential(1.0).unwrap();
    let sup = superreplication_price(&tree, &panel, &h, &SearchConfig::default()).unwrap();
    let ok = (r.pi - exact).abs() < 1e-9 && (q + 1.0).abs() < 1e-9 && (sup.price_upper - exact).abs() < 1e-3;
    report(
        5,
        "replication pricing",
        ok,
        format!("pi={:.12} Q1={q:.12} superrep={:.9} residual={residual:.1e}", r.pi, sup.price_upper),
    );
}

#[test]
fn criterion_06_cash_ratio_asymptotics() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut nodes = 0;
    for _ in 0..50 {
        let tree = ScenarioTree::random(&mut rng, &RandomTreeConfig::default());
        let panel = MarketMakerPanel::single_exponential(rng.random_range(1.5..2.0)).unwrap();
        for t in 1..=tree.horizon() {
            for sign in [1.0, -1.0] {
                for c in cash_ratio_asymptotics(&tree, &panel, t, sign, &[1e3], &[-1.0]).unwrap() {
                    worst = worst.max((c.estimate - c.expected).abs());
                    nodes += 1;
                }
            }
        }
    }
    report(6, "cash ratio asymptotics", worst <= 5e-3, format!("max error={worst:.2e} over {nodes} node checks"));
}

#[test]
fn criterion_07_extrema_vs_ray_criterion() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agree = 0;
    let mut total = 0;
    for _ in 0..100 {
        let tree = ScenarioTree::random(&mut rng, &RandomTreeConfig::default());
        let mut same = true;
        for t in 1..=tree.horizon() {
            let exact = decreasing_tails_check(&tree, t, TailMode::Exact).unwrap();
            let numeric = decreasing_tails_check(&tree, t, TailMode::Numeric { q: 200.0 }).unwrap();
            same &= exact == numeric;
        }
        agree += usize::from(same);
        total += 1;
    }
    report(7, "extrema vs ray criterion", agree == total, format!("{agree}/{total} trees agree"));
}

#[test]
fn criterion_08_levy_checks() {
    // Brownian motion: quadratic decay on both rays
    let brownian = LevyTriplet::new(0.0, 1.0, vec![]).unwrap();
    let deltas = linspace(-1.0, 1.0, 21);
    let r = levy_tails_check(&brownian, 1.0, &deltas, &[100.0]).unwrap();
    let worst = r
        .samples
        .iter()
        .flat_map(|s| [s.positive[0].1, s.negative[0].1])
        .fold(f64::NEG_INFINITY, f64::max);
    let brownian_ok = worst <= -4.9e3;

    // compound Poisson with one positive atom: exponential growth upwards,
    // linear growth downwards at rate equal to the no-jump increment
    let (x, mass, h) = (0.5, 1.0, 1.0);
    let poisson = LevyTriplet::new(0.0, 0.0, vec![(x, mass)]).unwrap();
    let no_jump = -h * mass * x;
    let increments: Vec<f64> = (1..=3).map(|k| no_jump + f64::from(k) * x).collect();
    let r = levy_tails_check(&poisson, h, &increments, &[10.0, 100.0, 1000.0]).unwrap();
    let poisson_ok = r.positive_ray.behaviour == RayBehaviour::Exponential
        && r.negative_ray.behaviour == RayBehaviour::Linear
        && (r.negative_ray.threshold.unwrap() - no_jump).abs() < 1e-15
        && r.samples.iter().all(|s| {
            s.decays_positive
                && s.decays_negative
                && s.positive.last().unwrap().1 < -1e3
                && s.negative.windows(2).all(|w| w[1].1 < w[0].1)
        });

    // no diffusion, negative jumps: decay upwards only below the threshold
    let (b, h) = (0.2, 0.1);
    let jumps = vec![(-0.5, 1.0), (-2.0, 0.5)];
    let threshold = h * (b - (-0.5) * 1.0);
    let negative = LevyTriplet::new(b, 0.0, jumps).unwrap();
    let samples = [-1.0, 0.0, 0.05, 0.09, 0.2];
    let r = levy_tails_check(&negative, h, &samples, &[1e3, 1e4]).unwrap();
    let flagged = r.samples.iter().all(|s| {
        let slope = (s.positive[1].1 - s.positive[0].1) / 9e3;
        s.decays_positive == (s.delta < threshold) && (slope < 0.0) == s.decays_positive && s.decays_negative
    });
    let negative_ok = r.positive_ray.behaviour == RayBehaviour::Linear
        && r.negative_ray.behaviour == RayBehaviour::Exponential
        && (r.positive_ray.threshold.unwrap() - threshold).abs() < 1e-15
        && flagged;

    report(
        8,
        "levy tail checks",
        brownian_ok && poisson_ok && negative_ok,
        format!("brownian max={worst:.1} poisson={poisson_ok} negative-jump={negative_ok}"),
    );
}

#[test]
fn criterion_09_bns() {
    let start = Instant::now();
    let params = BnsParams::new(0.0, -0.5, 1.0, -0.3, 0.04, vec![(0.1, 1.0)]).unwrap();
    let paths = 1_000_000;
    let chunks = 16;
    let terminal: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + chunk as u64);
            let params = &params;
            (0..paths / chunks).map(move |_| simulate_terminal(params, 1.0, &mut rng))
        })
        .collect();
    let mut worst_z = 0.0f64;
    for q in [-2.0, -1.0, 1.0, 2.0] {
        let n = terminal.len() as f64;
        let mean = terminal.iter().map(|x| (q * x).exp()).sum::<f64>() / n;
        let var = terminal.iter().map(|x| ((q * x).exp() - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let exact = bns_laplace(&params, 0.0, 1.0, q, 0.0, params.sigma0_sq).unwrap().exp();
        worst_z = worst_z.max((mean - exact).abs() / (var / n).sqrt());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let sample: Vec<_> = (0..100).map(|_| simulate_increment(&params, 0.0, 0.5, 1.0, &mut rng)).collect();
    let tails = bns_tails_check(&params, 0.0, 0.5, 1.0, &sample, &[50.0], 1e3).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_z < 3.0 && tails.diverges && tails.q6_coefficient > 0.0 && secs < 120.0;
    report(
        9,
        "bns laplace and brackets",
        ok,
        format!("max z={worst_z:.2} diverges={} q6={:.3e} {secs:.2}s", tails.diverges, tails.q6_coefficient),
    );
}

#[test]
fn criterion_10_envelope_and_lower_bound() {
    let grid = default_lemma_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut specs = vec![
        UtilitySpec::exponential(1.0).unwrap(),
        UtilitySpec::mixture(vec![(1.0, 1.0), (2.0, 1.0)]).unwrap(),
    ];
    specs.extend((0..8).map(|_| random_maker(&mut rng)));
    let mut sandwich_ok = true;
    for spec in &specs {
        let (c1, c2) = lemma2_bounds(spec, &grid).unwrap();
        sandwich_ok &= c1 <= c2;
        for &x in &grid {
            let (u, env) = (spec.value(x), exponential_envelope(spec, x).unwrap());
            let tol = 1e-12 * u.abs();
            sandwich_ok &= c2 * env <= u + tol && u <= c1 * env + tol;
        }
    }

    let cfg = RandomTreeConfig { horizon: (2, 2), ..Default::default() };
    let mut bound_ok = true;
    let mut checks = 0;
    for _ in 0..100 {
        let tree = ScenarioTree::random(&mut rng, &cfg);
        let spec = random_maker(&mut rng);
        let x = rng.random_range(-2.0..2.0);
        let sigma: Vec<f64> = (0..tree.num_leaves()).map(|pos| tree.payoff_scalar(pos)).collect();
        for t in 1..=2 {
            for n in tree.nodes_at(t) {
                let parent = tree.parent(n).unwrap();
                let probs = tree.conditional_leaf_probs(n);
                let exact: f64 = tree.leaf_range(n).zip(&probs).map(|(pos, p)| p * spec.value(x + sigma[pos])).sum();
                let bound = lemma3_lower_bound(&spec, x, &sigma, &tree, n, parent).unwrap();
                bound_ok &= bound <= exact;
                checks += 1;
            }
        }
    }
    report(
        10,
        "envelope and lower bound",
        sandwich_ok && bound_ok,
        format!("sandwich={sandwich_ok} lower bound holds at {checks} nodes={bound_ok}"),
    );
}

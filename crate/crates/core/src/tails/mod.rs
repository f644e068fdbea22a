//! Exponential tail order of distributions and the decreasing-tails
//! condition on scenario trees, plus analytic checks for Lévy and BNS models.
//!
//! `mu` has dominated exponential tails relative to `nu` when
//! `∫ e^{<q,x>} dmu / ∫ e^{<q,x>} dnu -> 0` as `|q| -> inf` in every direction.

pub mod bns;
pub mod levy;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::{ConditionalDistribution, ScenarioTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Dominated,
    NotDominated,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Ratio below which a ray counts as vanishing.
    pub dominated: f64,
    /// Ratio above which a ray counts as bounded away from zero.
    pub not_dominated: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { dominated: 1e-8, not_dominated: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayTrace {
    /// Coordinate of the ray.
    pub axis: usize,
    /// `+1` or `-1`.
    pub sign: f64,
    /// `(|q|, ratio)` along the schedule.
    pub ratios: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub verdict: Verdict,
    /// Decisive atom criterion, available in one dimension.
    pub exact: Option<Verdict>,
    pub rays: Vec<RayTrace>,
}

/// Compares exponential moments of `mu` and `nu` along the rays `±e_j` at the
/// magnitudes in `q_schedule`; the verdict is read at the last magnitude.
pub fn tail_dominance(
    mu: &ConditionalDistribution,
    nu: &ConditionalDistribution,
    q_schedule: &[f64],
    thresholds: Thresholds,
) -> Result<DominanceReport> {
    let dim = mu.dim();
    if dim != nu.dim() || dim == 0 {
        return Err(Error::InvalidParams(format!("distributions live in dimensions {} and {}", dim, nu.dim())));
    }
    if q_schedule.is_empty() {
        return Err(Error::InvalidParams("empty q schedule".into()));
    }
    let mut rays = Vec::with_capacity(2 * dim);
    for axis in 0..dim {
        for sign in [1.0, -1.0] {
            let ratios = q_schedule
                .iter()
                .map(|&q| {
                    let mut dir = vec![0.0; dim];
                    dir[axis] = sign * q.abs();
                    (q.abs(), (mu.log_mgf(&dir) - nu.log_mgf(&dir)).exp())
                })
                .collect();
            rays.push(RayTrace { axis, sign, ratios });
        }
    }
    let finals: Vec<f64> = rays.iter().map(|r| r.ratios.last().expect("nonempty").1).collect();
    let verdict = if finals.iter().all(|&r| r < thresholds.dominated) {
        Verdict::Dominated
    } else if finals.iter().any(|&r| r >= thresholds.not_dominated) {
        Verdict::NotDominated
    } else {
        Verdict::Inconclusive
    };
    let exact = (dim == 1).then(|| {
        let bounds = |d: &ConditionalDistribution| {
            d.support.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| (lo.min(x[0]), hi.max(x[0])))
        };
        let ((mlo, mhi), (nlo, nhi)) = (bounds(mu), bounds(nu));
        if mlo > nlo && mhi < nhi {
            Verdict::Dominated
        } else {
            Verdict::NotDominated
        }
    });
    Ok(DominanceReport { verdict, exact, rays })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TailMode {
    /// Strict inward move of both conditional extrema (one security).
    Exact,
    /// Ray ratios at magnitude `q`.
    Numeric { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeTails {
    /// Node at time `t-1`.
    pub node: String,
    /// Conditional probability of the children whose tails are dominated.
    pub probability: f64,
    /// Those children.
    pub witnesses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecreasingTails {
    pub t: usize,
    pub nodes: Vec<NodeTails>,
    pub min_probability: f64,
}

/// `P[nu_t ≺ nu_{t-1} | F_{t-1}]` at every time-`(t-1)` node, where `nu_t` is
/// the conditional payoff distribution at time `t`.
pub fn decreasing_tails_check(tree: &ScenarioTree, t: usize, mode: TailMode) -> Result<DecreasingTails> {
    if t == 0 || t > tree.horizon() {
        return Err(Error::InvalidParams(format!("time {t} outside 1..={}", tree.horizon())));
    }
    if matches!(mode, TailMode::Exact) && tree.securities() != 1 {
        return Err(Error::MultiAssetUnsupported(tree.securities()));
    }
    let mut nodes = Vec::new();
    for n in tree.nodes_at(t - 1) {
        let parent_dist = tree.conditional_distribution(n);
        let mut probability = 0.0;
        let mut witnesses = Vec::new();
        for &c in tree.children(n) {
            let dominated = match mode {
                TailMode::Exact => {
                    let (lo, hi) = tree.conditional_extrema(n)?;
                    let (clo, chi) = tree.conditional_extrema(c)?;
                    lo < clo && hi > chi
                }
                TailMode::Numeric { q } => {
                    let r = tail_dominance(&tree.conditional_distribution(c), &parent_dist, &[q], Thresholds::default())?;
                    r.verdict == Verdict::Dominated
                }
            };
            if dominated {
                probability += tree.node(c).prob;
                witnesses.push(tree.id(c).to_string());
            }
        }
        nodes.push(NodeTails { node: tree.id(n).to_string(), probability, witnesses });
    }
    let min_probability = nodes.iter().map(|n| n.probability).fold(f64::INFINITY, f64::min);
    Ok(DecreasingTails { t, nodes, min_probability })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{two_period_counterexample, RandomTreeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(atoms: &[(f64, f64)]) -> ConditionalDistribution {
        ConditionalDistribution { node: 0, support: atoms.iter().map(|&(x, p)| (vec![x], p)).collect() }
    }

    const SCHEDULE: [f64; 4] = [10.0, 50.0, 100.0, 200.0];

    #[test]
    fn identical_measures_are_not_dominated() {
        let mu = dist(&[(0.0, 0.3), (1.0, 0.7)]);
        let r = tail_dominance(&mu, &mu, &SCHEDULE, Thresholds::default()).unwrap();
        assert_eq!(r.verdict, Verdict::NotDominated);
        assert_eq!(r.exact, Some(Verdict::NotDominated));
        assert!(r.rays.iter().all(|ray| ray.ratios.iter().all(|(_, x)| (x - 1.0).abs() < 1e-12)));
    }

    #[test]
    fn strictly_inner_support_is_dominated() {
        let mu = dist(&[(0.25, 0.5), (0.75, 0.5)]);
        let nu = dist(&[(0.0, 0.5), (1.0, 0.5)]);
        let r = tail_dominance(&mu, &nu, &SCHEDULE, Thresholds::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Dominated);
        assert_eq!(r.exact, Some(Verdict::Dominated));
        let back = tail_dominance(&nu, &mu, &SCHEDULE, Thresholds::default()).unwrap();
        assert_eq!(back.verdict, Verdict::NotDominated);
    }

    #[test]
    fn shared_minimum_gives_mass_ratio() {
        let mu = dist(&[(0.0, 0.2), (0.5, 0.8)]);
        let nu = dist(&[(0.0, 0.4), (1.0, 0.6)]);
        let r = tail_dominance(&mu, &nu, &SCHEDULE, Thresholds::default()).unwrap();
        assert_eq!(r.verdict, Verdict::NotDominated);
        let down = r.rays.iter().find(|ray| ray.sign < 0.0).unwrap();
        assert!((down.ratios.last().unwrap().1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn counterexample_fails_decreasing_tails() {
        let tree = two_period_counterexample(0.5, 0.6, 0.4, 1.0, 0.0).unwrap();
        let r = decreasing_tails_check(&tree, 1, TailMode::Exact).unwrap();
        assert_eq!(r.min_probability, 0.0);
        assert!(r.nodes[0].witnesses.is_empty());
    }

    #[test]
    fn trinomial_only_interior_atom_counts() {
        let tree = ScenarioTree::single_period(&[1.0 / 3.0; 3], &[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let r = decreasing_tails_check(&tree, 1, TailMode::Exact).unwrap();
        assert!((r.min_probability - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.nodes[0].witnesses, vec!["w1".to_string()]);
    }

    #[test]
    fn branch_keeping_the_maximum_is_excluded() {
        // children: {0, 2} keeps both extrema, {1} collapses inside
        let tree = ScenarioTree::binomial(2, |_| 0.5, |p| {
            vec![match p {
                [1, 1] => 0.0,
                [1, -1] => 2.0,
                _ => 1.0,
            }]
        })
        .unwrap();
        let r = decreasing_tails_check(&tree, 1, TailMode::Exact).unwrap();
        assert_eq!(r.nodes[0].witnesses, vec!["d".to_string()]);
        assert!((r.min_probability - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_and_numeric_modes_agree_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let tree = ScenarioTree::random(&mut rng, &RandomTreeConfig::default());
            for t in 1..=tree.horizon() {
                let a = decreasing_tails_check(&tree, t, TailMode::Exact).unwrap();
                let b = decreasing_tails_check(&tree, t, TailMode::Numeric { q: 200.0 }).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn multi_asset_exact_mode_is_unsupported() {
        let tree = ScenarioTree::single_period(&[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(decreasing_tails_check(&tree, 1, TailMode::Exact), Err(Error::MultiAssetUnsupported(2)));
        assert!(decreasing_tails_check(&tree, 1, TailMode::Numeric { q: 200.0 }).is_ok());
    }
}

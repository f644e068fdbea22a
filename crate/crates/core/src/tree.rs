//! Finite filtered probability spaces stored as scenario trees.
//!
//! Nodes live in a flat array with parent/child indices. Leaves are numbered
//! in depth-first order, so the leaves below any node form a contiguous range
//! and leaf-indexed quantities (payoffs, claims, P&L) are plain slices.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::round_sig;

/// Tolerance on per-node probability sums.
const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub time: usize,
    pub parent: Option<usize>,
    /// Transition probability from the parent (1 for the root).
    pub prob: f64,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    nodes: Vec<Node>,
    horizon: usize,
    securities: usize,
    root: usize,
    /// Leaf node indices in depth-first order.
    leaves: Vec<usize>,
    /// Position of each node's first leaf and one past its last.
    leaf_ranges: Vec<Range<usize>>,
    /// Payoff vector per leaf position.
    payoffs: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

/// Distribution of the payoff vector conditional on a node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalDistribution {
    pub node: usize,
    /// `(payoff, probability)` pairs sorted lexicographically by payoff.
    pub support: Vec<(Vec<f64>, f64)>,
}

impl ConditionalDistribution {
    pub fn point_mass(node: usize, psi: Vec<f64>) -> Self {
        Self { node, support: vec![(psi, 1.0)] }
    }

    pub fn dim(&self) -> usize {
        self.support.first().map_or(0, |s| s.0.len())
    }

    /// `ln ∫ exp(<q, x>) dμ(x)`.
    pub fn log_mgf(&self, q: &[f64]) -> f64 {
        crate::numeric::log_sum_exp(self.support.iter().map(|(x, p)| {
            p.ln() + x.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()
        }))
    }
}

// ---------------------------------------------------------------------------
// file format

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NodeKey {
    Int(i64),
    Str(String),
}

impl NodeKey {
    fn into_string(self) -> String {
        match self {
            NodeKey::Int(i) => i.to_string(),
            NodeKey::Str(s) => s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeRecord {
    pub id: NodeKey,
    pub time: usize,
    #[serde(default)]
    pub parent: Option<NodeKey>,
    #[serde(default = "one")]
    pub prob: f64,
}

fn one() -> f64 {
    1.0
}

/// On-disk tree: `{"horizon", "securities", "nodes": [{"id","time","parent","prob"}], "payoff": {"leaf_id": [...]}}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TreeFile {
    pub horizon: usize,
    pub securities: usize,
    pub nodes: Vec<NodeRecord>,
    pub payoff: BTreeMap<String, Vec<f64>>,
}

impl ScenarioTree {
    /// Builds and validates a tree from flat node records.
    pub fn from_records(
        horizon: usize,
        securities: usize,
        records: Vec<(String, usize, Option<String>, f64)>,
        payoff: &HashMap<String, Vec<f64>>,
    ) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidTree("horizon must be at least 1".into()));
        }
        if securities < 1 {
            return Err(Error::InvalidTree("need at least one security".into()));
        }
        let mut index = HashMap::new();
        for (i, (id, ..)) in records.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidTree(format!("duplicate node id {id}")));
            }
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(records.len());
        let mut root = None;
        for (id, time, parent, prob) in &records {
            let parent_ix = match parent {
                None => {
                    if root.is_some() {
                        return Err(Error::InvalidTree("more than one root".into()));
                    }
                    if *time != 0 {
                        return Err(Error::InvalidTree(format!("root {id} must have time 0")));
                    }
                    root = Some(nodes.len());
                    None
                }
                Some(p) => Some(*index.get(p).ok_or_else(|| {
                    Error::InvalidTree(format!("node {id} references unknown parent {p}"))
                })?),
            };
            if parent_ix.is_some() && !(prob.is_finite() && *prob > 0.0 && *prob <= 1.0 + PROB_SUM_TOL) {
                return Err(Error::InvalidTree(format!(
                    "node {id} has transition probability {prob}, must lie in (0, 1]"
                )));
            }
            nodes.push(Node {
                id: id.clone(),
                time: *time,
                parent: parent_ix,
                prob: if parent_ix.is_some() { *prob } else { 1.0 },
                children: Vec::new(),
            });
        }
        let root = root.ok_or_else(|| Error::InvalidTree("no root node".into()))?;
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                if nodes[i].time != nodes[p].time + 1 {
                    return Err(Error::InvalidTree(format!(
                        "node {} at time {} has parent at time {}",
                        nodes[i].id, nodes[i].time, nodes[p].time
                    )));
                }
                nodes[p].children.push(i);
            }
        }
        for n in &nodes {
            if n.time > horizon {
                return Err(Error::InvalidTree(format!("node {} beyond horizon", n.id)));
            }
            if n.children.is_empty() {
                if n.time != horizon {
                    return Err(Error::InvalidTree(format!(
                        "leaf {} at time {} but horizon is {horizon}",
                        n.id, n.time
                    )));
                }
            } else {
                let s: f64 = n.children.iter().map(|&c| nodes[c].prob).sum();
                if (s - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::InvalidTree(format!(
                        "children of {} have probabilities summing to {s}",
                        n.id
                    )));
                }
            }
        }

        // depth-first leaf numbering; also detects unreachable nodes
        let mut leaves = Vec::new();
        let mut leaf_ranges = vec![0..0; nodes.len()];
        let mut visited = 0usize;
        fn dfs(
            n: usize,
            nodes: &[Node],
            leaves: &mut Vec<usize>,
            ranges: &mut [Range<usize>],
            visited: &mut usize,
        ) {
            *visited += 1;
            let start = leaves.len();
            if nodes[n].children.is_empty() {
                leaves.push(n);
            }
            for &c in &nodes[n].children {
                dfs(c, nodes, leaves, ranges, visited);
            }
            ranges[n] = start..leaves.len();
        }
        dfs(root, &nodes, &mut leaves, &mut leaf_ranges, &mut visited);
        if visited != nodes.len() {
            return Err(Error::InvalidTree("tree contains nodes unreachable from the root".into()));
        }

        let mut payoffs = Vec::with_capacity(leaves.len());
        for &l in &leaves {
            let psi = payoff.get(&nodes[l].id).ok_or_else(|| {
                Error::InvalidTree(format!("no payoff for leaf {}", nodes[l].id))
            })?;
            if psi.len() != securities || psi.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidTree(format!(
                    "payoff of leaf {} must be {securities} finite numbers",
                    nodes[l].id
                )));
            }
            payoffs.push(psi.clone());
        }
        if payoff.len() != leaves.len() {
            return Err(Error::InvalidTree("payoff given for a non-leaf or unknown node".into()));
        }

        Ok(Self { nodes, horizon, securities, root, leaves, leaf_ranges, payoffs, index })
    }

    pub fn from_file(file: TreeFile) -> Result<Self> {
        let records = file
            .nodes
            .into_iter()
            .map(|r| (r.id.into_string(), r.time, r.parent.map(NodeKey::into_string), r.prob))
            .collect();
        let payoff: HashMap<String, Vec<f64>> = file.payoff.into_iter().collect();
        Self::from_records(file.horizon, file.securities, records, &payoff)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TreeFile =
            serde_json::from_str(s).map_err(|e| Error::InvalidTree(format!("tree JSON: {e}")))?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            horizon: self.horizon,
            securities: self.securities,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: NodeKey::Str(n.id.clone()),
                    time: n.time,
                    parent: n.parent.map(|p| NodeKey::Str(self.nodes[p].id.clone())),
                    prob: n.prob,
                })
                .collect(),
            payoff: self
                .leaves
                .iter()
                .zip(&self.payoffs)
                .map(|(&l, p)| (self.nodes[l].id.clone(), p.clone()))
                .collect(),
        }
    }

    /// Non-recombining binomial tree. The first child of every node is the
    /// `+1` move. `prob_up(path)` gives `P[Y_{t+1} = +1 | path]` and `payoff(path)`
    /// the payoff at a full path, where a path is a slice of `±1` moves.
    pub fn binomial<P, F>(horizon: usize, prob_up: P, payoff: F) -> Result<Self>
    where
        P: Fn(&[i8]) -> f64,
        F: Fn(&[i8]) -> Vec<f64>,
    {
        let mut records = Vec::new();
        let mut pay = HashMap::new();
        let mut securities = 0;
        fn name(path: &[i8]) -> String {
            if path.is_empty() {
                "root".to_string()
            } else {
                path.iter().map(|&y| if y > 0 { 'u' } else { 'd' }).collect()
            }
        }
        let mut frontier: Vec<Vec<i8>> = vec![vec![]];
        records.push(("root".to_string(), 0, None, 1.0));
        for t in 0..horizon {
            let mut next = Vec::new();
            for path in &frontier {
                let p = prob_up(path);
                for (y, pr) in [(1i8, p), (-1i8, 1.0 - p)] {
                    let mut child = path.clone();
                    child.push(y);
                    records.push((name(&child), t + 1, Some(name(path)), pr));
                    next.push(child);
                }
            }
            frontier = next;
        }
        for path in &frontier {
            let psi = payoff(path);
            securities = psi.len();
            pay.insert(name(path), psi);
        }
        Self::from_records(horizon, securities, records, &pay)
    }

    /// One-period tree with the given leaf probabilities and payoffs.
    pub fn single_period(probs: &[f64], payoffs: &[Vec<f64>]) -> Result<Self> {
        if probs.len() != payoffs.len() || probs.is_empty() {
            return Err(Error::InvalidTree("need one payoff per outcome".into()));
        }
        let securities = payoffs[0].len();
        let mut records = vec![("root".to_string(), 0, None, 1.0)];
        let mut pay = HashMap::new();
        for (i, (p, psi)) in probs.iter().zip(payoffs).enumerate() {
            let id = format!("w{i}");
            records.push((id.clone(), 1, Some("root".to_string()), *p));
            pay.insert(id, psi.clone());
        }
        Self::from_records(1, securities, records, &pay)
    }

    /// Random tree for fuzzing: horizon and branching factors drawn from the
    /// given ranges, probabilities bounded below by `min_prob`, integer payoffs
    /// in `payoff_range`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomTreeConfig) -> Self {
        let horizon = rng.random_range(cfg.horizon.0..=cfg.horizon.1);
        let mut records = vec![("n0".to_string(), 0, None, 1.0)];
        let mut pay = HashMap::new();
        let mut frontier = vec!["n0".to_string()];
        let mut counter = 1;
        for t in 0..horizon {
            let mut next = Vec::new();
            for parent in &frontier {
                let k = rng.random_range(cfg.branching.0..=cfg.branching.1);
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0) + 0.25).collect();
                let s: f64 = raw.iter().sum();
                let mut probs: Vec<f64> = raw
                    .iter()
                    .map(|r| (r / s).max(cfg.min_prob))
                    .collect();
                let s2: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= s2);
                for p in probs {
                    let id = format!("n{counter}");
                    counter += 1;
                    records.push((id.clone(), t + 1, Some(parent.clone()), p));
                    next.push(id);
                }
            }
            frontier = next;
        }
        for leaf in &frontier {
            let psi: Vec<f64> = (0..cfg.securities)
                .map(|_| rng.random_range(cfg.payoff_range.0..=cfg.payoff_range.1) as f64)
                .collect();
            pay.insert(leaf.clone(), psi);
        }
        Self::from_records(horizon, cfg.securities, records, &pay).expect("random tree is valid")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> &Node {
        &self.nodes[n]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn securities(&self) -> usize {
        self.securities
    }

    pub fn time(&self, n: usize) -> usize {
        self.nodes[n].time
    }

    pub fn children(&self, n: usize) -> &[usize] {
        &self.nodes[n].children
    }

    pub fn parent(&self, n: usize) -> Option<usize> {
        self.nodes[n].parent
    }

    pub fn is_leaf(&self, n: usize) -> bool {
        self.nodes[n].children.is_empty()
    }

    pub fn id(&self, n: usize) -> &str {
        &self.nodes[n].id
    }

    pub fn lookup(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Leaf node indices in depth-first order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf positions reachable from `n`.
    pub fn leaf_range(&self, n: usize) -> Range<usize> {
        self.leaf_ranges[n].clone()
    }

    /// Payoff vector at leaf position `pos`.
    pub fn payoff(&self, pos: usize) -> &[f64] {
        &self.payoffs[pos]
    }

    /// Scalar payoff at leaf position `pos` (first security).
    pub fn payoff_scalar(&self, pos: usize) -> f64 {
        self.payoffs[pos][0]
    }

    pub fn nodes_at(&self, t: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].time == t).collect()
    }

    /// Non-leaf nodes in breadth-first order from `start`.
    pub fn interior_from(&self, start: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            if !self.is_leaf(n) {
                out.push(n);
                queue.extend(self.children(n).iter().copied());
            }
        }
        out
    }

    /// True when `n` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn is_descendant(&self, n: usize, ancestor: usize) -> bool {
        let mut cur = Some(n);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.nodes[c].parent;
        }
        false
    }

    /// Unconditional probability of reaching `n`.
    pub fn path_probability(&self, n: usize) -> f64 {
        let mut p = 1.0;
        let mut cur = n;
        while let Some(par) = self.nodes[cur].parent {
            p *= self.nodes[cur].prob;
            cur = par;
        }
        p
    }

    /// Probabilities of the leaves below `n` conditional on `n`, aligned with
    /// `leaf_range(n)`.
    pub fn conditional_leaf_probs(&self, n: usize) -> Vec<f64> {
        let range = self.leaf_range(n);
        let mut out = vec![0.0; range.len()];
        let mut stack = vec![(n, 1.0)];
        while let Some((m, p)) = stack.pop() {
            if self.is_leaf(m) {
                let pos = self.leaf_ranges[m].start;
                out[pos - range.start] = p;
            } else {
                for &c in &self.nodes[m].children {
                    stack.push((c, p * self.nodes[c].prob));
                }
            }
        }
        out
    }

    /// `E[f | F_n]` for a leaf-indexed `leaf_values`.
    pub fn conditional_expectation(&self, n: usize, leaf_values: &[f64]) -> f64 {
        let range = self.leaf_range(n);
        self.conditional_leaf_probs(n)
            .iter()
            .zip(&leaf_values[range])
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Conditional expectations at every node, computed bottom-up.
    pub fn conditional_expectations(&self, leaf_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        self.fill_expectations(self.root, leaf_values, &mut out);
        out
    }

    fn fill_expectations(&self, n: usize, leaf_values: &[f64], out: &mut [f64]) -> f64 {
        let v = if self.is_leaf(n) {
            leaf_values[self.leaf_ranges[n].start]
        } else {
            self.nodes[n]
                .children
                .iter()
                .map(|&c| self.nodes[c].prob * self.fill_expectations(c, leaf_values, out))
                .sum()
        };
        out[n] = v;
        v
    }

    /// Conditional essential infimum and supremum of the (single) payoff.
    pub fn conditional_extrema(&self, n: usize) -> Result<(f64, f64)> {
        if self.securities != 1 {
            return Err(Error::MultiAssetUnsupported(self.securities));
        }
        let range = self.leaf_range(n);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for pos in range {
            let v = self.payoffs[pos][0];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }

    /// Conditional distribution of the payoff vector at `n`; payoff values that
    /// agree to 12 significant digits are merged into one atom.
    pub fn conditional_distribution(&self, n: usize) -> ConditionalDistribution {
        let range = self.leaf_range(n);
        let probs = self.conditional_leaf_probs(n);
        let mut merged: BTreeMap<Vec<OrdF64>, (Vec<f64>, f64)> = BTreeMap::new();
        for (pos, p) in range.zip(probs) {
            let psi = &self.payoffs[pos];
            let key: Vec<OrdF64> = psi.iter().map(|&x| OrdF64(round_sig(x, 12))).collect();
            let entry = merged.entry(key).or_insert_with(|| (psi.clone(), 0.0));
            entry.1 += p;
        }
        ConditionalDistribution { node: n, support: merged.into_values().collect() }
    }

    /// Conditional probability that the payoff equals `value` (first security),
    /// using the same 12-significant-digit identification as
    /// [`conditional_distribution`](Self::conditional_distribution).
    pub fn conditional_atom_mass(&self, n: usize, value: f64) -> f64 {
        let key = round_sig(value, 12);
        self.leaf_range(n)
            .zip(self.conditional_leaf_probs(n))
            .filter(|(pos, _)| round_sig(self.payoffs[*pos][0], 12) == key)
            .map(|(_, p)| p)
            .sum()
    }
}

/// Total order wrapper used only for merge keys (inputs are finite).
#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
pub struct RandomTreeConfig {
    pub horizon: (usize, usize),
    pub branching: (usize, usize),
    pub securities: usize,
    pub payoff_range: (i32, i32),
    pub min_prob: f64,
}

impl Default for RandomTreeConfig {
    fn default() -> Self {
        Self { horizon: (1, 3), branching: (2, 3), securities: 1, payoff_range: (-2, 2), min_prob: 0.1 }
    }
}

/// The two-period binomial model with payoff depending only on the second
/// move: `P[Y1=+1] = p1`, `P[Y2=+1 | Y1=+1] = p2`, `P[Y2=+1 | Y1=-1] = p3`,
/// `psi = psi_u` if `Y2 = +1` and `psi_d` otherwise. Node ids: `root`, `u`, `d`,
/// `uu`, `ud`, `du`, `dd`.
pub fn two_period_counterexample(p1: f64, p2: f64, p3: f64, psi_u: f64, psi_d: f64) -> Result<ScenarioTree> {
    ScenarioTree::binomial(
        2,
        |path| match path {
            [] => p1,
            [1] => p2,
            _ => p3,
        },
        |path| vec![if path[1] > 0 { psi_u } else { psi_d }],
    )
}

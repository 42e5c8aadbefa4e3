use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::field::Field;
use crate::error::{Error, Result};
use crate::model::{ClaimInput, ClaimSpec, Model};

/// Largest tree the oracle will build.
pub const NODE_CAP: usize = 10_000_000;

/// One elementary event per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Up,
    Down,
    Mark(usize),
    Default,
}

/// Parameters of a serial event tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub depth: usize,
    pub dt: f64,
    /// Brownian proxy moves `+-delta` on up/down branches.
    pub delta: f64,
    /// Per-step probability of each mark (jump atom).
    pub mark_probs: Vec<f64>,
    /// Per-level default probability `q_k` (pre-default nodes only).
    pub default_probs: Vec<f64>,
    /// Market price of risk; enters only through `dB_hat = dB + phi dt`.
    pub phi: f64,
    pub sigma: f64,
    pub s0: f64,
}

impl TreeSpec {
    /// Tree matching a one-dimensional model with constant-in-step rates:
    /// `q_k = 1 - exp(-int lambda)` over step `k`, `pi_i = int zeta_i w_i` over
    /// the first step, `delta = sqrt(dt)`.
    pub fn from_model(model: &Model) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::validation("the tree oracle supports one Brownian dimension"));
        }
        let grid = &model.grid;
        let dt = grid.dt();
        let default_probs = (0..grid.n_steps())
            .map(|k| -(-model.intensity.hazard_between(grid.t(k), grid.t(k + 1))).exp_m1())
            .collect();
        let mark_probs = (0..model.n_atoms())
            .map(|i| model.levy.rate_integral(i, 0.0, dt))
            .collect();
        Ok(TreeSpec {
            depth: grid.n_steps(),
            dt,
            delta: dt.sqrt(),
            mark_probs,
            default_probs,
            phi: model.market.phi[0].eval(0.0),
            sigma: model.market.sigma.at(0.0)[(0, 0)],
            s0: model.market.s0[0],
        })
    }

    fn check(&self) -> Result<()> {
        if self.depth == 0 || !(self.dt > 0.0) || !(self.delta > 0.0) {
            return Err(Error::validation("tree needs depth >= 1, dt > 0 and delta > 0"));
        }
        if self.default_probs.len() != self.depth {
            return Err(Error::validation("one default probability per level required"));
        }
        let marks: f64 = self.mark_probs.iter().sum();
        for (k, q) in self.default_probs.iter().enumerate() {
            let all_ok = self.mark_probs.iter().chain([q]).all(|p| p.is_finite() && *p >= 0.0);
            if !all_ok || marks + q > 1.0 {
                return Err(Error::validation(format!(
                    "probability budget violated at level {k}: marks {marks} + default {q} > 1"
                )));
            }
        }
        Ok(())
    }

    pub fn n_marks(&self) -> usize {
        self.mark_probs.len()
    }

    /// Number of nodes, computed without building.
    pub fn node_count(&self) -> f64 {
        let active_marks = self.mark_probs.iter().filter(|p| **p > 0.0).count() as f64;
        let marks: f64 = self.mark_probs.iter().sum();
        let (mut pre, mut post, mut total) = (1.0f64, 0.0f64, 1.0f64);
        for q in &self.default_probs {
            let diff_pre = if 1.0 - marks - q > 0.0 { 2.0 } else { 0.0 };
            let diff_post = if 1.0 - marks > 0.0 { 2.0 } else { 0.0 };
            let has_q = if *q > 0.0 { 1.0 } else { 0.0 };
            let next_pre = pre * (diff_pre + active_marks);
            let next_post = pre * has_q + post * (diff_post + active_marks);
            pre = next_pre;
            post = next_post;
            total += pre + post;
        }
        total
    }
}

/// Transition probabilities in a chosen scalar field.
#[derive(Debug, Clone)]
pub struct ProbTable<T> {
    pub marks: Vec<T>,
    pub default: Vec<T>,
    pub half_pre: Vec<T>,
    pub half_post: T,
    pub delta: T,
}

impl<T: Field> ProbTable<T> {
    pub fn new(spec: &TreeSpec) -> Self {
        let marks: Vec<T> = spec.mark_probs.iter().map(|p| T::from_f64(*p)).collect();
        let mark_sum = marks.iter().fold(T::zero(), |a, b| a + b.clone());
        let two = T::one() + T::one();
        let default: Vec<T> = spec.default_probs.iter().map(|q| T::from_f64(*q)).collect();
        let half_pre = default
            .iter()
            .map(|q| (T::one() - mark_sum.clone() - q.clone()) / two.clone())
            .collect();
        ProbTable {
            half_post: (T::one() - mark_sum) / two,
            marks,
            default,
            half_pre,
            delta: T::from_f64(spec.delta),
        }
    }

    pub fn prob(&self, level: usize, defaulted: bool, branch: Branch) -> T {
        match branch {
            Branch::Up | Branch::Down => {
                if defaulted {
                    self.half_post.clone()
                } else {
                    self.half_pre[level].clone()
                }
            }
            Branch::Mark(i) => self.marks[i].clone(),
            Branch::Default => self.default[level].clone(),
        }
    }

    /// Brownian proxy increment on a branch.
    pub fn db(&self, branch: Branch) -> T {
        match branch {
            Branch::Up => self.delta.clone(),
            Branch::Down => -self.delta.clone(),
            _ => T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub level: usize,
    pub parent: Option<usize>,
    /// Branch taken from the parent; `None` for the root.
    pub branch: Option<Branch>,
    pub first_child: usize,
    pub n_children: usize,
    /// Brownian proxy `B_k`.
    pub b: f64,
    pub jumps: Vec<u32>,
    /// Level at which default happened.
    pub default_level: Option<usize>,
}

impl TreeNode {
    pub fn defaulted(&self) -> bool {
        self.default_level.is_some()
    }

    pub fn children(&self) -> Range<usize> {
        self.first_child..self.first_child + self.n_children
    }
}

/// Full non-recombining serial event tree, stored level by level.
#[derive(Debug, Clone)]
pub struct EventTree {
    pub spec: TreeSpec,
    pub nodes: Vec<TreeNode>,
    level_start: Vec<usize>,
    probs: ProbTable<f64>,
}

impl EventTree {
    pub fn level(&self, k: usize) -> Range<usize> {
        self.level_start[k]..self.level_start[k + 1]
    }

    pub fn depth(&self) -> usize {
        self.spec.depth
    }

    pub fn leaves(&self) -> Range<usize> {
        self.level(self.spec.depth)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn t(&self, level: usize) -> f64 {
        level as f64 * self.spec.dt
    }

    pub fn probs(&self) -> &ProbTable<f64> {
        &self.probs
    }

    /// Probability of moving from `node` into `child`.
    pub fn transition(&self, node: usize, child: usize) -> f64 {
        let n = &self.nodes[node];
        let branch = self.nodes[child].branch.expect("child has a branch");
        self.probs.prob(n.level, n.defaulted(), branch)
    }

    pub fn log_price(&self, node: usize) -> f64 {
        let n = &self.nodes[node];
        let t = self.t(n.level);
        let s = &self.spec;
        s.s0.ln() + s.sigma * (n.b + s.phi * t) - 0.5 * s.sigma * s.sigma * t
    }

    /// Default time of a node's history (`T` when no default).
    pub fn tau(&self, node: usize) -> f64 {
        let n = &self.nodes[node];
        n.default_level
            .map(|l| self.t(l))
            .unwrap_or(self.t(self.spec.depth))
    }

    /// Evaluates a claim at every leaf.
    pub fn leaf_values(&self, claim: &ClaimSpec) -> Result<Vec<f64>> {
        self.leaves()
            .map(|i| {
                let price = [self.log_price(i).exp()];
                claim.eval(&ClaimInput {
                    prices: &price,
                    defaulted: self.nodes[i].defaulted(),
                    tau: self.tau(i),
                    jumps: &self.nodes[i].jumps,
                })
            })
            .collect()
    }

    /// `Sum p_j` over the realized path probability of each leaf.
    pub fn leaf_probabilities(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.nodes.len()];
        p[0] = 1.0;
        for k in 0..self.spec.depth {
            for i in self.level(k) {
                for c in self.nodes[i].children() {
                    p[c] = p[i] * self.transition(i, c);
                }
            }
        }
        p[self.leaves()].to_vec()
    }
}

fn branches_at(spec: &TreeSpec, level: usize, defaulted: bool) -> Vec<Branch> {
    let marks: f64 = spec.mark_probs.iter().sum();
    let q = if defaulted { 0.0 } else { spec.default_probs[level] };
    let mut out = Vec::new();
    if 1.0 - marks - q > 0.0 {
        out.push(Branch::Up);
        out.push(Branch::Down);
    }
    for (i, p) in spec.mark_probs.iter().enumerate() {
        if *p > 0.0 {
            out.push(Branch::Mark(i));
        }
    }
    if q > 0.0 {
        out.push(Branch::Default);
    }
    out
}

/// Builds the full serial tree. Zero-probability branches are dropped.
pub fn build_tree(spec: TreeSpec) -> Result<EventTree> {
    spec.check()?;
    let count = spec.node_count();
    if count > NODE_CAP as f64 {
        return Err(Error::validation(format!(
            "tree would have {count:.3e} nodes, cap is {NODE_CAP}"
        )));
    }
    let m = spec.n_marks();
    let mut nodes = Vec::with_capacity(count as usize);
    nodes.push(TreeNode {
        level: 0,
        parent: None,
        branch: None,
        first_child: 0,
        n_children: 0,
        b: 0.0,
        jumps: vec![0; m],
        default_level: None,
    });
    let mut level_start = vec![0, 1];
    for level in 0..spec.depth {
        let range = level_start[level]..level_start[level + 1];
        for i in range {
            let first = nodes.len();
            let parent = nodes[i].clone();
            let branches = branches_at(&spec, level, parent.defaulted());
            for br in &branches {
                let mut child = TreeNode {
                    level: level + 1,
                    parent: Some(i),
                    branch: Some(*br),
                    first_child: 0,
                    n_children: 0,
                    b: parent.b,
                    jumps: parent.jumps.clone(),
                    default_level: parent.default_level,
                };
                match br {
                    Branch::Up => child.b += spec.delta,
                    Branch::Down => child.b -= spec.delta,
                    Branch::Mark(a) => child.jumps[*a] += 1,
                    Branch::Default => child.default_level = Some(level + 1),
                }
                nodes.push(child);
            }
            nodes[i].first_child = first;
            nodes[i].n_children = branches.len();
        }
        level_start.push(nodes.len());
    }
    let probs = ProbTable::new(&spec);
    Ok(EventTree {
        spec,
        nodes,
        level_start,
        probs,
    })
}

/// Conditional expectations of leaf values at every node, in field `T`.
pub fn conditional_all<T: Field>(tree: &EventTree, probs: &ProbTable<T>, leaf_values: &[T]) -> Vec<T> {
    let mut v = vec![T::zero(); tree.nodes.len()];
    for (slot, val) in tree.leaves().zip(leaf_values) {
        v[slot] = val.clone();
    }
    for k in (0..tree.depth()).rev() {
        for i in tree.level(k) {
            let node = &tree.nodes[i];
            let mut acc = T::zero();
            for c in node.children() {
                let br = tree.nodes[c].branch.expect("child branch");
                acc = acc + probs.prob(node.level, node.defaulted(), br) * v[c].clone();
            }
            v[i] = acc;
        }
    }
    v
}

/// Values of `E[leaf | node]` for the nodes of level `k`.
pub fn tree_conditional_expectation(tree: &EventTree, leaf_values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k > tree.depth() {
        return Err(Error::validation(format!(
            "level {k} outside 0..={}",
            tree.depth()
        )));
    }
    if leaf_values.len() != tree.n_leaves() {
        return Err(Error::validation("one value per leaf required"));
    }
    let all = conditional_all(tree, tree.probs(), leaf_values);
    Ok(all[tree.level(k)].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(depth: usize, marks: Vec<f64>, q: f64) -> TreeSpec {
        TreeSpec {
            depth,
            dt: 1.0 / depth as f64,
            delta: (1.0 / depth as f64).sqrt(),
            mark_probs: marks,
            default_probs: vec![q; depth],
            phi: 0.0,
            sigma: 1.0,
            s0: 1.0,
        }
    }

    #[test]
    fn three_leaves() {
        let mut s = spec(1, vec![], 0.1);
        s.delta = 1.0;
        let t = build_tree(s).unwrap();
        assert_eq!(t.n_leaves(), 3);
        let root = tree_conditional_expectation(&t, &[1.0, -1.0, 0.0], 0).unwrap();
        assert!(root[0].abs() < 1e-15);
    }

    #[test]
    fn leaf_count_bound() {
        let t = build_tree(spec(8, vec![0.05], 0.02)).unwrap();
        assert!(t.n_leaves() <= 4usize.pow(8));
        assert_eq!(t.nodes.len() as f64, t.spec.node_count());
    }

    #[test]
    fn no_default_branch_after_default() {
        let t = build_tree(spec(4, vec![0.1], 0.2)).unwrap();
        for (i, n) in t.nodes.iter().enumerate() {
            if n.defaulted() && n.level < 4 {
                assert!(n
                    .children()
                    .all(|c| t.nodes[c].branch != Some(Branch::Default)));
            }
            if n.level < 4 {
                let total: f64 = n.children().map(|c| t.transition(i, c)).sum();
                assert!((total - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn budget_violation() {
        assert!(build_tree(spec(2, vec![0.6], 0.5)).is_err());
        assert!(build_tree(spec(2, vec![-0.1], 0.1)).is_err());
    }

    #[test]
    fn node_cap() {
        assert!(build_tree(spec(14, vec![0.05, 0.05], 0.01)).is_err());
    }

    #[test]
    fn conditional_expectation_basics() {
        let t = build_tree(spec(3, vec![0.1], 0.1)).unwrap();
        let c = vec![2.5; t.n_leaves()];
        for k in 0..=3 {
            assert!(tree_conditional_expectation(&t, &c, k)
                .unwrap()
                .iter()
                .all(|v| (v - 2.5).abs() < 1e-14));
        }
        let vals: Vec<f64> = (0..t.n_leaves()).map(|i| (i as f64).sin()).collect();
        assert_eq!(tree_conditional_expectation(&t, &vals, 3).unwrap(), vals);
        assert!(tree_conditional_expectation(&t, &vals, 4).is_err());
        // tower property: E[E[. | level 2] | root] = E[. | root]
        let all = conditional_all(&t, t.probs(), &vals);
        let lp = t.leaf_probabilities();
        let direct: f64 = lp.iter().zip(&vals).map(|(p, v)| p * v).sum();
        assert!((all[0] - direct).abs() < 1e-14);
    }
}

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::field::{rank, solve, Field};
use super::tree::{conditional_all, Branch, EventTree, ProbTable};
use crate::error::{Error, Result};

/// Floating-point residual tolerance for representations.
pub const FLOAT_TOL: f64 = 1e-10;

/// Largest depth for which rational arithmetic is offered.
pub const EXACT_MAX_DEPTH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    #[default]
    Float,
    /// Rational arithmetic; only for shallow trees.
    Exact,
}

/// One-step martingale representation at a node:
/// `dN_j = K dB_j + sum_i W_i (1{mark i} - pi_i) + W_def (1{default} - q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRepresentation {
    pub k: f64,
    pub w: Vec<f64>,
    pub w_def: f64,
    pub residual: f64,
    pub n_outcomes: usize,
    pub span_dim: usize,
}

impl NodeRepresentation {
    fn leaf(m: usize) -> Self {
        NodeRepresentation {
            k: 0.0,
            w: vec![0.0; m],
            w_def: 0.0,
            residual: 0.0,
            n_outcomes: 0,
            span_dim: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Diffusion,
    Mark(usize),
    Default,
}

struct Basis<T> {
    columns: Vec<Column>,
    /// `rows[j][c]` = basis column `c` evaluated on child `j`.
    rows: Vec<Vec<T>>,
    probs: Vec<T>,
}

fn basis_at<T: Field>(tree: &EventTree, probs: &ProbTable<T>, node: usize) -> Basis<T> {
    let n = &tree.nodes[node];
    let children: Vec<Branch> = n
        .children()
        .map(|c| tree.nodes[c].branch.expect("child branch"))
        .collect();
    let mut columns = Vec::new();
    if children.contains(&Branch::Up) {
        columns.push(Column::Diffusion);
    }
    for br in &children {
        if let Branch::Mark(i) = br {
            columns.push(Column::Mark(*i));
        }
    }
    if children.contains(&Branch::Default) {
        columns.push(Column::Default);
    }
    let rows = children
        .iter()
        .map(|br| {
            columns
                .iter()
                .map(|col| match col {
                    Column::Diffusion => probs.db(*br),
                    Column::Mark(i) => {
                        let ind = if *br == Branch::Mark(*i) { T::one() } else { T::zero() };
                        ind - probs.marks[*i].clone()
                    }
                    Column::Default => {
                        let ind = if *br == Branch::Default { T::one() } else { T::zero() };
                        ind - probs.default[n.level].clone()
                    }
                })
                .collect()
        })
        .collect();
    let probs = children
        .iter()
        .map(|br| probs.prob(n.level, n.defaulted(), *br))
        .collect();
    Basis {
        columns,
        rows,
        probs,
    }
}

/// Representation of `increments` (one per child) at `node` in field `T`.
/// Returns the coefficients and the max absolute residual.
fn represent_node<T: Field>(
    tree: &EventTree,
    probs: &ProbTable<T>,
    node: usize,
    increments: &[T],
) -> Result<(NodeRepresentation, Vec<T>)> {
    let basis = basis_at(tree, probs, node);
    let nc = basis.columns.len();
    let n_out = basis.rows.len();
    // weighted normal equations B' P B c = B' P dN
    let mut a = vec![vec![T::zero(); nc]; nc];
    let mut b = vec![T::zero(); nc];
    for (j, row) in basis.rows.iter().enumerate() {
        let p = &basis.probs[j];
        for r in 0..nc {
            let pr = p.clone() * row[r].clone();
            for c in 0..nc {
                a[r][c] = a[r][c].clone() + pr.clone() * row[c].clone();
            }
            b[r] = b[r].clone() + pr * increments[j].clone();
        }
    }
    let coef = if nc == 0 {
        Vec::new()
    } else {
        solve(a, b).ok_or_else(|| {
            Error::solver(
                "oracle",
                format!("rank-deficient representation basis at node {node}"),
            )
        })?
    };
    let mut residual = 0.0f64;
    for (j, row) in basis.rows.iter().enumerate() {
        let mut fit = T::zero();
        for (c, v) in coef.iter().zip(row) {
            fit = fit + c.clone() * v.clone();
        }
        let r = (increments[j].clone() - fit).abs().to_f64();
        residual = residual.max(r);
    }
    let mut rep = NodeRepresentation::leaf(tree.spec.n_marks());
    rep.residual = residual;
    rep.n_outcomes = n_out;
    rep.span_dim = rank(basis.rows.clone(), 1e-14);
    for (col, c) in basis.columns.iter().zip(&coef) {
        match col {
            Column::Diffusion => rep.k = c.to_f64(),
            Column::Mark(i) => rep.w[*i] = c.to_f64(),
            Column::Default => rep.w_def = c.to_f64(),
        }
    }
    Ok((rep, coef))
}

/// Representation of the martingale `E[leaf | node]` at every node, indexed by
/// node id (leaves carry an empty representation).
pub fn tree_representation(
    tree: &EventTree,
    terminal: &[f64],
    arithmetic: Arithmetic,
) -> Result<Vec<NodeRepresentation>> {
    if terminal.len() != tree.n_leaves() {
        return Err(Error::validation("one terminal value per leaf required"));
    }
    match arithmetic {
        Arithmetic::Float => represent_all(tree, tree.probs(), terminal.to_vec()),
        Arithmetic::Exact => {
            if tree.depth() > EXACT_MAX_DEPTH {
                return Err(Error::validation(format!(
                    "exact arithmetic limited to depth {EXACT_MAX_DEPTH}"
                )));
            }
            let probs = ProbTable::<BigRational>::new(&tree.spec);
            let leaves = terminal.iter().map(|v| <BigRational as Field>::from_f64(*v)).collect();
            represent_all(tree, &probs, leaves)
        }
    }
}

fn represent_all<T: Field>(
    tree: &EventTree,
    probs: &ProbTable<T>,
    leaves: Vec<T>,
) -> Result<Vec<NodeRepresentation>> {
    let values = conditional_all(tree, probs, &leaves);
    let m = tree.spec.n_marks();
    let mut out = vec![NodeRepresentation::leaf(m); tree.nodes.len()];
    for k in 0..tree.depth() {
        for i in tree.level(k) {
            let inc: Vec<T> = tree.nodes[i]
                .children()
                .map(|c| values[c].clone() - values[i].clone())
                .collect();
            out[i] = represent_node(tree, probs, i, &inc)?.0;
        }
    }
    Ok(out)
}

/// Representation of explicit child increments at one node, in floating point.
pub fn represent_increment(tree: &EventTree, node: usize, increments: &[f64]) -> Result<NodeRepresentation> {
    if increments.len() != tree.nodes[node].n_children {
        return Err(Error::validation("one increment per child required"));
    }
    Ok(represent_node(tree, tree.probs(), node, increments)?.0)
}

/// Largest residual across nodes.
pub fn max_residual(reps: &[NodeRepresentation]) -> f64 {
    reps.iter().map(|r| r.residual).fold(0.0, f64::max)
}

/// `true` when every internal node spans its `outcomes - 1` mean-zero directions.
pub fn spans_everywhere(reps: &[NodeRepresentation]) -> bool {
    reps.iter()
        .filter(|r| r.n_outcomes > 0)
        .all(|r| r.span_dim + 1 == r.n_outcomes)
}

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::represent::{NodeRepresentation, FLOAT_TOL};
use super::tree::{Branch, EventTree, TreeSpec};
use crate::bsde::generator::{generator_f, GeneratorSpec, Horizon};
use crate::error::{Error, Result};
use crate::model::{FiniteLevyMeasure, IntensitySpec, TimeFn};

/// Discrete driver used by [`tree_bsde`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    /// `Y_k = E[Y_{k+1}] + f(t_k, Z, W) dt` with the continuous-time generator.
    #[default]
    Continuous,
    /// Exact one-step exponential-utility driver of a symmetric binomial
    /// tree (no marks, no default): coincides with the DP recursion.
    ExactDiscrete,
}

/// Generator whose rates match the tree's branch probabilities:
/// constant `phi`, mark rates `pi_i / dt`, and a piecewise-constant default
/// intensity with `q_k = 1 - exp(-lambda_k dt)`.
pub fn tree_generator(spec: &TreeSpec, alpha: f64) -> Result<GeneratorSpec> {
    let dt = spec.dt;
    let zeta: Vec<f64> = spec.mark_probs.iter().map(|p| p / dt).collect();
    let atoms = (0..zeta.len()).map(|i| vec![(i + 1) as f64]).collect();
    let weights = vec![1.0; zeta.len()];
    let lambdas: Vec<f64> = spec
        .default_probs
        .iter()
        .map(|q| -(-q).ln_1p() / dt)
        .collect();
    let lambda_max = lambdas.iter().cloned().fold(0.0, f64::max);
    let lambda = if lambdas.iter().all(|l| *l == lambdas[0]) {
        TimeFn::constant(lambdas[0])
    } else {
        let breaks = (1..spec.depth).map(|k| k as f64 * dt).collect();
        TimeFn::piecewise(breaks, lambdas)?
    };
    Ok(GeneratorSpec {
        alpha,
        phi: vec![TimeFn::constant(spec.phi)],
        phi_max: spec.phi.abs(),
        levy: FiniteLevyMeasure::constant(atoms, weights, zeta),
        intensity: IntensitySpec::new(lambda, lambda_max),
        horizon: Horizon::Fixed,
        default_term: true,
    })
}

/// Discrete BSDE on a tree.
#[derive(Debug, Clone)]
pub struct TreeBsde {
    /// `Y` at every node.
    pub y: Vec<f64>,
    /// Representation of `Y_{k+1}` at every internal node.
    pub reps: Vec<NodeRepresentation>,
}

impl TreeBsde {
    pub fn y0(&self) -> f64 {
        self.y[0]
    }
}

fn exact_discrete_driver(tree: &EventTree, alpha: f64, z: f64) -> f64 {
    let s = &tree.spec;
    let r = s.phi * s.dt / s.delta;
    -z * s.phi * s.dt + (-r * r.atanh() - 0.5 * (-r * r).ln_1p()) / alpha
}

fn check_binomial(tree: &EventTree) -> Result<()> {
    let s = &tree.spec;
    if s.n_marks() > 0 || s.default_probs.iter().any(|q| *q != 0.0) {
        return Err(Error::validation(
            "exact discrete driver requires a tree without marks or default",
        ));
    }
    if (s.phi * s.dt).abs() >= s.delta {
        return Err(Error::validation("exact discrete driver requires |phi| dt < delta"));
    }
    Ok(())
}

/// Backward recursion `Y_n = xi`, `Y_k = E[Y_{k+1} | node] + f(t_k, Z_k, W_k) dt`
/// with `(Z, W)` from the one-step representation of `Y_{k+1}`.
pub fn tree_bsde(
    tree: &EventTree,
    claim: &[f64],
    generator: &GeneratorSpec,
    driver: DriverKind,
) -> Result<TreeBsde> {
    if claim.len() != tree.n_leaves() {
        return Err(Error::validation("one claim value per leaf required"));
    }
    if driver == DriverKind::ExactDiscrete {
        check_binomial(tree)?;
    }
    let m = tree.spec.n_marks();
    let mut y = vec![0.0; tree.nodes.len()];
    for (slot, v) in tree.leaves().zip(claim) {
        y[slot] = *v;
    }
    let mut reps = vec![
        NodeRepresentation {
            k: 0.0,
            w: vec![0.0; m],
            w_def: 0.0,
            residual: 0.0,
            n_outcomes: 0,
            span_dim: 0,
        };
        tree.nodes.len()
    ];
    let dt = tree.spec.dt;
    for k in (0..tree.depth()).rev() {
        let t = tree.t(k);
        for i in tree.level(k) {
            let node = &tree.nodes[i];
            let mut e = 0.0;
            for c in node.children() {
                e += tree.transition(i, c) * y[c];
            }
            let inc: Vec<f64> = node.children().map(|c| y[c] - e).collect();
            let rep = super::represent::represent_increment(tree, i, &inc)?;
            if rep.residual > FLOAT_TOL * (1.0 + e.abs()) {
                return Err(Error::solver(
                    "oracle",
                    format!("representation residual {:.3e} at node {i}", rep.residual),
                ));
            }
            let f = match driver {
                DriverKind::Continuous => {
                    generator_f(generator, t, &[rep.k], &rep.w, rep.w_def, !node.defaulted())
                        .map_err(|e| {
                            Error::solver("oracle", format!("node {i} (level {k}): {e}"))
                        })?
                        * dt
                }
                DriverKind::ExactDiscrete => exact_discrete_driver(tree, generator.alpha, rep.k),
            };
            y[i] = e + f;
            reps[i] = rep;
        }
    }
    Ok(TreeBsde { y, reps })
}

/// Result of the exhaustive exponential-utility optimization.
#[derive(Debug, Clone)]
pub struct DpSolution {
    /// `-exp(-alpha x) G_0`.
    pub value: f64,
    /// `(1/alpha) ln G_0`, comparable with the BSDE `Y_0`.
    pub y0: f64,
    /// Optimal position per internal node (NaN at leaves).
    pub theta: Vec<f64>,
    /// `ln G` per node.
    pub log_g: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Minimizes the convex `h(theta) = ln sum_j exp(a_j - c theta b_j)`.
fn minimize_node(a: &[f64], b: &[f64], c: f64, node: usize) -> Result<(f64, f64)> {
    let eval = |theta: f64| -> (f64, f64, f64) {
        let xs: Vec<f64> = a.iter().zip(b).map(|(ai, bi)| ai - c * theta * bi).collect();
        let h = log_sum_exp(&xs);
        let w: Vec<f64> = xs.iter().map(|x| (x - h).exp()).collect();
        let mean: f64 = w.iter().zip(b).map(|(wi, bi)| wi * bi).sum();
        let var: f64 = w.iter().zip(b).map(|(wi, bi)| wi * (bi - mean).powi(2)).sum();
        (h, -c * mean, c * c * var)
    };
    if !(b.iter().any(|x| *x > 0.0) && b.iter().any(|x| *x < 0.0)) {
        return Err(Error::solver(
            "oracle",
            format!("no interior optimum at node {node}: drift-adjusted moves share a sign"),
        ));
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while eval(lo).1 > 0.0 {
        lo *= 2.0;
        if lo < -1e12 {
            return Err(Error::solver("oracle", format!("bracketing failed at node {node}")));
        }
    }
    while eval(hi).1 < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::solver("oracle", format!("bracketing failed at node {node}")));
        }
    }
    let mut theta = 0.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let (_, g, h2) = eval(theta);
        if g > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let newton = if h2 > 0.0 { theta - g / h2 } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - theta).abs();
        theta = next;
        if step <= 1e-12 * (1.0 + theta.abs()) || hi - lo <= 1e-14 {
            return Ok((theta, eval(theta).0));
        }
    }
    Err(Error::solver(
        "oracle",
        format!("scalar optimizer did not converge at node {node}"),
    ))
}

/// Backward DP over exponential utility with `V_k = -exp(-alpha x_k) G_k`,
/// `G_n = exp(alpha xi)`, `G_k = min_theta E[exp(-alpha theta dB_hat) G_{k+1}]`
/// and `dB_hat = dB + phi dt`.
pub fn tree_dp_optimize(tree: &EventTree, claim: &[f64], alpha: f64, x: f64) -> Result<DpSolution> {
    if claim.len() != tree.n_leaves() {
        return Err(Error::validation("one claim value per leaf required"));
    }
    if !(alpha > 0.0) {
        return Err(Error::validation("alpha must be positive"));
    }
    let n = tree.nodes.len();
    let mut log_g = vec![0.0; n];
    let mut theta = vec![f64::NAN; n];
    for (slot, v) in tree.leaves().zip(claim) {
        log_g[slot] = alpha * v;
    }
    let drift = tree.spec.phi * tree.spec.dt;
    for k in (0..tree.depth()).rev() {
        for i in tree.level(k) {
            let node = &tree.nodes[i];
            let mut a = Vec::with_capacity(node.n_children);
            let mut b = Vec::with_capacity(node.n_children);
            for c in node.children() {
                let br = tree.nodes[c].branch.expect("child branch");
                a.push(tree.transition(i, c).ln() + log_g[c]);
                b.push(tree.probs().db(br) + drift);
            }
            let (th, h) = minimize_node(&a, &b, alpha, i)?;
            theta[i] = th;
            log_g[i] = h;
        }
    }
    let y0 = log_g[0] / alpha;
    Ok(DpSolution {
        value: -(-alpha * x + log_g[0]).exp(),
        y0,
        theta,
        log_g,
    })
}

/// On-tree compensator `sum_{l < level ^ default} -ln(1 - q_l)`.
pub fn tree_compensator(tree: &EventTree, node: usize) -> f64 {
    let n = &tree.nodes[node];
    let stop = n.default_level.unwrap_or(n.level).min(n.level);
    tree.spec.default_probs[..stop]
        .iter()
        .map(|q| -(-q).ln_1p())
        .sum()
}

fn state_label(tree: &EventTree, node: usize) -> String {
    let n = &tree.nodes[node];
    let mut s = format!("b={:.6};jumps=", n.b);
    for (i, j) in n.jumps.iter().enumerate() {
        if i > 0 {
            s.push('|');
        }
        let _ = write!(s, "{j}");
    }
    match n.default_level {
        Some(l) => {
            let _ = write!(s, ";default={l}");
        }
        None => s.push_str(";default=none"),
    }
    s
}

/// Writes `node_id,t,state,Y,K,W_1..W_m,W_def,residual`.
pub fn write_tree_csv(tree: &EventTree, bsde: &TreeBsde, out: &mut dyn Write) -> Result<()> {
    let m = tree.spec.n_marks();
    let mut header = String::from("node_id,t,state,Y,K");
    for i in 1..=m {
        let _ = write!(header, ",W_{i}");
    }
    header.push_str(",W_def,residual");
    writeln!(out, "{header}")?;
    for (i, node) in tree.nodes.iter().enumerate() {
        let r = &bsde.reps[i];
        let mut line = format!(
            "{i},{},{},{},{}",
            tree.t(node.level),
            state_label(tree, i),
            bsde.y[i],
            r.k
        );
        for w in &r.w {
            let _ = write!(line, ",{w}");
        }
        let _ = write!(line, ",{},{}", r.w_def, r.residual);
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// `true` when every post-default subtree is free of default branches.
pub fn post_default_clean(tree: &EventTree) -> bool {
    tree.nodes.iter().all(|n| {
        !n.defaulted()
            || n.children()
                .all(|c| tree.nodes[c].branch != Some(Branch::Default))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::tree::build_tree;

    fn binomial(depth: usize, dt: f64, delta: f64, phi: f64) -> EventTree {
        build_tree(TreeSpec {
            depth,
            dt,
            delta,
            mark_probs: vec![],
            default_probs: vec![0.0; depth],
            phi,
            sigma: 1.0,
            s0: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn merton_one_step() {
        let t = binomial(1, 1.0, 1.0, 0.2);
        let g = tree_generator(&t.spec, 1.0).unwrap();
        let b = tree_bsde(&t, &[0.0, 0.0], &g, DriverKind::Continuous).unwrap();
        assert!((b.y0() + 0.02).abs() < 1e-15);
    }

    #[test]
    fn bond_one_step() {
        let q = -(-0.3f64).exp_m1();
        let t = build_tree(TreeSpec {
            depth: 1,
            dt: 1.0,
            delta: 1.0,
            mark_probs: vec![],
            default_probs: vec![q],
            phi: 0.0,
            sigma: 1.0,
            s0: 1.0,
        })
        .unwrap();
        let g = tree_generator(&t.spec, 1.0).unwrap();
        let b = tree_bsde(&t, &[1.0, 1.0, 0.0], &g, DriverKind::Continuous).unwrap();
        assert!((b.reps[0].w_def + 1.0).abs() < 1e-14);
        assert!((b.y0() - 0.851182053).abs() < 1e-8);
    }

    #[test]
    fn constant_claim() {
        let t = build_tree(TreeSpec {
            depth: 4,
            dt: 0.25,
            delta: 0.5,
            mark_probs: vec![0.05],
            default_probs: vec![0.03; 4],
            phi: 0.0,
            sigma: 1.0,
            s0: 1.0,
        })
        .unwrap();
        let g = tree_generator(&t.spec, 1.0).unwrap();
        let b = tree_bsde(&t, &vec![0.7; t.n_leaves()], &g, DriverKind::Continuous).unwrap();
        assert!(b.y.iter().all(|y| (y - 0.7).abs() < 1e-14));
    }

    #[test]
    fn dp_one_step() {
        let t = binomial(1, 1.0, 1.0, 0.2);
        let dp = tree_dp_optimize(&t, &[0.0, 0.0], 1.0, 0.0).unwrap();
        assert!((dp.theta[0] - 0.2027325541).abs() < 1e-9);
        assert!((dp.value + 0.9800658521).abs() < 1e-9);
    }

    #[test]
    fn dp_symmetric() {
        let t = binomial(3, 1.0 / 3.0, (1.0f64 / 3.0).sqrt(), 0.0);
        let dp = tree_dp_optimize(&t, &vec![0.0; t.n_leaves()], 2.0, 0.5).unwrap();
        assert!(dp.theta[0].abs() < 1e-12);
        assert!((dp.value + (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn dp_matches_exact_driver() {
        let n = 8;
        let dt = 1.0 / n as f64;
        let t = binomial(n, dt, dt.sqrt(), 0.3);
        let g = tree_generator(&t.spec, 1.5).unwrap();
        let claim: Vec<f64> = t.leaves().map(|i| (t.nodes[i].b).tanh()).collect();
        let b = tree_bsde(&t, &claim, &g, DriverKind::ExactDiscrete).unwrap();
        let dp = tree_dp_optimize(&t, &claim, 1.5, 0.0).unwrap();
        assert!((b.y0() - dp.y0).abs() < 1e-10);
        let zero = vec![0.0; t.n_leaves()];
        let merton = tree_bsde(&t, &zero, &g, DriverKind::Continuous).unwrap();
        let merton_dp = tree_dp_optimize(&t, &zero, 1.5, 0.0).unwrap();
        // continuous driver differs at order phi^4 dt
        assert!((merton.y0() - merton_dp.y0).abs() < 1e-3);
    }

    #[test]
    fn csv_export() {
        let t = binomial(2, 0.5, 0.5f64.sqrt(), 0.1);
        let g = tree_generator(&t.spec, 1.0).unwrap();
        let b = tree_bsde(&t, &[1.0, 0.0, 0.0, -1.0], &g, DriverKind::Continuous).unwrap();
        let mut buf = Vec::new();
        write_tree_csv(&t, &b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + t.nodes.len());
        assert!(text.starts_with("node_id,t,state,Y,K,W_def,residual"));
    }

    #[test]
    fn compensator_matches_hazard() {
        let q = -(-0.1f64).exp_m1();
        let t = build_tree(TreeSpec {
            depth: 3,
            dt: 1.0 / 3.0,
            delta: (1.0f64 / 3.0).sqrt(),
            mark_probs: vec![],
            default_probs: vec![q; 3],
            phi: 0.0,
            sigma: 1.0,
            s0: 1.0,
        })
        .unwrap();
        assert!(post_default_clean(&t));
        let leaf = t.leaves().find(|i| !t.nodes[*i].defaulted()).unwrap();
        assert!((tree_compensator(&t, leaf) - 0.3).abs() < 1e-14);
    }
}

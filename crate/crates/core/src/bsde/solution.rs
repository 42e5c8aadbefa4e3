use std::io::Write;

use serde::Serialize;

use super::generator::{generator_f, GeneratorSpec, Horizon};
use super::lsmc::{reduce_chunks, LsmcFits, StateRef};
use super::ode::OdeSolution;
use crate::error::{Error, Result};
use crate::market::{NodeState, ScenarioBundle};
use crate::model::{Model, TimeFn, TimeGrid};
use crate::stats::Estimate;

#[derive(Debug, Clone)]
pub enum SolutionKind {
    Ode(OdeSolution),
    Lsmc(Box<LsmcFits>),
}

/// `(Y, Z, W, W_def)` at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues {
    pub y: f64,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub w_def: f64,
}

/// Cross-path summary at one grid node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStats {
    pub t: f64,
    pub y_mean: f64,
    pub y_se: f64,
    pub z_mean: Vec<f64>,
    pub w_mean: Vec<f64>,
    pub w_def_mean: f64,
    pub clamp_hits: usize,
}

/// Solution of the BSDE as functions of the node state.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub kind: SolutionKind,
    pub alpha: f64,
    pub phi: Vec<TimeFn>,
    pub phi_max: f64,
    pub horizon: Horizon,
    pub grid: TimeGrid,
    /// A-priori bound on `|Y|`.
    pub clamp: f64,
    pub stats: Vec<NodeStats>,
    pub warnings: Vec<String>,
}

impl BsdeSolution {
    pub(crate) fn new(kind: SolutionKind, spec: &GeneratorSpec, grid: TimeGrid, clamp: f64) -> Self {
        BsdeSolution {
            kind,
            alpha: spec.alpha,
            phi: spec.phi.clone(),
            phi_max: spec.phi_max,
            horizon: spec.horizon,
            grid,
            clamp,
            stats: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Wraps an ODE solution.
    pub fn from_ode(ode: OdeSolution, spec: &GeneratorSpec, grid: TimeGrid) -> Self {
        let clamp = ode
            .y_pre
            .iter()
            .chain(&ode.y_post)
            .fold(0.0f64, |a, b| a.max(b.abs()));
        BsdeSolution::new(SolutionKind::Ode(ode), spec, grid, clamp)
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    pub fn n_atoms(&self) -> usize {
        match &self.kind {
            SolutionKind::Ode(_) => 0,
            SolutionKind::Lsmc(f) => f.m,
        }
    }

    /// `Y_0` at the initial state.
    pub fn y0(&self) -> f64 {
        match &self.kind {
            SolutionKind::Ode(o) => o.y0(),
            SolutionKind::Lsmc(_) => self.stats.first().map(|s| s.y_mean).unwrap_or(f64::NAN),
        }
    }

    /// Monte Carlo standard error of `Y_0` (zero for the ODE solver).
    pub fn y0_se(&self) -> f64 {
        match &self.kind {
            SolutionKind::Ode(_) => 0.0,
            SolutionKind::Lsmc(f) => f.y0_se,
        }
    }

    /// Bound on `|Z|` used when the solution drives a strategy.
    pub fn z_bound(&self) -> f64 {
        match &self.kind {
            SolutionKind::Ode(_) => 0.0,
            SolutionKind::Lsmc(f) => f.bounds.z_clip * (f.d as f64).sqrt(),
        }
    }

    pub fn values_at(&self, node: &NodeState<'_>) -> Result<NodeValues> {
        let d = self.dim();
        match &self.kind {
            SolutionKind::Ode(o) => {
                if node.k >= o.y_pre.len() {
                    return Err(Error::validation("node index outside the grid"));
                }
                let m = node.jumps.len();
                if node.defaulted {
                    Ok(NodeValues {
                        y: o.post_value(node.k, node.tau)?,
                        z: vec![0.0; d],
                        w: vec![0.0; m],
                        w_def: 0.0,
                    })
                } else {
                    Ok(NodeValues {
                        y: o.y_pre[node.k],
                        z: vec![0.0; d],
                        w: vec![0.0; m],
                        w_def: o.w_def(node.k),
                    })
                }
            }
            SolutionKind::Lsmc(f) => {
                let s = StateRef {
                    k: node.k,
                    log_s: node.log_s,
                    stopped_log_s: node.stopped_log_s,
                    jumps: node.jumps,
                    tau: node.tau,
                };
                let e = if node.defaulted { f.post_eval(&s)? } else { f.pre_eval(&s)? };
                Ok(NodeValues {
                    y: e.y,
                    z: e.z,
                    w: e.w,
                    w_def: if node.defaulted { 0.0 } else { e.w_def },
                })
            }
        }
    }

    pub fn y_at(&self, node: &NodeState<'_>) -> Result<f64> {
        Ok(self.values_at(node)?.y)
    }

    pub fn z_at(&self, node: &NodeState<'_>, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.values_at(node)?.z);
        Ok(())
    }

    pub fn wjump_at(&self, node: &NodeState<'_>, out: &mut [f64]) -> Result<()> {
        let w = self.values_at(node)?.w;
        for (o, v) in out.iter_mut().zip(w.iter().chain(std::iter::repeat(&0.0))) {
            *o = *v;
        }
        Ok(())
    }

    pub fn wdef_at(&self, node: &NodeState<'_>) -> Result<f64> {
        Ok(self.values_at(node)?.w_def)
    }

    fn clamp_hits(&self, k: usize) -> usize {
        match &self.kind {
            SolutionKind::Ode(_) => 0,
            SolutionKind::Lsmc(f) => f.clamp_hits.get(k).copied().unwrap_or(0),
        }
    }
}

struct NodeSums {
    s1: Vec<f64>,
    s2: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    wd: Vec<f64>,
    n: usize,
}

/// Cross-path means of `(Y, Z, W, W_def)` along realized states.
pub fn node_stats(solution: &BsdeSolution, bundles: &[ScenarioBundle], model: &Model) -> Result<Vec<NodeStats>> {
    let n1 = model.grid.n_steps() + 1;
    let d = model.dim();
    let m = model.n_atoms();
    let empty = || NodeSums {
        s1: vec![0.0; n1],
        s2: vec![0.0; n1],
        z: vec![0.0; n1 * d],
        w: vec![0.0; n1 * m],
        wd: vec![0.0; n1],
        n: 0,
    };
    let mut total = empty();
    reduce_chunks(
        bundles.len(),
        |range| {
            let mut acc = empty();
            for p in range {
                bundles[p].for_each_node(model, |node| {
                    let v = solution.values_at(node)?;
                    let k = node.k;
                    acc.s1[k] += v.y;
                    acc.s2[k] += v.y * v.y;
                    for j in 0..d {
                        acc.z[k * d + j] += v.z[j];
                    }
                    for i in 0..m.min(v.w.len()) {
                        acc.w[k * m + i] += v.w[i];
                    }
                    acc.wd[k] += v.w_def;
                    Ok(())
                })?;
                acc.n += 1;
            }
            Ok(acc)
        },
        |a| {
            for (x, y) in total.s1.iter_mut().zip(&a.s1) {
                *x += y;
            }
            for (x, y) in total.s2.iter_mut().zip(&a.s2) {
                *x += y;
            }
            for (x, y) in total.z.iter_mut().zip(&a.z) {
                *x += y;
            }
            for (x, y) in total.w.iter_mut().zip(&a.w) {
                *x += y;
            }
            for (x, y) in total.wd.iter_mut().zip(&a.wd) {
                *x += y;
            }
            total.n += a.n;
        },
    )?;
    let n = total.n.max(1) as f64;
    Ok((0..n1)
        .map(|k| {
            let mean = total.s1[k] / n;
            let var = (total.s2[k] / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
            // Y_0 is a single number; its error comes from the regression
            let y_se = if k == 0 { solution.y0_se() } else { (var / n).sqrt() };
            NodeStats {
                t: model.grid.t(k),
                y_mean: mean,
                y_se,
                z_mean: (0..d).map(|j| total.z[k * d + j] / n).collect(),
                w_mean: (0..m).map(|i| total.w[k * m + i] / n).collect(),
                w_def_mean: total.wd[k] / n,
                clamp_hits: solution.clamp_hits(k),
            }
        })
        .collect())
}

/// Writes `t,Y_mean,Y_se,Z_mean_j..,W_i_mean..,W_def_mean,clamp_hits`.
pub fn write_bsde_csv(stats: &[NodeStats], out: &mut dyn Write) -> Result<()> {
    let d = stats.first().map(|s| s.z_mean.len()).unwrap_or(0);
    let m = stats.first().map(|s| s.w_mean.len()).unwrap_or(0);
    let mut header = String::from("t,Y_mean,Y_se");
    for j in 1..=d {
        header.push_str(&format!(",Z_mean_{j}"));
    }
    for i in 1..=m {
        header.push_str(&format!(",W_{i}_mean"));
    }
    header.push_str(",W_def_mean,clamp_hits");
    writeln!(out, "{header}")?;
    for s in stats {
        let mut line = format!("{},{},{}", s.t, s.y_mean, s.y_se);
        for z in &s.z_mean {
            line.push_str(&format!(",{z}"));
        }
        for w in &s.w_mean {
            line.push_str(&format!(",{w}"));
        }
        line.push_str(&format!(",{},{}", s.w_def_mean, s.clamp_hits));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Forward-read BSDE residuals of one path, one per step:
/// `Y_{k+1} - Y_k + f dt - Z dB - sum_i W_i (dN_i - pi_i) - W_def (dH - q)`.
pub fn path_residuals(
    solution: &BsdeSolution,
    spec: &GeneratorSpec,
    bundle: &ScenarioBundle,
    model: &Model,
) -> Result<Vec<f64>> {
    let grid = &model.grid;
    let m = model.n_atoms();
    let mut out = Vec::with_capacity(grid.n_steps());
    let mut prev: Option<(NodeValues, bool, Vec<u32>)> = None;
    bundle.for_each_node(model, |node| {
        let v = solution.values_at(node)?;
        if let Some((pv, pdef, pjumps)) = prev.take() {
            let k = node.k - 1;
            let (t, t1) = (grid.t(k), grid.t(k + 1));
            let mut r = v.y - pv.y;
            r += generator_f(spec, t, &pv.z, &pv.w, pv.w_def, !pdef)? * grid.dt();
            r -= pv.z.iter().zip(bundle.db(k)).map(|(z, db)| z * db).sum::<f64>();
            for i in 0..m.min(pv.w.len()) {
                let dn = (node.jumps[i] - pjumps[i]) as f64;
                r -= pv.w[i] * (dn - spec.levy.rate_integral(i, t, t1));
            }
            if !pdef {
                let q = -(-spec.intensity.hazard_between(t, t1)).exp_m1();
                let dh = if node.defaulted { 1.0 } else { 0.0 };
                r -= pv.w_def * (dh - q);
            }
            out.push(r);
        }
        prev = Some((v, node.defaulted, node.jumps.to_vec()));
        Ok(())
    })?;
    Ok(out)
}

/// Drift residuals of one path, one per step: `Y_{k+1} - Y_k + f dt`.
///
/// The stochastic integrals are left in, so each residual has mean zero
/// across paths and a genuine Monte Carlo standard error. The in-sample
/// mean of `Z dB` is not zero (it carries the sample mean of `dB`), which
/// makes the fully compensated residual of [`path_residuals`] unsuitable for
/// a mean test.
pub fn path_drift_residuals(
    solution: &BsdeSolution,
    spec: &GeneratorSpec,
    bundle: &ScenarioBundle,
    model: &Model,
) -> Result<Vec<f64>> {
    let grid = &model.grid;
    let mut out = Vec::with_capacity(grid.n_steps());
    let mut prev: Option<(NodeValues, bool)> = None;
    bundle.for_each_node(model, |node| {
        let v = solution.values_at(node)?;
        if let Some((pv, pdef)) = prev.take() {
            let t = grid.t(node.k - 1);
            out.push(v.y - pv.y + generator_f(spec, t, &pv.z, &pv.w, pv.w_def, !pdef)? * grid.dt());
        }
        prev = Some((v, node.defaulted));
        Ok(())
    })?;
    Ok(out)
}

/// Per-step means of the drift residuals (see [`path_drift_residuals`]),
/// plus the estimate of their per-path sum. The sum is the pathwise value
/// `xi + sum f dt` minus `Y_0`, so its standard error is the Monte Carlo
/// error of `Y_0`.
pub fn residual_summary(
    solution: &BsdeSolution,
    spec: &GeneratorSpec,
    bundles: &[ScenarioBundle],
    model: &Model,
) -> Result<(Vec<Estimate>, Estimate)> {
    let n = model.grid.n_steps();
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    let (mut t1, mut t2) = (0.0, 0.0);
    reduce_chunks(
        bundles.len(),
        |range| {
            let mut a1 = vec![0.0; n];
            let mut a2 = vec![0.0; n];
            let (mut b1, mut b2) = (0.0, 0.0);
            for p in range {
                let r = path_drift_residuals(solution, spec, &bundles[p], model)?;
                for (k, v) in r.iter().enumerate() {
                    a1[k] += v;
                    a2[k] += v * v;
                }
                let total: f64 = r.iter().sum();
                b1 += total;
                b2 += total * total;
            }
            Ok((a1, a2, b1, b2))
        },
        |(a1, a2, b1, b2)| {
            for k in 0..n {
                s1[k] += a1[k];
                s2[k] += a2[k];
            }
            t1 += b1;
            t2 += b2;
        },
    )?;
    let count = bundles.len();
    let estimate = |sum: f64, sq: f64| {
        let nn = count as f64;
        let mean = sum / nn;
        let var = (sq / nn - mean * mean).max(0.0) * nn / (nn - 1.0).max(1.0);
        Estimate {
            mean,
            se: (var / nn).sqrt(),
            n: count,
        }
    };
    let steps = (0..n).map(|k| estimate(s1[k], s2[k])).collect();
    Ok((steps, estimate(t1, t2)))
}

/// Per-step means of the drift residuals (see [`path_drift_residuals`]).
pub fn martingale_residuals(
    solution: &BsdeSolution,
    spec: &GeneratorSpec,
    bundles: &[ScenarioBundle],
    model: &Model,
) -> Result<Vec<Estimate>> {
    Ok(residual_summary(solution, spec, bundles, model)?.0)
}

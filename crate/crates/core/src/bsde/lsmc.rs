//! Least-squares Monte Carlo for the quadratic-exponential BSDE with jumps.
//!
//! The post-default layer is solved first; the pre-default layer then uses
//! `W_def = Y_post - Y_pre` at a default placed at the end of the step.
//! Conditional expectations are taken under "no event in the step" and
//! corrected with the event probabilities:
//! `E_k[Y_{k+1}] = E_k[V + sum_i pi_i W_i + q W_def]`.

use std::ops::Range;

use nalgebra::DMatrix;

use super::basis::{Moments, StateShape, StepBasis};
use super::generator::{apriori_bound, generator_f, GeneratorSpec, Horizon, EXP_LIMIT};
use super::solution::{node_stats, residual_summary, BsdeSolution, SolutionKind};
use crate::error::{Error, Result};
use crate::market::{simulate, ScenarioBundle};
use crate::model::{ClaimInput, ClaimKind, ClaimSpec, Measurability, Model};
use crate::parallel::{try_map_indexed, with_workers};

/// Paths per reduction chunk; fixed so sums do not depend on the worker count.
pub const CHUNK: usize = 2048;
/// Largest accepted condition number of a regression Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Fraction of clamped evaluations above which a node is flagged.
pub const SATURATION_FLAG: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LsmcSettings {
    pub n_paths: usize,
    pub basis_degree: usize,
    pub seed: u64,
    /// `0` uses the default thread pool.
    pub workers: usize,
}

impl Default for LsmcSettings {
    fn default() -> Self {
        LsmcSettings {
            n_paths: 100_000,
            basis_degree: 2,
            seed: 42,
            workers: 0,
        }
    }
}

/// Fitted functions of one backward step.
#[derive(Debug, Clone)]
pub(crate) struct StepFit {
    basis: StepBasis,
    t: f64,
    dt: f64,
    beta_e: Vec<f64>,
    beta_z: Vec<Vec<f64>>,
    beta_w: Vec<Vec<f64>>,
    beta_d: Option<Vec<f64>>,
    pre_default: bool,
}

/// Evaluated fit at a state.
#[derive(Debug, Clone, Default)]
pub(crate) struct FitEval {
    pub y: f64,
    pub clamped: bool,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub w_def: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Bounds {
    pub clamp: f64,
    pub z_clip: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl StepFit {
    fn eval(&self, gen: &GeneratorSpec, bounds: &Bounds, raw: &[f64], m: usize) -> Result<FitEval> {
        let mut phi = vec![0.0; self.basis.len()];
        self.basis.features(raw, &mut phi);
        let w_clip = 2.0 * bounds.clamp;
        let z: Vec<f64> = self
            .beta_z
            .iter()
            .map(|b| dot(b, &phi).clamp(-bounds.z_clip, bounds.z_clip))
            .collect();
        let mut w = vec![0.0; m];
        for (slot, b) in w.iter_mut().zip(&self.beta_w) {
            *slot = dot(b, &phi).clamp(-w_clip, w_clip);
        }
        let w_def = self
            .beta_d
            .as_ref()
            .map(|b| dot(b, &phi).clamp(-w_clip, w_clip))
            .unwrap_or(0.0);
        let f = generator_f(gen, self.t, &z, &w, w_def, self.pre_default)?;
        let raw_y = dot(&self.beta_e, &phi) + f * self.dt;
        let y = raw_y.clamp(-bounds.clamp, bounds.clamp);
        Ok(FitEval {
            y,
            clamped: y != raw_y,
            z,
            w,
            w_def,
        })
    }
}

/// Post-default value function.
#[derive(Debug, Clone)]
pub(crate) enum PostLayer {
    /// The claim ignores default and the horizon is fixed: `Y_post = Y_pre`.
    Same,
    /// Claim depends on `tau` only: `g2(tau) - int_t^T |phi|^2/(2 alpha)`.
    Analytic { penalty: Vec<f64> },
    /// Stopped horizon: `Y` frozen at the stopped payoff.
    Frozen,
    /// Fixed horizon, price- or jump-dependent claim.
    Regression { fits: Vec<StepFit> },
}

/// Fitted pre- and post-default layers.
#[derive(Debug, Clone)]
pub struct LsmcFits {
    pub(crate) gen: GeneratorSpec,
    pub(crate) claim: ClaimSpec,
    pub(crate) shape: StateShape,
    pub(crate) bounds: Bounds,
    pub(crate) pre: Vec<StepFit>,
    pub(crate) post: PostLayer,
    pub(crate) horizon_t: f64,
    pub(crate) m: usize,
    pub(crate) d: usize,
    pub(crate) clamp_hits: Vec<usize>,
    pub(crate) y0_se: f64,
}

/// State a fitted value function is evaluated at.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StateRef<'a> {
    pub k: usize,
    pub log_s: &'a [f64],
    pub stopped_log_s: &'a [f64],
    pub jumps: &'a [u32],
    pub tau: f64,
}

impl LsmcFits {
    fn n_steps(&self) -> usize {
        self.pre.len()
    }

    fn terminal(&self, log_s: &[f64], jumps: &[u32], defaulted: bool, tau: f64) -> Result<f64> {
        let prices: Vec<f64> = log_s.iter().map(|x| x.exp()).collect();
        self.claim.eval(&ClaimInput {
            prices: &prices,
            defaulted,
            tau: tau.min(self.horizon_t),
            jumps,
        })
    }

    fn raw(&self, log_s: &[f64], jumps: &[u32]) -> Vec<f64> {
        let mut raw = vec![0.0; self.shape.n_raw()];
        self.shape.raw_into(log_s, jumps, &mut raw);
        raw
    }

    pub(crate) fn pre_eval(&self, s: &StateRef<'_>) -> Result<FitEval> {
        if s.k == self.n_steps() {
            return Ok(FitEval {
                y: self.terminal(s.log_s, s.jumps, false, f64::INFINITY)?,
                z: vec![0.0; self.d],
                w: vec![0.0; self.m],
                ..FitEval::default()
            });
        }
        self.pre[s.k].eval(&self.gen, &self.bounds, &self.raw(s.log_s, s.jumps), self.m)
    }

    pub(crate) fn post_eval(&self, s: &StateRef<'_>) -> Result<FitEval> {
        let zero = |y: f64| FitEval {
            y,
            z: vec![0.0; self.d],
            w: vec![0.0; self.m],
            ..FitEval::default()
        };
        match &self.post {
            PostLayer::Same => self.pre_eval(s),
            PostLayer::Analytic { penalty } => {
                Ok(zero(self.claim.default_value(s.tau.min(self.horizon_t))? - penalty[s.k]))
            }
            PostLayer::Frozen => Ok(zero(self.terminal(s.stopped_log_s, s.jumps, true, s.tau)?)),
            PostLayer::Regression { fits } => {
                if s.k == self.n_steps() {
                    Ok(zero(self.terminal(s.log_s, s.jumps, true, s.tau)?))
                } else {
                    fits[s.k].eval(&self.gen, &self.bounds, &self.raw(s.log_s, s.jumps), self.m)
                }
            }
        }
    }
}

/// Per-chunk normal equations.
struct Accum {
    p: usize,
    ncol: usize,
    d: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    mz: Vec<f64>,
    rz: Vec<f64>,
    s1: f64,
    s2: f64,
    n: usize,
    hits: usize,
}

impl Accum {
    fn new(p: usize, ncol: usize, d: usize) -> Self {
        Accum {
            p,
            ncol,
            d,
            gram: vec![0.0; p * p],
            rhs: vec![0.0; p * ncol],
            mz: vec![0.0; d * p * p],
            rz: vec![0.0; d * p],
            s1: 0.0,
            s2: 0.0,
            n: 0,
            hits: 0,
        }
    }

    fn push(&mut self, phi: &[f64], cols: &[f64], db: &[f64], target: f64) {
        let p = self.p;
        for r in 0..p {
            let fr = phi[r];
            for c in 0..p {
                let fc = fr * phi[c];
                self.gram[r * p + c] += fc;
                for j in 0..self.d {
                    self.mz[(j * p + r) * p + c] += fc * db[j];
                }
            }
            for c in 0..self.ncol {
                self.rhs[r * self.ncol + c] += fr * cols[c];
            }
            for j in 0..self.d {
                self.rz[j * p + r] += fr * cols[0] * db[j];
            }
        }
        self.s1 += target;
        self.s2 += target * target;
        self.n += 1;
    }

    fn merge(&mut self, o: &Accum) {
        for (a, b) in self.gram.iter_mut().zip(&o.gram) {
            *a += b;
        }
        for (a, b) in self.rhs.iter_mut().zip(&o.rhs) {
            *a += b;
        }
        for (a, b) in self.mz.iter_mut().zip(&o.mz) {
            *a += b;
        }
        for (a, b) in self.rz.iter_mut().zip(&o.rz) {
            *a += b;
        }
        self.s1 += o.s1;
        self.s2 += o.s2;
        self.n += o.n;
        self.hits += o.hits;
    }
}

fn chunks(n: usize) -> usize {
    n.div_ceil(CHUNK)
}

fn chunk_range(c: usize, n: usize) -> Range<usize> {
    c * CHUNK..((c + 1) * CHUNK).min(n)
}

/// Ordered map-reduce over fixed path chunks.
pub(crate) fn reduce_chunks<A: Send>(
    n: usize,
    map: impl Fn(Range<usize>) -> Result<A> + Sync + Send,
    mut fold: impl FnMut(A),
) -> Result<()> {
    let parts = try_map_indexed(chunks(n), |c| map(chunk_range(c, n)))?;
    for p in parts {
        fold(p);
    }
    Ok(())
}

/// Per-path jump counts at every node, only when the claim reads them.
pub(crate) struct PathCounts {
    m: usize,
    n1: usize,
    data: Vec<Vec<u32>>,
    zeros: Vec<u32>,
}

impl PathCounts {
    pub(crate) fn new(bundles: &[ScenarioBundle], m: usize, needed: bool) -> Self {
        let n1 = bundles.first().map(|b| b.n_steps() + 1).unwrap_or(0);
        let data = if needed && m > 0 {
            bundles
                .iter()
                .map(|b| {
                    let mut out = vec![0u32; n1 * m];
                    for ev in &b.events.jumps {
                        for k in ev.step + 1..n1 {
                            out[k * m + ev.atom] += 1;
                        }
                    }
                    out
                })
                .collect()
        } else {
            Vec::new()
        };
        PathCounts {
            m,
            n1,
            data,
            zeros: vec![0; m],
        }
    }

    pub(crate) fn at(&self, p: usize, k: usize) -> &[u32] {
        if self.data.is_empty() {
            &self.zeros
        } else {
            &self.data[p][k * self.m..(k + 1) * self.m]
        }
    }

    #[allow(dead_code)]
    pub(crate) fn nodes(&self) -> usize {
        self.n1
    }
}

fn solve_normal(acc: &Accum, step: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = acc.p;
    let n = acc.n.max(1) as f64;
    let gram = DMatrix::from_row_slice(p, p, &acc.gram) / n;
    let svd = gram.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { step, condition });
    }
    let rhs = DMatrix::from_row_slice(p, acc.ncol, &acc.rhs) / n;
    let beta = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::solver("bsde", format!("regression solve failed at step {step}: {e}")))?;
    // Z columns: G^{-1} (sum phi V dB_j - M_j beta_V) / (n dt)
    let beta_v = beta.column(0).into_owned();
    let mut zr = DMatrix::zeros(p, acc.d);
    for j in 0..acc.d {
        let mj = DMatrix::from_row_slice(p, p, &acc.mz[j * p * p..(j + 1) * p * p]) / n;
        let rz = DMatrix::from_row_slice(p, 1, &acc.rz[j * p..(j + 1) * p]) / n;
        let col = rz - mj * &beta_v;
        zr.set_column(j, &col.column(0));
    }
    let beta_z = svd
        .solve(&zr, 0.0)
        .map_err(|e| Error::solver("bsde", format!("regression solve failed at step {step}: {e}")))?;
    Ok((beta, beta_z))
}

struct LayerSetup<'a> {
    gen: &'a GeneratorSpec,
    model: &'a Model,
    bundles: &'a [ScenarioBundle],
    counts: &'a PathCounts,
    shape: StateShape,
    degree: usize,
    /// `true` for the pre-default layer.
    pre_default: bool,
    /// Jump-shift columns are needed.
    use_jumps: bool,
    /// Default column is needed (pre layer with a non-trivial post layer).
    use_default: bool,
}

struct LayerOut {
    fits: Vec<StepFit>,
    hits: Vec<usize>,
    y0_se: f64,
}

/// Backward induction of one layer. `value_next(k+1, log_s, jumps)` gives the
/// layer's own value at node `k+1`, `post_next` the post-default value after
/// a default at `t_{k+1}`.
fn backward_layer(
    setup: &LayerSetup<'_>,
    fits_holder: &mut LsmcFits,
    post_layer_mode: bool,
) -> Result<LayerOut> {
    let model = setup.model;
    let grid = &model.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let d = model.dim();
    let m = model.n_atoms();
    let n_paths = setup.bundles.len();
    let m_used = if setup.use_jumps { m } else { 0 };
    let ncol = 1 + m_used + usize::from(setup.use_default);
    let mut fits: Vec<Option<StepFit>> = vec![None; n];
    let mut hits = vec![0usize; n + 1];
    let mut y0_se = 0.0;

    for k in (0..n).rev() {
        let t = grid.t(k);
        let t1 = grid.t(k + 1);
        let pi: Vec<f64> = (0..m_used)
            .map(|i| model.levy.rate_integral(i, t, t1))
            .collect();
        let q = if setup.use_default {
            -(-model.intensity.hazard_between(t, t1)).exp_m1()
        } else {
            0.0
        };

        // install fits[k+1] so the holder can evaluate node k+1
        if k + 1 < n {
            let f = fits[k + 1].clone().expect("fit for the next step");
            if post_layer_mode {
                if let PostLayer::Regression { fits: pf } = &mut fits_holder.post {
                    pf[k + 1] = f;
                }
            } else {
                fits_holder.pre[k + 1] = f;
            }
        }
        let holder: &LsmcFits = fits_holder;
        let value_next = |state: &StateRef<'_>| -> Result<FitEval> {
            if post_layer_mode {
                holder.post_eval(state)
            } else {
                holder.pre_eval(state)
            }
        };

        // raw-state moments
        let n_raw = setup.shape.n_raw();
        let shift = {
            let mut r = vec![0.0; n_raw];
            setup
                .shape
                .raw_into(setup.bundles[0].log_s(k), setup.counts.at(0, k), &mut r);
            r
        };
        let mut moments = Moments::new(shift.clone());
        reduce_chunks(
            n_paths,
            |range| {
                let mut mo = Moments::new(shift.clone());
                let mut raw = vec![0.0; n_raw];
                for p in range {
                    setup
                        .shape
                        .raw_into(setup.bundles[p].log_s(k), setup.counts.at(p, k), &mut raw);
                    mo.push(&raw);
                }
                Ok(mo)
            },
            |mo| moments.merge(&mo),
        )?;
        let (mean, sd) = moments.mean_sd();
        let basis = StepBasis::new(setup.shape, setup.degree, mean, &sd);
        let pdim = basis.len();

        let mut acc = Accum::new(pdim, ncol, d);
        reduce_chunks(
            n_paths,
            |range| {
                let mut a = Accum::new(pdim, ncol, d);
                let mut raw = vec![0.0; n_raw];
                let mut phi = vec![0.0; pdim];
                let mut cols = vec![0.0; ncol];
                for p in range {
                    let b = &setup.bundles[p];
                    let jumps = setup.counts.at(p, k);
                    setup.shape.raw_into(b.log_s(k), jumps, &mut raw);
                    basis.features(&raw, &mut phi);
                    let ls1 = b.log_s(k + 1);
                    let base = StateRef {
                        k: k + 1,
                        log_s: ls1,
                        stopped_log_s: ls1,
                        jumps,
                        tau: t1,
                    };
                    let v = value_next(&base)?;
                    if v.clamped {
                        a.hits += 1;
                    }
                    cols[0] = v.y;
                    let mut target = v.y;
                    if setup.use_jumps {
                        let mut shifted = jumps.to_vec();
                        for i in 0..m {
                            shifted[i] += 1;
                            let vi = value_next(&StateRef {
                                jumps: &shifted,
                                ..base
                            })?;
                            shifted[i] -= 1;
                            cols[1 + i] = vi.y - v.y;
                            target += pi[i] * cols[1 + i];
                        }
                    }
                    if setup.use_default {
                        let post = holder.post_eval(&base)?.y;
                        cols[ncol - 1] = post - v.y;
                        target += q * cols[ncol - 1];
                    }
                    a.push(&phi, &cols, b.db(k), target);
                }
                Ok(a)
            },
            |a| acc.merge(&a),
        )?;
        if k + 1 < n {
            hits[k + 1] = acc.hits;
        }
        let (beta, beta_z) = solve_normal(&acc, k)?;
        let col = |c: usize| beta.column(c).iter().cloned().collect::<Vec<f64>>();
        let mut beta_e = col(0);
        let mut beta_w = Vec::new();
        for i in 0..m_used {
            let bw = col(1 + i);
            for (e, w) in beta_e.iter_mut().zip(&bw) {
                *e += pi[i] * w;
            }
            beta_w.push(bw);
        }
        let beta_d = if setup.use_default {
            let bd = col(ncol - 1);
            for (e, w) in beta_e.iter_mut().zip(&bd) {
                *e += q * w;
            }
            Some(bd)
        } else {
            None
        };
        let beta_z = (0..d)
            .map(|j| beta_z.column(j).iter().map(|v| v / dt).collect())
            .collect();
        if k == 0 {
            let nn = acc.n as f64;
            let mean = acc.s1 / nn;
            let var = (acc.s2 / nn - mean * mean).max(0.0) * nn / (nn - 1.0).max(1.0);
            y0_se = (var / nn).sqrt();
        }
        fits[k] = Some(StepFit {
            basis,
            t,
            dt,
            beta_e,
            beta_z,
            beta_w,
            beta_d,
            pre_default: setup.pre_default,
        });
    }
    // node-0 clamp hits
    let fits: Vec<StepFit> = fits.into_iter().map(|f| f.expect("all steps fitted")).collect();
    if let Some(f0) = fits.first() {
        let b = &setup.bundles[0];
        let mut raw = vec![0.0; setup.shape.n_raw()];
        setup.shape.raw_into(b.log_s(0), setup.counts.at(0, 0), &mut raw);
        if f0.eval(setup.gen, &fits_holder.bounds, &raw, m)?.clamped {
            hits[0] = n_paths;
        }
    }
    Ok(LayerOut { fits, hits, y0_se })
}

fn placeholder_fit(d: usize) -> StepFit {
    StepFit {
        basis: StepBasis::new(
            StateShape {
                price_dims: 0,
                jump_dims: 0,
            },
            0,
            Vec::new(),
            &[],
        ),
        t: 0.0,
        dt: 0.0,
        beta_e: vec![0.0],
        beta_z: vec![vec![0.0]; d],
        beta_w: Vec::new(),
        beta_d: None,
        pre_default: true,
    }
}

fn check_inputs(spec: &GeneratorSpec, claim: &ClaimSpec, model: &Model) -> Result<()> {
    claim.validate(model.n_atoms())?;
    if spec.phi.len() != model.dim() || spec.levy.len() != model.n_atoms() {
        return Err(Error::validation("generator and model dimensions differ"));
    }
    if spec.horizon == Horizon::Stopped
        && claim.measurability != Measurability::Stopped
        && (claim.depends_on_price() || claim.depends_on_jumps())
    {
        return Err(Error::Measurability(
            "G_(T^tau): payoff reads the price or jumps after default".into(),
        ));
    }
    if spec.horizon == Horizon::Fixed
        && claim.measurability == Measurability::Stopped
        && claim.depends_on_price()
    {
        return Err(Error::validation(
            "stopped price claims need the random-horizon solver",
        ));
    }
    if claim.depends_on_tau() && (claim.depends_on_price() || claim.depends_on_jumps()) {
        return Err(Error::validation(
            "claims depending on tau and on the price or jumps are not supported",
        ));
    }
    Ok(())
}

fn penalty(spec: &GeneratorSpec, model: &Model) -> Vec<f64> {
    let grid = &model.grid;
    let n = grid.n_steps();
    let mut out = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let f = |t: f64| spec.phi.iter().map(|p| p.eval(t).powi(2)).sum::<f64>() / (2.0 * spec.alpha);
        let step = crate::model::adaptive_simpson(&f, grid.t(k), grid.t(k + 1), 1e-13);
        out[k] = out[k + 1] + step;
    }
    out
}

/// Solves on a given scenario set.
pub fn solve_lsmc_on(
    spec: &GeneratorSpec,
    claim: &ClaimSpec,
    model: &Model,
    bundles: &[ScenarioBundle],
    settings: &LsmcSettings,
) -> Result<BsdeSolution> {
    check_inputs(spec, claim, model)?;
    if bundles.len() < 2 {
        return Err(Error::validation("LSMC needs at least two paths"));
    }
    let grid = &model.grid;
    let n = grid.n_steps();
    let d = model.dim();
    let m = model.n_atoms();
    let clamp = apriori_bound(spec, claim, grid.horizon());
    if 2.0 * spec.alpha * clamp > EXP_LIMIT {
        return Err(Error::Overflow {
            context: "a-priori jump bound",
            magnitude: 2.0 * spec.alpha * clamp,
            limit: EXP_LIMIT,
        });
    }
    let bounds = Bounds {
        clamp,
        z_clip: 2.0 * clamp / grid.dt().sqrt(),
    };
    let shape = StateShape::for_claim(claim, d, m);
    let counts = PathCounts::new(bundles, m, claim.depends_on_jumps());
    let has_default = !spec.intensity.is_zero();
    let post = match spec.horizon {
        Horizon::Stopped => PostLayer::Frozen,
        Horizon::Fixed if !claim.depends_on_default() || !has_default => PostLayer::Same,
        Horizon::Fixed if !claim.depends_on_price() && !claim.depends_on_jumps() => {
            PostLayer::Analytic {
                penalty: penalty(spec, model),
            }
        }
        Horizon::Fixed => PostLayer::Regression {
            fits: vec![placeholder_fit(d); n],
        },
    };
    let use_default = has_default && !matches!(post, PostLayer::Same);
    let mut holder = LsmcFits {
        gen: spec.clone(),
        claim: claim.clone(),
        shape,
        bounds,
        pre: vec![placeholder_fit(d); n],
        post,
        horizon_t: grid.horizon(),
        m,
        d,
        clamp_hits: vec![0; n + 1],
        y0_se: 0.0,
    };
    let base = LayerSetup {
        gen: spec,
        model,
        bundles,
        counts: &counts,
        shape,
        degree: settings.basis_degree,
        pre_default: false,
        use_jumps: claim.depends_on_jumps() && m > 0,
        use_default: false,
    };
    let mut post_hits = vec![0; n + 1];
    if matches!(holder.post, PostLayer::Regression { .. }) {
        let out = backward_layer(&base, &mut holder, true)?;
        post_hits = out.hits;
        holder.post = PostLayer::Regression { fits: out.fits };
    }
    let pre_setup = LayerSetup {
        pre_default: true,
        use_default,
        ..base
    };
    let out = backward_layer(&pre_setup, &mut holder, false)?;
    holder.pre = out.fits;
    holder.y0_se = out.y0_se;
    holder.clamp_hits = out.hits.iter().zip(&post_hits).map(|(a, b)| a + b).collect();

    let mut solution = BsdeSolution::new(SolutionKind::Lsmc(Box::new(holder)), spec, grid.clone(), clamp);
    let stats = node_stats(&solution, bundles, model)?;
    for (k, s) in stats.iter().enumerate() {
        if s.clamp_hits as f64 > SATURATION_FLAG * bundles.len() as f64 {
            solution.warnings.push(format!(
                "clamp saturation at t = {}: {} of {} evaluations",
                s.t,
                s.clamp_hits,
                bundles.len()
            ));
        }
        let _ = k;
    }
    solution.stats = stats;
    // the first-step regression SE misses the noise absorbed by later fits;
    // the pathwise value `xi + sum f dt` carries all of it
    let (_, total) = residual_summary(&solution, spec, bundles, model)?;
    if let SolutionKind::Lsmc(f) = &mut solution.kind {
        f.y0_se = f.y0_se.max(total.se);
    }
    Ok(solution)
}

/// Simulates `settings.n_paths` scenarios and solves the BSDE on them.
pub fn solve_lsmc(
    spec: &GeneratorSpec,
    claim: &ClaimSpec,
    model: &Model,
    settings: &LsmcSettings,
) -> Result<BsdeSolution> {
    let bundles = simulate(model, settings.n_paths, settings.seed, settings.workers)?;
    with_workers(settings.workers, || solve_lsmc_on(spec, claim, model, &bundles, settings))?
}

/// Stopped-horizon solve: the generator is switched off after default and
/// `Y` is frozen at the stopped payoff.
pub fn solve_random_horizon(
    spec: &GeneratorSpec,
    claim: &ClaimSpec,
    model: &Model,
    settings: &LsmcSettings,
) -> Result<BsdeSolution> {
    let stopped = GeneratorSpec {
        horizon: Horizon::Stopped,
        ..spec.clone()
    };
    if claim.measurability != Measurability::Stopped
        && !matches!(claim.kind, ClaimKind::Zero | ClaimKind::Constant { .. })
        && (claim.depends_on_price() || claim.depends_on_jumps())
    {
        return Err(Error::Measurability(
            "G_(T^tau): claim must be tagged G_T_tau or depend on the default time only".into(),
        ));
    }
    solve_lsmc(&stopped, claim, model, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::simulate;
    use crate::model::{build_grid, FiniteLevyMeasure, IntensitySpec, MarketSpec};

    fn model(phi: f64, lambda: f64, n: usize) -> Model {
        Model::new(
            MarketSpec::scalar(1.0, phi, 1.0, 1.0, 0.0),
            FiniteLevyMeasure::empty(),
            IntensitySpec::constant(lambda),
            build_grid(1.0, n).unwrap(),
        )
    }

    fn settings(n_paths: usize) -> LsmcSettings {
        LsmcSettings {
            n_paths,
            basis_degree: 2,
            seed: 7,
            workers: 0,
        }
    }

    #[test]
    fn merton_zero_claim() {
        let m = model(0.2, 0.3, 20);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let sol = solve_lsmc(&spec, &ClaimSpec::zero(), &m, &settings(5_000)).unwrap();
        assert!((sol.y0() + 0.02).abs() < 0.003, "{}", sol.y0());
    }

    #[test]
    fn null_data() {
        let m = model(0.0, 0.3, 10);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let sol = solve_lsmc(&spec, &ClaimSpec::zero(), &m, &settings(2_000)).unwrap();
        for s in &sol.stats {
            assert_eq!(s.y_mean, 0.0);
            assert_eq!(s.z_mean[0], 0.0);
            assert_eq!(s.w_def_mean, 0.0);
        }
    }

    #[test]
    fn bond_close_to_closed_form() {
        let m = model(0.0, 0.3, 20);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let sol = solve_lsmc(&spec, &ClaimSpec::survival(1.0), &m, &settings(20_000)).unwrap();
        assert!((sol.y0() - 0.8210717221).abs() < 0.01, "{}", sol.y0());
    }

    #[test]
    fn stopped_default_indicator() {
        let m = model(0.0, 0.3, 20);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let sol =
            solve_random_horizon(&spec, &ClaimSpec::default_indicator(1.0), &m, &settings(20_000))
                .unwrap();
        assert!((sol.y0() - 0.3683496675).abs() < 0.01, "{}", sol.y0());
    }

    #[test]
    fn cash_invariance() {
        let m = model(0.2, 0.3, 10);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let bundles = simulate(&m, 4_000, 1, 0).unwrap();
        let s = settings(4_000);
        let call = ClaimSpec::new(
            ClaimKind::DefaultableCall {
                strike: 1.0,
                cap: 1.0,
                recovery: 0.2,
            },
            1.0,
            Measurability::Enlarged,
        );
        let a = solve_lsmc_on(&spec, &call, &m, &bundles, &s).unwrap();
        let b = solve_lsmc_on(&spec, &call.shifted(0.5), &m, &bundles, &s).unwrap();
        assert!((b.y0() - a.y0() - 0.5).abs() < 3.0 * a.y0_se().max(1e-9) + 1e-9);
        assert!((a.stats[3].z_mean[0] - b.stats[3].z_mean[0]).abs() < 1e-9);
    }

    #[test]
    fn worker_count_does_not_matter() {
        let m = model(0.2, 0.3, 8);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let call = ClaimSpec::new(
            ClaimKind::CappedCall { strike: 1.0, cap: 1.0 },
            1.0,
            Measurability::MarketOnly,
        );
        let mut s = settings(5_000);
        s.workers = 1;
        let a = solve_lsmc(&spec, &call, &m, &s).unwrap();
        s.workers = 4;
        let b = solve_lsmc(&spec, &call, &m, &s).unwrap();
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn measurability_rejected() {
        let m = model(0.2, 0.3, 8);
        let spec = GeneratorSpec::from_model(&m, Horizon::Fixed);
        let call = ClaimSpec::new(
            ClaimKind::CappedCall { strike: 1.0, cap: 1.0 },
            1.0,
            Measurability::MarketOnly,
        );
        assert!(matches!(
            solve_random_horizon(&spec, &call, &m, &settings(100)),
            Err(Error::Measurability(_))
        ));
    }
}

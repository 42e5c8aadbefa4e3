//! Experiment orchestration: one config in, CSV artifacts and a report out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::acceptance;
use super::config::{ConfigSolverMode, ExperimentConfig, ExperimentKind, Resolved};
use super::report::{Metric, RunReport};
use crate::bsde::{
    apriori_bound, node_stats, residual_summary, solve, solve_lsmc_on, write_bsde_csv, BsdeSolution,
    GeneratorSpec, Horizon, LsmcSettings, NodeStats, SolverMode,
};
use crate::enlargement::{azema, bracket_check, joint_compensator_residual, Mark};
use crate::error::{Error, Result};
use crate::market::{girsanov_weight, simulate, simulate_events, simulate_range, ScenarioBundle, ScenarioEvents};
use crate::model::Model;
use crate::oracle::{
    build_tree, max_residual, post_default_clean, tree_bsde, tree_dp_optimize, tree_generator,
    tree_representation, write_tree_csv, Arithmetic, DriverKind, TreeSpec,
};
use crate::parallel::with_workers;
use crate::stats::Estimate;
use crate::utility::{
    certainty_equivalent, default_candidate_grid, factorization_residual, indifference_price, optimal_strategy,
    random_horizon_value, value_function, verify_martingale_optimality, write_optimality_csv,
    write_rprocess_csv,
};

/// Paths written to `paths.csv`; statistics always use every path.
pub const PATHS_CSV_LIMIT: usize = 100;
/// Paths used for the pathwise factorization check.
pub const FACTORIZATION_PATHS: usize = 1_000;
/// Fraction of steps whose mean BSDE residual must lie within 3 SE of zero.
pub const RESIDUAL_FRACTION: f64 = 0.9;
/// Round-off floor of the per-step residual test (deterministic solutions).
pub const RESIDUAL_FLOOR: f64 = 1e-10;
/// Absolute LSMC tolerance against a deterministic reference value.
pub const LSMC_TOL: f64 = 0.01;
/// Tolerance of ODE values against closed forms.
pub const ODE_TOL_CLOSED_FORM: f64 = 1e-6;
const SIM_BATCH: usize = 8_192;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Overrides `solver.seed`.
    pub seed: Option<u64>,
}

/// Metrics, artifacts and warnings collected while an experiment runs.
#[derive(Debug, Default)]
pub struct Outcome {
    pub metrics: Vec<Metric>,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn push(&mut self, m: Metric) {
        self.metrics.push(m);
    }

    /// Writes `dir/name` and records it as an artifact.
    pub fn write(&mut self, dir: &Path, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

/// Runs `kind` and writes `config.resolved.toml`, artifacts and `report.json`.
pub fn run(config: &ExperimentConfig, kind: ExperimentKind, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    let mut cfg = config.clone();
    cfg.experiment.kind = kind;
    if let Some(seed) = opts.seed {
        cfg.solver.seed = seed;
    }
    let resolved = cfg.resolve(opts.workers)?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let config_text = cfg.to_toml()?;
    std::fs::write(opts.out_dir.join("config.resolved.toml"), &config_text)?;
    let mut out = Outcome::default();
    out.warnings.extend(resolved.validation.warnings.iter().cloned());
    with_workers(opts.workers, || dispatch(&cfg, &resolved, &opts.out_dir, &mut out))??;
    let report = RunReport {
        experiment: kind.name().to_string(),
        metrics: out.metrics,
        artifacts: out.artifacts,
        warnings: out.warnings,
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: cfg.solver.seed,
        workers: opts.workers,
        config: config_text,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::solver("cli", e.to_string()))?;
    std::fs::write(opts.out_dir.join("report.json"), json)?;
    Ok(report)
}

fn dispatch(cfg: &ExperimentConfig, r: &Resolved, dir: &Path, out: &mut Outcome) -> Result<()> {
    let scale = cfg.experiment.tolerance_scale;
    match cfg.experiment.kind {
        ExperimentKind::Simulate => run_simulate(r, dir, scale, out),
        ExperimentKind::VerifyEnlargement => run_enlargement(r, dir, scale, out),
        ExperimentKind::Solve => match cfg.solver.mode {
            ConfigSolverMode::Tree => run_tree(r, dir, out),
            _ => run_solve(cfg, r, dir, scale, out),
        },
        ExperimentKind::Optimize => run_optimize(cfg, r, dir, out),
        ExperimentKind::Indifference => run_indifference(cfg, r, dir, scale, out),
        ExperimentKind::RandomHorizon => run_random_horizon(cfg, r, dir, scale, out),
        ExperimentKind::Oracle => run_tree(r, dir, out),
        ExperimentKind::Acceptance => {
            if scale != 1.0 {
                out.warnings
                    .push("tolerance_scale is ignored by the acceptance suite".to_string());
            }
            let results = acceptance::run_suite(&acceptance::SuiteOptions {
                seed: r.settings.seed,
                workers: r.settings.workers,
                out_dir: Some(dir.to_path_buf()),
                only: None,
            })?;
            for c in results {
                out.metrics.extend(c.metrics);
                out.artifacts.extend(c.artifacts);
                out.warnings.extend(c.warnings);
            }
            Ok(())
        }
    }
}

fn tree_mode_unsupported(kind: &str) -> Error {
    Error::validation(format!("solver mode `tree` is not available for {kind}; use lsmc or ode"))
}

/// Writes `path_id,t,S_1..S_d,H,A,Lambda,M,U`.
pub fn write_paths_csv(bundles: &[ScenarioBundle], model: &Model, out: &mut dyn Write) -> Result<()> {
    let d = model.dim();
    write!(out, "path_id,t")?;
    for j in 1..=d {
        write!(out, ",S_{j}")?;
    }
    writeln!(out, ",H,A,Lambda,M,U")?;
    for b in bundles {
        let e = b.enlargement(model)?;
        for k in 0..=model.grid.n_steps() {
            write!(out, "{},{}", b.path_id, model.grid.t(k))?;
            for s in b.log_s(k) {
                write!(out, ",{}", s.exp())?;
            }
            writeln!(out, ",{},{},{},{},{}", e.h[k], e.a[k], e.lambda[k], e.m[k], e.u[k])?;
        }
    }
    Ok(())
}

fn write_paths_artifact(r: &Resolved, dir: &Path, out: &mut Outcome) -> Result<()> {
    let n = r.settings.n_paths.min(PATHS_CSV_LIMIT);
    let bundles = simulate(&r.model, n, r.settings.seed, r.settings.workers)?;
    out.write(dir, "paths.csv", |w| write_paths_csv(&bundles, &r.model, w))
}

fn avoidance_violations(events: &[ScenarioEvents]) -> usize {
    events
        .iter()
        .filter(|e| {
            let tau = e.default.tau;
            e.jumps.iter().any(|j| j.time == tau)
                || e.default_interval().is_some_and(|s| e.jumps.iter().any(|j| j.step == s))
        })
        .count()
}

fn run_simulate(r: &Resolved, dir: &Path, scale: f64, out: &mut Outcome) -> Result<()> {
    let model = &r.model;
    let s = &r.settings;
    let n = model.grid.n_steps();
    let (mut weights, mut weighted_s, mut log_ret) = (Vec::new(), Vec::new(), Vec::new());
    let mut start = 0;
    while start < s.n_paths {
        let end = (start + SIM_BATCH).min(s.n_paths);
        let batch = simulate_range(model, start..end, s.seed, s.workers)?;
        for b in &batch {
            let w = girsanov_weight(b, model);
            weights.push(w);
            weighted_s.push(w * b.log_s(n)[0].exp());
            log_ret.push(b.log_s(n)[0] - b.log_s(0)[0]);
        }
        start = end;
    }
    let k = 3.0 * scale;
    out.push(Metric::within_se("girsanov_weight_mean", Estimate::from_samples(&weights), 1.0, k));
    out.push(Metric::within_se(
        "q_martingale_S1",
        Estimate::from_samples(&weighted_s),
        model.market.s0[0],
        k,
    ));
    // log S^1_T drift under P for constant coefficients
    if model.market.is_constant() {
        let sig = model.market.sigma.at(0.0);
        let phi = model.market.phi_at(0.0);
        let horizon = model.grid.horizon();
        let row = sig.row(0);
        let drift = (row.dot(&phi.transpose()) - 0.5 * row.norm_squared()) * horizon;
        out.push(Metric::within_se("log_return_S1", Estimate::from_samples(&log_ret), drift, k));
    }
    let events = simulate_events(model, s.n_paths, s.seed, s.workers)?;
    event_metrics(model, &events, k, out)?;
    write_paths_artifact(r, dir, out)
}

fn event_metrics(model: &Model, events: &[ScenarioEvents], k: f64, out: &mut Outcome) -> Result<()> {
    let horizon = model.grid.horizon();
    let survived: Vec<f64> = events
        .iter()
        .map(|e| if e.default.tau > horizon { 1.0 } else { 0.0 })
        .collect();
    out.push(Metric::within_se(
        "survival_probability",
        Estimate::from_samples(&survived),
        azema(&model.intensity, horizon)?,
        k,
    ));
    for i in 0..model.n_atoms() {
        let counts: Vec<f64> = events
            .iter()
            .map(|e| e.jumps.iter().filter(|j| j.atom == i).count() as f64)
            .collect();
        out.push(Metric::within_se(
            format!("jump_count_mean_{}", i + 1),
            Estimate::from_samples(&counts),
            model.levy.rate_integral(i, 0.0, horizon),
            k,
        ));
    }
    out.push(Metric::zero_count("avoidance_violations", avoidance_violations(events)));
    Ok(())
}

/// Pathwise identity errors and moment checks of the enlargement processes.
pub struct EnlargementChecks {
    pub lambda_identity: f64,
    pub u_identity: f64,
    pub brackets: Vec<(usize, crate::enlargement::BracketCheck)>,
}

pub fn enlargement_checks(model: &Model, events: &[ScenarioEvents]) -> Result<EnlargementChecks> {
    let grid = &model.grid;
    let n = grid.n_steps();
    let (mut lam_err, mut u_err) = (0.0f64, 0.0f64);
    for e in events {
        let paths = crate::enlargement::enlargement_paths(&e.default, &model.intensity, grid)?;
        for k in 0..=n {
            let t = grid.t(k);
            let a_stop = azema(&model.intensity, t.min(e.default.tau))?;
            lam_err = lam_err.max((paths.lambda[k] + a_stop.ln()).abs());
            let alive = if t < e.default.tau { 1.0 } else { 0.0 };
            u_err = u_err.max((paths.u[k] * paths.a[k] - alive).abs());
        }
    }
    let defaults: Vec<_> = events.iter().map(|e| e.default).collect();
    let brackets = [n / 2, n]
        .into_iter()
        .map(|k| (k, bracket_check(&defaults, &model.intensity, grid, k)))
        .collect();
    Ok(EnlargementChecks {
        lambda_identity: lam_err,
        u_identity: u_err,
        brackets,
    })
}

/// Residuals for `W = 1{default}`, `W = 0` and `W = 1{atom i}` for each atom.
pub fn compensator_metrics(model: &Model, events: &[ScenarioEvents], k: f64, out: &mut Outcome) -> Result<()> {
    let grid = &model.grid;
    let def = joint_compensator_residual(
        events,
        &model.levy,
        &model.intensity,
        grid,
        &|_, m| if m == Mark::Default { 1.0 } else { 0.0 },
        1.0,
    )?;
    out.push(Metric::within_se("compensator_default", def.residual, 0.0, k));
    let zero = joint_compensator_residual(events, &model.levy, &model.intensity, grid, &|_, _| 0.0, 0.0)?;
    out.push(Metric::at_most("compensator_zero", zero.residual.mean.abs(), zero.residual.se, 0.0));
    for i in 0..model.n_atoms() {
        let r = joint_compensator_residual(
            events,
            &model.levy,
            &model.intensity,
            grid,
            &|_, m| if m == Mark::Jump(i) { 1.0 } else { 0.0 },
            1.0,
        )?;
        out.push(Metric::within_se(format!("compensator_atom_{}", i + 1), r.residual, 0.0, k));
    }
    Ok(())
}

/// Identity tolerance of the enlargement processes.
pub const IDENTITY_TOL: f64 = 1e-12;

fn run_enlargement(r: &Resolved, dir: &Path, scale: f64, out: &mut Outcome) -> Result<()> {
    let model = &r.model;
    let s = &r.settings;
    let events = simulate_events(model, s.n_paths, s.seed, s.workers)?;
    let k = 3.0 * scale;
    let checks = enlargement_checks(model, &events)?;
    out.push(Metric::at_most("lambda_log_azema_identity", checks.lambda_identity, 0.0, IDENTITY_TOL));
    out.push(Metric::at_most("u_times_azema_identity", checks.u_identity, 0.0, IDENTITY_TOL));
    for (node, b) in &checks.brackets {
        let t = model.grid.t(*node);
        out.push(Metric::within_se(format!("bracket_gap_t{t}"), b.gap, 0.0, k));
        out.push(Metric::within_se(format!("m_mean_t{t}"), b.m_mean, 0.0, k));
    }
    compensator_metrics(model, &events, k, out)?;
    event_metrics(model, &events, k, out)?;
    write_paths_artifact(r, dir, out)
}

/// Deterministic reference for `Y_0`, when one exists: the ODE value for
/// claims that read the default time only.
fn ode_reference(spec: &GeneratorSpec, r: &Resolved) -> Option<f64> {
    let claim = &r.claim;
    if claim.depends_on_price() || claim.depends_on_jumps() {
        return None;
    }
    solve(spec, claim, &r.model, SolverMode::Ode, &r.settings).ok().map(|s| s.y0())
}

/// `Y_0` by closed form: certainty equivalent minus the Merton penalty for the
/// fixed horizon; the certainty equivalent for the stopped horizon with `phi = 0`.
fn closed_form_y0(horizon: Horizon, r: &Resolved) -> Option<f64> {
    let model = &r.model;
    if !model.market.is_constant() {
        return None;
    }
    let ce = certainty_equivalent(&r.claim, model).ok()?;
    let phi_sq = model.market.phi_norm_sq(0.0);
    match horizon {
        Horizon::Fixed => Some(ce - phi_sq * model.grid.horizon() / (2.0 * model.market.alpha)),
        Horizon::Stopped if phi_sq == 0.0 => Some(ce),
        Horizon::Stopped => None,
    }
}

/// The bound is attained by deterministic solutions; allow for round-off.
fn bound_tolerance(bound: f64) -> f64 {
    bound + IDENTITY_TOL * bound.max(1.0)
}

fn lsmc_y0_metric(name: &str, y0: f64, se: f64, reference: f64, scale: f64) -> Metric {
    Metric::at_most(name, (y0 - reference).abs(), se, scale * LSMC_TOL.max(3.0 * se))
}

fn solution_metrics(
    spec: &GeneratorSpec,
    sol: &BsdeSolution,
    r: &Resolved,
    mode: SolverMode,
    bundles: &[ScenarioBundle],
    scale: f64,
    out: &mut Outcome,
) -> Result<()> {
    let y0 = sol.y0();
    let bound = apriori_bound(spec, &r.claim, r.model.grid.horizon());
    out.push(Metric::at_most("y0_apriori_bound", y0.abs(), sol.y0_se(), bound_tolerance(bound)));
    match mode {
        SolverMode::Ode => {
            if let Some(cf) = closed_form_y0(spec.horizon, r) {
                out.push(Metric::at_most("y0_closed_form_error", (y0 - cf).abs(), 0.0, ODE_TOL_CLOSED_FORM));
            }
        }
        SolverMode::Lsmc => {
            if let Some(reference) = ode_reference(spec, r) {
                out.push(lsmc_y0_metric("y0_ode_error", y0, sol.y0_se(), reference, scale));
            }
            let (res, total) = residual_summary(sol, spec, bundles, &r.model)?;
            let ok = res
                .iter()
                .filter(|e| e.mean.abs() <= 3.0 * e.se + RESIDUAL_FLOOR)
                .count();
            out.push(Metric::at_least(
                "bsde_residual_fraction_within_3se",
                ok as f64 / res.len().max(1) as f64,
                RESIDUAL_FRACTION,
            ));
            out.push(lsmc_y0_metric("bsde_pathwise_value_gap", y0 + total.mean, total.se, y0, scale));
        }
    }
    out.warnings.extend(sol.warnings.iter().cloned());
    Ok(())
}

/// Solves on `bundles` (LSMC) or by the ODE, and returns per-node statistics.
fn solve_with_stats(
    spec: &GeneratorSpec,
    r: &Resolved,
    mode: SolverMode,
    bundles: &[ScenarioBundle],
) -> Result<(BsdeSolution, Vec<NodeStats>)> {
    match mode {
        SolverMode::Lsmc => {
            let sol = solve_lsmc_on(spec, &r.claim, &r.model, bundles, &r.settings)?;
            let stats = sol.stats.clone();
            Ok((sol, stats))
        }
        SolverMode::Ode => {
            let sol = solve(spec, &r.claim, &r.model, SolverMode::Ode, &r.settings)?;
            let stats = node_stats(&sol, bundles, &r.model)?;
            Ok((sol, stats))
        }
    }
}

fn run_solve(cfg: &ExperimentConfig, r: &Resolved, dir: &Path, scale: f64, out: &mut Outcome) -> Result<()> {
    let mode = cfg.solver_mode();
    let spec = GeneratorSpec::from_model(&r.model, Horizon::Fixed);
    let bundles = simulate(&r.model, r.settings.n_paths, r.settings.seed, r.settings.workers)?;
    let (sol, stats) = solve_with_stats(&spec, r, mode, &bundles)?;
    solution_metrics(&spec, &sol, r, mode, &bundles, scale, out)?;
    out.write(dir, "bsde.csv", |w| write_bsde_csv(&stats, w))
}

fn run_optimize(cfg: &ExperimentConfig, r: &Resolved, dir: &Path, out: &mut Outcome) -> Result<()> {
    if cfg.solver.mode == ConfigSolverMode::Tree {
        return Err(tree_mode_unsupported("optimize"));
    }
    let mode = cfg.solver_mode();
    let spec = GeneratorSpec::from_model(&r.model, Horizon::Fixed);
    let sol = Arc::new(solve(&spec, &r.claim, &r.model, mode, &r.settings)?);
    optimality_metrics(sol, &r.model, &r.settings, r.model.market.x0, dir, "", out)
}

/// Optimality checks on independent verification paths (`seed + 1`).
pub fn optimality_metrics(
    sol: Arc<BsdeSolution>,
    model: &Model,
    settings: &LsmcSettings,
    x: f64,
    dir: &Path,
    prefix: &str,
    out: &mut Outcome,
) -> Result<()> {
    let rep = verify_martingale_optimality(
        sol.clone(),
        model,
        &default_candidate_grid(),
        x,
        settings.n_paths,
        settings.seed.wrapping_add(1),
        settings.workers,
    )?;
    out.push(Metric::at_most(
        format!("{prefix}argmax_distance"),
        (rep.argmax_theta - rep.theta_star).abs(),
        0.0,
        rep.grid_step * (1.0 + 1e-9),
    ));
    let worst = rep
        .candidates
        .iter()
        .map(|c| (c.value - rep.value_function) / c.se.max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(Metric::at_most(format!("{prefix}value_bound_excess_in_se"), worst, 0.0, 3.0));
    let r0 = &rep.r_star[0];
    let (dev, se) = rep.r_star.iter().fold((0.0f64, 0.0f64), |(d, s), c| {
        (d.max((c.mean - r0.mean).abs()), s.max(c.se.max(r0.se)))
    });
    out.push(Metric::at_most(format!("{prefix}r_star_checkpoint_drift"), dev, se, 3.0 * se + 1e-12));
    out.push(Metric::zero_count(
        format!("{prefix}r_suboptimal_increases"),
        usize::from(!rep.r_suboptimal_nonincreasing),
    ));
    let vf = value_function(sol.y0(), x, sol.alpha)?;
    out.push(Metric::at_most(
        format!("{prefix}value_star_gap"),
        (rep.value_star.value - vf).abs(),
        rep.value_star.se,
        3.0 * rep.value_star.se + 1e-12,
    ));
    if matches!(sol.kind, crate::bsde::SolutionKind::Ode(_)) {
        let n = settings.n_paths.min(FACTORIZATION_PATHS);
        let bundles = simulate(model, n, settings.seed.wrapping_add(1), settings.workers)?;
        let star = optimal_strategy(sol.clone());
        let res = factorization_residual(&star, &sol, &bundles, model, x)?;
        out.push(Metric::at_most(
            format!("{prefix}factorization_residual"),
            res,
            0.0,
            5.0 * model.grid.dt(),
        ));
    }
    out.write(dir, &format!("{prefix}optimality.csv"), |w| write_optimality_csv(&rep, w))?;
    out.write(dir, &format!("{prefix}rprocess.csv"), |w| write_rprocess_csv(&rep.r_star_path, w))
}

fn run_indifference(cfg: &ExperimentConfig, r: &Resolved, dir: &Path, scale: f64, out: &mut Outcome) -> Result<()> {
    if cfg.solver.mode == ConfigSolverMode::Tree {
        return Err(tree_mode_unsupported("indifference"));
    }
    let mode = cfg.solver_mode();
    let x = r.model.market.x0;
    let rep = indifference_price(&r.claim, &r.model, mode, &r.settings, x)?;
    let u0 = value_function(rep.y0_zero, x, r.model.market.alpha)?.abs();
    out.push(Metric::at_most(
        "indifference_identity_residual",
        rep.identity_residual,
        0.0,
        1e-9 * u0.max(1.0),
    ));
    if let Ok(ce) = certainty_equivalent(&r.claim, &r.model) {
        match mode {
            SolverMode::Ode => out.push(Metric::at_most(
                "price_closed_form_error",
                (rep.pi - ce).abs(),
                0.0,
                ODE_TOL_CLOSED_FORM,
            )),
            SolverMode::Lsmc => out.push(lsmc_y0_metric("price_closed_form_error", rep.pi, rep.se, ce, scale)),
        }
    }
    out.write(dir, "indifference.csv", |w| {
        writeln!(w, "pi,se,y0_claim,y0_claim_se,y0_zero,y0_zero_se")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            rep.pi, rep.se, rep.y0_claim, rep.y0_claim_se, rep.y0_zero, rep.y0_zero_se
        )?;
        Ok(())
    })
}

fn run_random_horizon(
    cfg: &ExperimentConfig,
    r: &Resolved,
    dir: &Path,
    scale: f64,
    out: &mut Outcome,
) -> Result<()> {
    if cfg.solver.mode == ConfigSolverMode::Tree {
        return Err(tree_mode_unsupported("random-horizon"));
    }
    let mode = cfg.solver_mode();
    let rep = random_horizon_value(&r.claim, &r.model, mode, &r.settings, r.model.market.x0)?;
    out.push(Metric::zero_count(
        "strategy_nonzero_after_default",
        usize::from(!rep.strategy_zero_after_default),
    ));
    out.push(Metric::zero_count("y_moves_after_default", usize::from(!rep.y_constant_after_default)));
    let spec = GeneratorSpec::from_model(&r.model, Horizon::Stopped);
    let bundles = simulate(&r.model, r.settings.n_paths, r.settings.seed, r.settings.workers)?;
    solution_metrics(&spec, &rep.solution, r, mode, &bundles, scale, out)?;
    let stats = match mode {
        SolverMode::Lsmc => rep.solution.stats.clone(),
        SolverMode::Ode => node_stats(&rep.solution, &bundles, &r.model)?,
    };
    out.write(dir, "bsde.csv", |w| write_bsde_csv(&stats, w))
}

fn run_tree(r: &Resolved, dir: &Path, out: &mut Outcome) -> Result<()> {
    r.validation.require_oracle(r.model.grid.dt())?;
    let spec = TreeSpec::from_model(&r.model)?;
    let tree = build_tree(spec)?;
    let leaves = tree.leaf_values(&r.claim)?;
    let reps = tree_representation(&tree, &leaves, Arithmetic::Float)?;
    out.push(Metric::at_most("representation_max_residual", max_residual(&reps), 0.0, 1e-10));
    let span_failures = reps
        .iter()
        .filter(|rep| rep.n_outcomes > 0 && rep.span_dim + 1 != rep.n_outcomes)
        .count();
    out.push(Metric::zero_count("span_deficient_nodes", span_failures));
    out.push(Metric::zero_count("post_default_leaks", usize::from(!post_default_clean(&tree))));
    let gen = tree_generator(&tree.spec, r.model.market.alpha)?;
    let binomial = tree.spec.n_marks() == 0 && tree.spec.default_probs.iter().all(|q| *q == 0.0);
    let driver = if binomial {
        DriverKind::ExactDiscrete
    } else {
        DriverKind::Continuous
    };
    let bsde = tree_bsde(&tree, &leaves, &gen, driver)?;
    let bound = apriori_bound(&gen, &r.claim, r.model.grid.horizon());
    out.push(Metric::at_most("y0_apriori_bound", bsde.y0().abs(), 0.0, bound_tolerance(bound)));
    if binomial {
        let x = r.model.market.x0;
        let alpha = r.model.market.alpha;
        let dp = tree_dp_optimize(&tree, &leaves, alpha, x)?;
        let v = value_function(bsde.y0(), x, alpha)?;
        out.push(Metric::at_most("dp_bsde_value_gap", (dp.value - v).abs(), 0.0, 1e-6));
    }
    out.write(dir, "tree.csv", |w| write_tree_csv(&tree, &bsde, w))
}

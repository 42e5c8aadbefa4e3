//! Exponential-utility maximization: the optimal feedback strategy
//! `theta* = Z + phi / alpha`, the value function `-exp(-alpha (x - Y_0))`,
//! the process `R^theta = -exp(-alpha (X^theta - Y))` and its factorization,
//! Monte Carlo verification of martingale optimality, indifference prices and
//! the random-horizon problem.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bsde::{solve, BsdeSolution, GeneratorSpec, Horizon, LsmcSettings, SolverMode, EXP_LIMIT};
use crate::error::{Error, Result};
use crate::market::{simulate, wealth, NodeState, ScenarioBundle, TradingRule};
use crate::model::{ClaimSpec, Model};
use crate::parallel::{try_map_indexed, with_workers};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Constant,
    Feedback,
    GridCandidate,
}

#[derive(Debug, Clone)]
enum Rule {
    Constant(Vec<f64>),
    Feedback {
        solution: Arc<BsdeSolution>,
        /// Zero position once default has happened.
        stopped: bool,
    },
}

/// A bounded trading rule.
#[derive(Debug, Clone)]
pub struct Strategy {
    rule: Rule,
    pub kind: StrategyKind,
    pub bound: f64,
}

impl Strategy {
    pub fn constant(theta: Vec<f64>) -> Self {
        let bound = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        Strategy {
            rule: Rule::Constant(theta),
            kind: StrategyKind::Constant,
            bound,
        }
    }

    fn candidate(theta: Vec<f64>) -> Self {
        Strategy {
            kind: StrategyKind::GridCandidate,
            ..Strategy::constant(theta)
        }
    }
}

impl TradingRule for Strategy {
    fn bound(&self) -> f64 {
        self.bound
    }

    fn theta(&self, node: &NodeState<'_>, out: &mut [f64]) -> Result<()> {
        match &self.rule {
            Rule::Constant(v) => out.copy_from_slice(v),
            Rule::Feedback { solution, stopped } => {
                if *stopped && node.defaulted {
                    out.fill(0.0);
                    return Ok(());
                }
                solution.z_at(node, out)?;
                for (o, f) in out.iter_mut().zip(&solution.phi) {
                    *o += f.eval(node.t) / solution.alpha;
                }
            }
        }
        Ok(())
    }
}

/// `theta* = Z + phi / alpha`, switched off after default on a stopped horizon.
pub fn optimal_strategy(solution: Arc<BsdeSolution>) -> Strategy {
    let bound = (solution.z_bound() + solution.phi_max / solution.alpha) * (1.0 + 1e-12) + 1e-300;
    let stopped = solution.horizon == Horizon::Stopped;
    Strategy {
        rule: Rule::Feedback { solution, stopped },
        kind: StrategyKind::Feedback,
        bound,
    }
}

fn neg_exp(exponent: f64, context: &'static str) -> Result<f64> {
    if !exponent.is_finite() || exponent.abs() > EXP_LIMIT {
        return Err(Error::Overflow {
            context,
            magnitude: exponent.abs(),
            limit: EXP_LIMIT,
        });
    }
    Ok(-exponent.exp())
}

/// `-exp(-alpha (x - y0))`.
pub fn value_function(y0: f64, x: f64, alpha: f64) -> Result<f64> {
    neg_exp(-alpha * (x - y0), "value function")
}

/// Wealth, `Y` and `R^theta` along one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RPath {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
}

/// `R^theta_k = -exp(-alpha (X_k - Y_k))`; at `T` this is `-exp(-alpha (X_T - xi))`.
pub fn r_process(
    strategy: &Strategy,
    solution: &BsdeSolution,
    bundle: &ScenarioBundle,
    model: &Model,
    x: f64,
) -> Result<RPath> {
    let w = wealth(strategy, bundle, model, x)?;
    let mut y = Vec::with_capacity(w.values.len());
    bundle.for_each_node(model, |node| {
        y.push(solution.y_at(node)?);
        Ok(())
    })?;
    let r = w
        .values
        .iter()
        .zip(&y)
        .map(|(xk, yk)| neg_exp(-solution.alpha * (xk - yk), "R process"))
        .collect::<Result<Vec<_>>>()?;
    Ok(RPath { x: w.values, y, r })
}

/// Decomposition `R^theta = e^{-alpha (x - Y_0)} A^theta E(H^theta)` along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    /// `A^theta_k = -exp(1/2 alpha^2 sum |theta - Z - phi/alpha|^2 dt)`.
    pub a: Vec<f64>,
    /// Stochastic exponential of `H^theta`.
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    /// `max_k |R - e^{-alpha (x - Y_0)} A E| / |R|`.
    pub max_rel_residual: f64,
}

/// Computes both sides of the factorization identity on one path.
///
/// `H^theta = -alpha (theta - Z) . B + (e^{alpha W} - 1) * (mu - nu)`; the
/// continuous part enters as `exp(H^c - <H^c>/2)`, the jump part as the
/// Doleans-Dade product `prod (1 + dH) exp(-sum (e^{alpha W} - 1) nu)`.
pub fn factorize(
    strategy: &Strategy,
    solution: &BsdeSolution,
    bundle: &ScenarioBundle,
    model: &Model,
    x: f64,
) -> Result<Factorization> {
    let alpha = solution.alpha;
    let grid = &model.grid;
    let dt = grid.dt();
    let d = model.dim();
    let m = model.n_atoms();
    let path = r_process(strategy, solution, bundle, model, x)?;
    let y0 = path.y[0];
    let scale = (-alpha * (x - y0)).exp();
    let n = grid.n_steps();
    let mut a = Vec::with_capacity(n + 1);
    let mut e = Vec::with_capacity(n + 1);
    let (mut quad, mut log_c, mut jump_prod, mut comp) = (0.0f64, 0.0f64, 1.0f64, 0.0f64);
    let mut theta = vec![0.0; d];
    bundle.for_each_node(model, |node| {
        a.push(-quad.exp());
        e.push(log_c.exp() * jump_prod * (-comp).exp());
        let k = node.k;
        if k == n {
            return Ok(());
        }
        let v = solution.values_at(node)?;
        strategy.theta(node, &mut theta)?;
        let (t, t1) = (grid.t(k), grid.t(k + 1));
        for j in 0..d {
            let g = theta[j] - v.z[j] - solution.phi[j].eval(t) / alpha;
            quad += 0.5 * alpha * alpha * g * g * dt;
            let h = -alpha * (theta[j] - v.z[j]);
            log_c += h * bundle.db(k)[j] - 0.5 * h * h * dt;
        }
        // jump part: compensator over the step, event factors where events happen
        let next_jumps = bundle.events.counts_at(k + 1, m);
        for i in 0..m.min(v.w.len()) {
            comp += (alpha * v.w[i]).exp_m1() * model.levy.rate_integral(i, t, t1);
            let dn = next_jumps[i] - node.jumps[i];
            if dn > 0 {
                jump_prod *= (alpha * v.w[i] * dn as f64).exp();
            }
        }
        if !node.defaulted {
            comp += (alpha * v.w_def).exp_m1() * model.intensity.hazard_between(t, t1);
            if bundle.default().h_at(k + 1) {
                jump_prod *= (alpha * v.w_def).exp();
            }
        }
        Ok(())
    })?;
    let mut max_rel = 0.0f64;
    for k in 0..=n {
        if !(e[k] > 0.0) {
            return Err(Error::solver(
                "utility",
                format!("stochastic exponential left (0, inf) at node {k}: {}", e[k]),
            ));
        }
        let rhs = scale * a[k] * e[k];
        max_rel = max_rel.max((path.r[k] - rhs).abs() / path.r[k].abs());
    }
    Ok(Factorization {
        a,
        e,
        r: path.r,
        max_rel_residual: max_rel,
    })
}

/// Largest relative factorization residual over the given paths.
pub fn factorization_residual(
    strategy: &Strategy,
    solution: &BsdeSolution,
    bundles: &[ScenarioBundle],
    model: &Model,
    x: f64,
) -> Result<f64> {
    let per_path = try_map_indexed(bundles.len(), |p| {
        Ok(factorize(strategy, solution, &bundles[p], model, x)?.max_rel_residual)
    })?;
    Ok(per_path.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateValue {
    pub theta: f64,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

/// Outcome of the Monte Carlo martingale-optimality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub candidates: Vec<CandidateValue>,
    /// `theta*` at time zero (first component).
    pub theta_star: f64,
    pub argmax_theta: f64,
    pub grid_step: f64,
    pub argmax_ok: bool,
    /// `-exp(-alpha (x - Y_0))`.
    pub value_function: f64,
    pub value_star: CandidateValue,
    /// Candidates with `E[R_T] > value_function + 3 SE`.
    pub violations: usize,
    pub r_star: Vec<Checkpoint>,
    pub r_star_constant: bool,
    pub suboptimal_theta: f64,
    pub r_suboptimal: Vec<Checkpoint>,
    pub r_suboptimal_nonincreasing: bool,
    /// Full `mean(R^{theta*})` path for plotting.
    pub r_star_path: Vec<Checkpoint>,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.argmax_ok && self.violations == 0 && self.r_star_constant && self.r_suboptimal_nonincreasing
    }
}

/// `-1:0.05:1`.
pub fn default_candidate_grid() -> Vec<f64> {
    (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect()
}

fn checkpoints(n: usize) -> Vec<usize> {
    (0..5).map(|i| (i * n + 2) / 4).collect()
}

fn mean_r_paths(
    strategy: &Strategy,
    solution: &BsdeSolution,
    bundles: &[ScenarioBundle],
    model: &Model,
    x: f64,
) -> Result<Vec<Checkpoint>> {
    let paths = try_map_indexed(bundles.len(), |p| Ok(r_process(strategy, solution, &bundles[p], model, x)?.r))?;
    let n1 = model.grid.n_steps() + 1;
    Ok((0..n1)
        .map(|k| {
            let xs: Vec<f64> = paths.iter().map(|r| r[k]).collect();
            let e = Estimate::from_samples(&xs);
            Checkpoint {
                t: model.grid.t(k),
                mean: e.mean,
                se: e.se,
            }
        })
        .collect())
}

fn terminal_r(
    theta: &[f64],
    solution: &BsdeSolution,
    bundles: &[ScenarioBundle],
    xi: &[f64],
    model: &Model,
    x: f64,
) -> Result<Estimate> {
    let strat = Strategy::candidate(theta.to_vec());
    let vals = try_map_indexed(bundles.len(), |p| {
        let w = wealth(&strat, &bundles[p], model, x)?;
        neg_exp(-solution.alpha * (w.terminal() - xi[p]), "terminal utility")
    })?;
    Ok(Estimate::from_samples(&vals))
}

/// Brute-force check of the optimality principle over constant strategies
/// `theta e_1` for `theta` in `candidates`, with common random numbers.
pub fn verify_martingale_optimality(
    solution: Arc<BsdeSolution>,
    model: &Model,
    candidates: &[f64],
    x: f64,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<OptimalityReport> {
    if candidates.len() < 2 {
        return Err(Error::validation("need at least two candidate strategies"));
    }
    let bundles = simulate(model, n_paths, seed, workers)?;
    with_workers(workers, || {
        optimality_on(solution, model, candidates, x, &bundles)
    })?
}

fn optimality_on(
    solution: Arc<BsdeSolution>,
    model: &Model,
    candidates: &[f64],
    x: f64,
    bundles: &[ScenarioBundle],
) -> Result<OptimalityReport> {
    let d = model.dim();
    let n = model.grid.n_steps();
    let xi = try_map_indexed(bundles.len(), |p| {
        let mut out = 0.0;
        bundles[p].for_each_node(model, |node| {
            if node.k == n {
                out = solution.y_at(node)?;
            }
            Ok(())
        })?;
        Ok(out)
    })?;
    let mut values = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut theta = vec![0.0; d];
        theta[0] = *c;
        let e = terminal_r(&theta, &solution, bundles, &xi, model, x)?;
        values.push(CandidateValue {
            theta: *c,
            value: e.mean,
            se: e.se,
        });
    }
    let vf = value_function(solution.y0(), x, solution.alpha)?;
    let star = optimal_strategy(solution.clone());
    let mut theta0 = vec![0.0; d];
    bundles[0].for_each_node(model, |node| {
        if node.k == 0 {
            star.theta(node, &mut theta0)?;
        }
        Ok(())
    })?;
    let r_star_path = mean_r_paths(&star, &solution, bundles, model, x)?;
    let value_star = {
        let last = r_star_path.last().expect("nonempty");
        CandidateValue {
            theta: theta0[0],
            value: last.mean,
            se: last.se,
        }
    };
    let best = values
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("nonempty grid");
    let grid_step = candidates
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(f64::INFINITY, f64::min);
    let argmax_ok = (best.theta - theta0[0]).abs() <= grid_step * (1.0 + 1e-9);
    let violations = values
        .iter()
        .filter(|v| v.value > vf + 3.0 * v.se)
        .count();
    let cps = checkpoints(n);
    let r_star: Vec<Checkpoint> = cps.iter().map(|k| r_star_path[*k].clone()).collect();
    let r0 = r_star[0].mean;
    let r_star_constant = r_star
        .iter()
        .all(|c| (c.mean - r0).abs() <= 3.0 * c.se.max(r_star[0].se) + 1e-12);
    let sub = theta0[0] + 0.5;
    let mut sub_theta = vec![0.0; d];
    sub_theta[0] = sub;
    let sub_path = mean_r_paths(&Strategy::constant(sub_theta), &solution, bundles, model, x)?;
    let r_suboptimal: Vec<Checkpoint> = cps.iter().map(|k| sub_path[*k].clone()).collect();
    let r_suboptimal_nonincreasing = r_suboptimal
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + 3.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt());
    Ok(OptimalityReport {
        candidates: values.clone(),
        theta_star: theta0[0],
        argmax_theta: best.theta,
        grid_step,
        argmax_ok,
        value_function: vf,
        value_star,
        violations,
        r_star,
        r_star_constant,
        suboptimal_theta: sub,
        r_suboptimal,
        r_suboptimal_nonincreasing,
        r_star_path,
    })
}

/// Writes `theta,value,se`.
pub fn write_optimality_csv(report: &OptimalityReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "theta,value,se")?;
    for c in &report.candidates {
        writeln!(out, "{},{},{}", c.theta, c.value, c.se)?;
    }
    Ok(())
}

/// Writes `t,mean_R,se`.
pub fn write_rprocess_csv(path: &[Checkpoint], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "t,mean_R,se")?;
    for c in path {
        writeln!(out, "{},{},{}", c.t, c.mean, c.se)?;
    }
    Ok(())
}

/// `pi = Y_0^xi - Y_0^0` with both solves on the same scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndifferenceReport {
    pub pi: f64,
    pub se: f64,
    pub y0_claim: f64,
    pub y0_claim_se: f64,
    pub y0_zero: f64,
    pub y0_zero_se: f64,
    /// `|U^0(x) - U^xi(x + pi)|`.
    pub identity_residual: f64,
}

/// Solves the claim problem (generator `f`) and the claim-free market problem
/// (generator without the default term) and returns their difference.
pub fn indifference_price(
    claim: &ClaimSpec,
    model: &Model,
    mode: SolverMode,
    settings: &LsmcSettings,
    x: f64,
) -> Result<IndifferenceReport> {
    let spec = GeneratorSpec::from_model(model, Horizon::Fixed);
    let with_claim = solve(&spec, claim, model, mode, settings)?;
    let zero = solve(&spec.market_filtration(), &ClaimSpec::zero(), model, mode, settings)?;
    let (a, b) = (with_claim.y0(), zero.y0());
    let pi = a - b;
    let alpha = spec.alpha;
    let identity_residual = (value_function(b, x, alpha)? - value_function(a, x + pi, alpha)?).abs();
    Ok(IndifferenceReport {
        pi,
        se: (with_claim.y0_se().powi(2) + zero.y0_se().powi(2)).sqrt(),
        y0_claim: a,
        y0_claim_se: with_claim.y0_se(),
        y0_zero: b,
        y0_zero_se: zero.y0_se(),
        identity_residual,
    })
}

/// `(1/alpha) ln E[exp(alpha xi)]` for a claim that depends on the default
/// time only. This is its indifference price (the claim cannot be hedged), and
/// the random-horizon `Y_0` when `phi = 0`.
pub fn certainty_equivalent(claim: &ClaimSpec, model: &Model) -> Result<f64> {
    if claim.depends_on_price() || claim.depends_on_jumps() {
        return Err(Error::validation(
            "certainty equivalent needs a claim that depends on the default time only",
        ));
    }
    let alpha = model.market.alpha;
    let horizon = model.grid.horizon();
    let intensity = &model.intensity;
    // shift by alpha * bound so every exponent is <= 0
    let c = alpha * claim.bound;
    let mut acc = (-intensity.cumulative(horizon) + alpha * claim.survival_value()? - c).exp();
    let mut cuts = vec![0.0];
    cuts.extend(intensity.lambda.breakpoints().iter().copied().filter(|b| *b > 0.0 && *b < horizon));
    cuts.push(horizon);
    let mut bad = false;
    let density = |s: f64| match claim.default_value(s) {
        Ok(g) => intensity.eval(s).max(0.0) * (-intensity.cumulative(s) + alpha * g - c).exp(),
        Err(_) => f64::NAN,
    };
    for w in cuts.windows(2) {
        let part = crate::model::adaptive_simpson(&density, w[0], w[1], 1e-14);
        bad |= !part.is_finite();
        acc += part;
    }
    if bad {
        // surface the bound violation with its message
        claim.default_value(horizon)?;
        return Err(Error::solver("utility", "certainty-equivalent quadrature failed"));
    }
    Ok((acc.ln() + c) / alpha)
}

#[derive(Debug, Clone)]
pub struct RandomHorizonReport {
    pub value: f64,
    pub y0: f64,
    pub y0_se: f64,
    pub strategy: Strategy,
    pub solution: Arc<BsdeSolution>,
    /// The strategy is exactly zero at every post-default node checked.
    pub strategy_zero_after_default: bool,
    /// `Y` does not move after default on any checked path.
    pub y_constant_after_default: bool,
    pub paths_checked: usize,
    pub defaults_checked: usize,
}

/// Stopped-horizon value `-exp(-alpha (x - Y_0^{T ^ tau}))` and strategy
/// `1_{[0, T ^ tau]} theta*`, with pathwise checks on `settings.n_paths` scenarios.
pub fn random_horizon_value(
    claim: &ClaimSpec,
    model: &Model,
    mode: SolverMode,
    settings: &LsmcSettings,
    x: f64,
) -> Result<RandomHorizonReport> {
    let spec = GeneratorSpec::from_model(model, Horizon::Stopped);
    let solution = Arc::new(solve(&spec, claim, model, mode, settings)?);
    let strategy = optimal_strategy(solution.clone());
    let bundles = simulate(model, settings.n_paths, settings.seed, settings.workers)?;
    let d = model.dim();
    let checks = with_workers(settings.workers, || {
        try_map_indexed(bundles.len(), |p| {
            let b = &bundles[p];
            let (mut zero_ok, mut const_ok) = (true, true);
            let mut frozen: Option<f64> = None;
            let mut theta = vec![0.0; d];
            b.for_each_node(model, |node| {
                if node.defaulted {
                    strategy.theta(node, &mut theta)?;
                    zero_ok &= theta.iter().all(|v| *v == 0.0);
                    let y = solution.y_at(node)?;
                    match frozen {
                        None => frozen = Some(y),
                        Some(f) => const_ok &= f == y,
                    }
                }
                Ok(())
            })?;
            Ok((zero_ok, const_ok, frozen.is_some()))
        })
    })??;
    let y0 = solution.y0();
    Ok(RandomHorizonReport {
        value: value_function(y0, x, spec.alpha)?,
        y0,
        y0_se: solution.y0_se(),
        strategy_zero_after_default: checks.iter().all(|c| c.0),
        y_constant_after_default: checks.iter().all(|c| c.1),
        paths_checked: checks.len(),
        defaults_checked: checks.iter().filter(|c| c.2).count(),
        strategy,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
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
            seed: 11,
            workers: 0,
        }
    }

    fn ode_solution(m: &Model, claim: &ClaimSpec, horizon: Horizon) -> Arc<BsdeSolution> {
        let spec = GeneratorSpec::from_model(m, horizon);
        Arc::new(solve(&spec, claim, m, SolverMode::Ode, &settings(1)).unwrap())
    }

    #[test]
    fn value_function_examples() {
        assert!((value_function(-0.02, 0.0, 1.0).unwrap() + 0.9801986733).abs() < 1e-9);
        assert_eq!(value_function(0.3, 0.3, 2.0).unwrap(), -1.0);
        assert!((value_function(0.821083, 0.0, 1.0).unwrap() + 2.27296).abs() < 1e-4);
        assert!(value_function(0.0, -800.0, 1.0).is_err());
    }

    #[test]
    fn merton_strategy() {
        let m = model(0.2, 0.3, 10);
        let sol = ode_solution(&m, &ClaimSpec::zero(), Horizon::Fixed);
        let s = optimal_strategy(sol);
        let b = simulate(&m, 3, 1, 0).unwrap();
        let mut th = [0.0];
        b[0].for_each_node(&m, |node| {
            s.theta(node, &mut th)?;
            assert!((th[0] - 0.2).abs() < 1e-15);
            Ok(())
        })
        .unwrap();
        let m0 = model(0.0, 0.3, 10);
        let s0 = optimal_strategy(ode_solution(&m0, &ClaimSpec::zero(), Horizon::Fixed));
        b[0].for_each_node(&m0, |node| {
            s0.theta(node, &mut th)?;
            assert_eq!(th[0], 0.0);
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn r_process_terminal_identity() {
        let m = model(0.2, 0.3, 10);
        let sol = ode_solution(&m, &ClaimSpec::survival(1.0), Horizon::Fixed);
        let b = simulate(&m, 20, 3, 0).unwrap();
        let strat = Strategy::constant(vec![0.37]);
        for bundle in &b {
            let r = r_process(&strat, &sol, bundle, &m, 0.1).unwrap();
            let xi = if bundle.default().h_at(10) { 0.0 } else { 1.0 };
            let expect = -(-(r.x[10] - xi)).exp();
            assert_eq!(*r.r.last().unwrap(), expect);
        }
        // theta = 0, xi = 0, phi = 0 => R constant
        let m0 = model(0.0, 0.3, 10);
        let sol0 = ode_solution(&m0, &ClaimSpec::zero(), Horizon::Fixed);
        let r = r_process(&Strategy::constant(vec![0.0]), &sol0, &b[0], &m0, 0.5).unwrap();
        assert!(r.r.iter().all(|v| *v == -(-0.5f64).exp()));
    }

    #[test]
    fn factorization_identity() {
        let m = model(0.2, 0.0, 50);
        let sol = ode_solution(&m, &ClaimSpec::zero(), Horizon::Fixed);
        let b = simulate(&m, 200, 5, 0).unwrap();
        let res = factorization_residual(&Strategy::constant(vec![0.5]), &sol, &b, &m, 0.0).unwrap();
        assert!(res <= 5.0 * m.grid.dt(), "{res}");
        let star = optimal_strategy(sol.clone());
        let f = factorize(&star, &sol, &b[0], &m, 0.0).unwrap();
        assert!(f.a.iter().all(|a| *a == -1.0));
        assert!(f.max_rel_residual < 1e-12);
    }

    #[test]
    fn factorization_with_default() {
        let m = model(0.2, 0.5, 50);
        let sol = ode_solution(&m, &ClaimSpec::survival(1.0), Horizon::Fixed);
        let b = simulate(&m, 300, 5, 0).unwrap();
        let star = optimal_strategy(sol.clone());
        for bundle in &b {
            let f = factorize(&star, &sol, bundle, &m, 0.0).unwrap();
            assert!(f.a.iter().all(|a| *a == -1.0));
            assert!(f.max_rel_residual < 0.05, "{}", f.max_rel_residual);
        }
    }

    #[test]
    fn optimality_merton_small() {
        let m = model(0.2, 0.3, 20);
        let sol = ode_solution(&m, &ClaimSpec::zero(), Horizon::Fixed);
        let rep = verify_martingale_optimality(sol, &m, &default_candidate_grid(), 0.0, 20_000, 3, 0).unwrap();
        assert!(rep.argmax_ok, "{rep:?}");
        assert_eq!(rep.violations, 0);
        assert!(rep.r_star_constant);
        assert!(rep.r_suboptimal_nonincreasing);
        assert!((rep.value_function + 0.9801986733).abs() < 1e-9);
    }

    #[test]
    fn indifference_ode() {
        let m = model(0.0, 0.3, 50);
        let r = indifference_price(&ClaimSpec::survival(1.0), &m, SolverMode::Ode, &settings(1), 0.0).unwrap();
        assert!((r.pi - 0.8210717221).abs() < 1e-8);
        assert!(r.identity_residual < 1e-15);
        let m = model(0.2, 0.3, 50);
        let z = indifference_price(&ClaimSpec::zero(), &m, SolverMode::Ode, &settings(1), 0.0).unwrap();
        assert_eq!(z.pi, 0.0);
        let c = indifference_price(&ClaimSpec::constant(0.4), &m, SolverMode::Ode, &settings(1), 0.0).unwrap();
        assert!((c.pi - 0.4).abs() < 1e-12);
    }

    #[test]
    fn random_horizon_ode() {
        let m = model(0.0, 0.3, 50);
        let r = random_horizon_value(&ClaimSpec::default_indicator(1.0), &m, SolverMode::Ode, &settings(2_000), 0.0)
            .unwrap();
        assert!((r.y0 - 0.3683496675).abs() < 1e-8);
        assert!((r.value + 0.3683496675f64.exp()).abs() < 1e-7);
        assert!(r.strategy_zero_after_default && r.y_constant_after_default);
        assert!(r.defaults_checked > 0);
    }

    #[test]
    fn certainty_equivalent_closed_forms() {
        let m = model(0.2, 0.3, 10);
        let bond = certainty_equivalent(&ClaimSpec::survival(1.0), &m).unwrap();
        assert!((bond - 0.8210717221).abs() < 1e-9);
        let ind = certainty_equivalent(&ClaimSpec::default_indicator(1.0), &m).unwrap();
        assert!((ind - 0.3683496675).abs() < 1e-9);
        assert!((certainty_equivalent(&ClaimSpec::constant(0.7), &m).unwrap() - 0.7).abs() < 1e-14);
        let call = ClaimSpec::new(
            crate::model::ClaimKind::CappedCall { strike: 1.0, cap: 1.0 },
            1.0,
            crate::model::Measurability::MarketOnly,
        );
        assert!(certainty_equivalent(&call, &m).is_err());
    }

    #[test]
    fn random_horizon_small_intensity_limit() {
        let m = model(0.2, 1e-6, 50);
        let r = random_horizon_value(&ClaimSpec::zero(), &m, SolverMode::Ode, &settings(10), 0.0).unwrap();
        let merton = value_function(-0.02, 0.0, 1.0).unwrap();
        assert!((r.value - merton).abs() < 1e-3);
    }
}

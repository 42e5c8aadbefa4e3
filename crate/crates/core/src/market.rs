//! Scenario simulation for the price process, the jump part of `X` and the
//! default time, plus wealth processes and the Girsanov density.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::enlargement::{enlargement_paths, sample_default, DefaultRecord, EnlargementPaths};
use crate::error::{Error, Result};
use crate::model::{derive_lane, validate_model, Lane, Model};
use crate::parallel::{try_map_indexed, with_workers};

/// A jump of the auxiliary process `X` of size `atoms[atom]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Grid step `k` (interval `(t_k, t_{k+1}]`) the jump falls in.
    pub step: usize,
    pub atom: usize,
    pub time: f64,
}

/// Jump and default events of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvents {
    pub jumps: Vec<JumpEvent>,
    pub default: DefaultRecord,
}

impl ScenarioEvents {
    /// Per-atom jump counts at node `k` (jumps in steps `< k`).
    pub fn counts_at(&self, k: usize, n_atoms: usize) -> Vec<u32> {
        let mut c = vec![0; n_atoms];
        for j in self.jumps.iter().take_while(|j| j.step < k) {
            c[j.atom] += 1;
        }
        c
    }

    /// The step the default falls in, if inside the horizon.
    pub fn default_interval(&self) -> Option<usize> {
        self.default.default_step.map(|s| s.saturating_sub(1))
    }
}

/// One simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBundle {
    pub path_id: usize,
    d: usize,
    /// Brownian increments, `n_steps * d`.
    db: Vec<f64>,
    /// Log prices, `(n_steps + 1) * d`.
    log_s: Vec<f64>,
    pub events: ScenarioEvents,
}

/// Node-`k` information a trading rule may use.
#[derive(Debug, Clone, Copy)]
pub struct NodeState<'a> {
    pub k: usize,
    pub t: f64,
    pub log_s: &'a [f64],
    pub jumps: &'a [u32],
    pub defaulted: bool,
    /// Exact default time (`+inf` if none so far is known at this node).
    pub tau: f64,
    /// Log prices at the first node at or after default, current ones before.
    pub stopped_log_s: &'a [f64],
}

impl ScenarioBundle {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_steps(&self) -> usize {
        self.db.len() / self.d
    }

    pub fn db(&self, k: usize) -> &[f64] {
        &self.db[k * self.d..(k + 1) * self.d]
    }

    pub fn log_s(&self, k: usize) -> &[f64] {
        &self.log_s[k * self.d..(k + 1) * self.d]
    }

    pub fn prices(&self, k: usize) -> Vec<f64> {
        self.log_s(k).iter().map(|x| x.exp()).collect()
    }

    /// `dB_k + phi(t_k) dt`.
    pub fn db_hat(&self, model: &Model, k: usize, out: &mut [f64]) {
        let t = model.grid.t(k);
        let dt = model.grid.dt();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.db(k)[i] + model.market.phi[i].eval(t) * dt;
        }
    }

    pub fn default(&self) -> &DefaultRecord {
        &self.events.default
    }

    pub fn enlargement(&self, model: &Model) -> Result<EnlargementPaths> {
        enlargement_paths(&self.events.default, &model.intensity, &model.grid)
    }

    /// Calls `f` at every node `0..=n` with the information available there.
    pub fn for_each_node(
        &self,
        model: &Model,
        mut f: impl FnMut(&NodeState<'_>) -> Result<()>,
    ) -> Result<()> {
        let m = model.n_atoms();
        let mut counts = vec![0u32; m];
        let mut next_jump = 0;
        for k in 0..=self.n_steps() {
            while next_jump < self.events.jumps.len() && self.events.jumps[next_jump].step < k {
                counts[self.events.jumps[next_jump].atom] += 1;
                next_jump += 1;
            }
            let defaulted = self.events.default.h_at(k);
            let stop = match self.events.default.default_step {
                Some(s) if defaulted => s,
                _ => k,
            };
            f(&NodeState {
                k,
                t: model.grid.t(k),
                log_s: self.log_s(k),
                jumps: &counts,
                defaulted,
                tau: if defaulted { self.events.default.tau } else { f64::INFINITY },
                stopped_log_s: self.log_s(stop),
            })?;
        }
        Ok(())
    }
}

fn simulate_events_for_path(model: &Model, seed: u64, path: usize) -> ScenarioEvents {
    let grid = &model.grid;
    let mut def_rng = derive_lane(seed, path as u64, Lane::Default);
    let default = sample_default(&model.intensity, grid, &mut def_rng);
    let default_interval = default.default_step.map(|s| s.saturating_sub(1));

    let mut jumps = Vec::new();
    if !model.levy.is_empty() {
        let mut rng = derive_lane(seed, path as u64, Lane::Jumps);
        for k in 0..grid.n_steps() {
            let (a, b) = (grid.t(k), grid.t(k + 1));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut hit = None;
            for i in 0..model.levy.len() {
                acc += model.levy.rate_integral(i, a, b);
                if u < acc {
                    hit = Some(i);
                    break;
                }
            }
            if let Some(atom) = hit {
                let v: f64 = rng.random();
                // at most one event per step: the default step carries no jump
                if Some(k) != default_interval {
                    jumps.push(JumpEvent {
                        step: k,
                        atom,
                        time: a + v * (b - a),
                    });
                }
            }
        }
    }
    ScenarioEvents { jumps, default }
}

fn simulate_path(model: &Model, seed: u64, path: usize) -> ScenarioBundle {
    let grid = &model.grid;
    let market = &model.market;
    let d = market.dim();
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut rng = derive_lane(seed, path as u64, Lane::Brownian);
    let mut db = Vec::with_capacity(n * d);
    let mut log_s = Vec::with_capacity((n + 1) * d);
    log_s.extend(market.s0.iter().map(|s| s.ln()));
    let mut db_hat = vec![0.0; d];
    for k in 0..n {
        let t = grid.t(k);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            db.push(z * sqrt_dt);
            db_hat[j] = z * sqrt_dt + market.phi[j].eval(t) * dt;
        }
        let sigma = market.sigma.at(t);
        for i in 0..d {
            let mut incr = 0.0;
            let mut var = 0.0;
            for j in 0..d {
                incr += sigma[(i, j)] * db_hat[j];
                var += sigma[(i, j)] * sigma[(i, j)];
            }
            let prev = log_s[k * d + i];
            log_s.push(prev + incr - 0.5 * var * dt);
        }
    }
    ScenarioBundle {
        path_id: path,
        d,
        db,
        log_s,
        events: simulate_events_for_path(model, seed, path),
    }
}

fn check_run(model: &Model, n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::validation("n_paths must be positive"));
    }
    validate_model(&model.market, &model.levy, &model.intensity, &model.grid)?;
    Ok(())
}

/// Simulates `n_paths` scenarios; path `i` only depends on `(seed, i)`.
pub fn simulate(model: &Model, n_paths: usize, seed: u64, workers: usize) -> Result<Vec<ScenarioBundle>> {
    check_run(model, n_paths)?;
    with_workers(workers, || {
        try_map_indexed(n_paths, |p| Ok(simulate_path(model, seed, p)))
    })?
}

/// Scenarios `range`, identical to the same indices of [`simulate`]; lets
/// callers stream large runs in batches.
pub fn simulate_range(
    model: &Model,
    range: std::ops::Range<usize>,
    seed: u64,
    workers: usize,
) -> Result<Vec<ScenarioBundle>> {
    check_run(model, range.len().max(1))?;
    let start = range.start;
    with_workers(workers, || {
        try_map_indexed(range.len(), |p| Ok(simulate_path(model, seed, start + p)))
    })?
}

/// Jump and default events only; identical to the events of [`simulate`] for
/// the same seed.
pub fn simulate_events(model: &Model, n_paths: usize, seed: u64, workers: usize) -> Result<Vec<ScenarioEvents>> {
    check_run(model, n_paths)?;
    with_workers(workers, || {
        try_map_indexed(n_paths, |p| Ok(simulate_events_for_path(model, seed, p)))
    })?
}

/// A bounded state-feedback rule `theta(t, state)`, integrated against `dB_hat`.
pub trait TradingRule: Sync {
    fn bound(&self) -> f64;
    fn theta(&self, node: &NodeState<'_>, out: &mut [f64]) -> Result<()>;
}

/// `theta = x + int theta dB_hat` along one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthPath {
    pub x0: f64,
    /// Wealth at every node.
    pub values: Vec<f64>,
    /// Strategy used on each step, `n_steps * d`.
    pub thetas: Vec<f64>,
}

impl WealthPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("wealth path has at least one node")
    }
}

pub fn wealth(rule: &dyn TradingRule, bundle: &ScenarioBundle, model: &Model, x0: f64) -> Result<WealthPath> {
    let d = bundle.dim();
    let n = bundle.n_steps();
    let mut values = Vec::with_capacity(n + 1);
    let mut thetas = Vec::with_capacity(n * d);
    let mut theta = vec![0.0; d];
    let mut db_hat = vec![0.0; d];
    let mut x = x0;
    values.push(x);
    let bound = rule.bound();
    bundle.for_each_node(model, |node| {
        if node.k == n {
            return Ok(());
        }
        rule.theta(node, &mut theta)?;
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > bound * (1.0 + 1e-12) {
            return Err(Error::UnboundedStrategy { value: norm, bound });
        }
        bundle.db_hat(model, node.k, &mut db_hat);
        x += theta.iter().zip(&db_hat).map(|(a, b)| a * b).sum::<f64>();
        values.push(x);
        thetas.extend_from_slice(&theta);
        Ok(())
    })?;
    Ok(WealthPath { x0, values, thetas })
}

/// Discrete density `dQ/dP = exp(-sum phi dB - 1/2 sum |phi|^2 dt)`.
pub fn girsanov_weight(bundle: &ScenarioBundle, model: &Model) -> f64 {
    let dt = model.grid.dt();
    let mut log_w = 0.0;
    for k in 0..bundle.n_steps() {
        let t = model.grid.t(k);
        for (j, db) in bundle.db(k).iter().enumerate() {
            let phi = model.market.phi[j].eval(t);
            log_w -= phi * db + 0.5 * phi * phi * dt;
        }
    }
    log_w.exp()
}

/// Constant strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRule(pub Vec<f64>);

impl TradingRule for ConstantRule {
    fn bound(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn theta(&self, _node: &NodeState<'_>, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, FiniteLevyMeasure, IntensitySpec, MarketSpec};
    use crate::stats::Estimate;

    fn model(phi: f64, lambda: f64, n: usize) -> Model {
        Model::new(
            MarketSpec::scalar(1.0, phi, 100.0, 1.0, 0.0),
            FiniteLevyMeasure::empty(),
            IntensitySpec::constant(lambda),
            build_grid(1.0, n).unwrap(),
        )
    }

    #[test]
    fn degenerate_measure_has_no_events() {
        let m = model(0.2, 0.0, 20);
        for b in simulate(&m, 200, 3, 0).unwrap() {
            assert!(b.events.jumps.is_empty());
            assert_eq!(b.events.default.tau, f64::INFINITY);
        }
    }

    #[test]
    fn log_price_increments_match_scheme() {
        let m = model(0.2, 0.3, 10);
        let b = &simulate(&m, 3, 5, 0).unwrap()[2];
        let mut dbh = [0.0];
        for k in 0..10 {
            b.db_hat(&m, k, &mut dbh);
            let incr = b.log_s(k + 1)[0] - b.log_s(k)[0];
            assert!((incr - (dbh[0] - 0.5 * 0.1)).abs() < 1e-14);
        }
    }

    #[test]
    fn martingale_price_without_drift() {
        let m = model(0.0, 0.0, 10);
        let paths = simulate(&m, 100_000, 11, 0).unwrap();
        let st: Vec<f64> = paths.iter().map(|b| b.prices(10)[0]).collect();
        let e = Estimate::from_samples(&st);
        assert!(e.within(100.0, 3.0), "{e:?}");
    }

    #[test]
    fn log_price_drift() {
        let m = model(0.2, 0.0, 10);
        let paths = simulate(&m, 100_000, 12, 0).unwrap();
        let lr: Vec<f64> = paths.iter().map(|b| b.log_s(10)[0] - 100f64.ln()).collect();
        let e = Estimate::from_samples(&lr);
        assert!(e.within(-0.3, 3.0), "{e:?}");
    }

    #[test]
    fn null_and_unit_strategies() {
        let m = model(0.2, 0.3, 16);
        let b = &simulate(&m, 1, 2, 0).unwrap()[0];
        let w = wealth(&ConstantRule(vec![0.0]), b, &m, 1.5).unwrap();
        assert!(w.values.iter().all(|x| *x == 1.5));
        let w = wealth(&ConstantRule(vec![1.0]), b, &m, 1.5).unwrap();
        let mut bhat = 0.0;
        let mut tmp = [0.0];
        for k in 0..16 {
            b.db_hat(&m, k, &mut tmp);
            bhat += tmp[0];
        }
        assert!((w.terminal() - (1.5 + bhat)).abs() < 1e-13);
    }

    #[test]
    fn expected_gain_of_constant_strategy() {
        let m = model(0.2, 0.0, 10);
        let paths = simulate(&m, 100_000, 13, 0).unwrap();
        let gains: Vec<f64> = paths
            .iter()
            .map(|b| wealth(&ConstantRule(vec![0.2]), b, &m, 0.0).unwrap().terminal())
            .collect();
        assert!(Estimate::from_samples(&gains).within(0.04, 3.0));
    }

    struct Wild;
    impl TradingRule for Wild {
        fn bound(&self) -> f64 {
            1.0
        }
        fn theta(&self, _: &NodeState<'_>, out: &mut [f64]) -> Result<()> {
            out[0] = 2.0;
            Ok(())
        }
    }

    #[test]
    fn strategy_bound_enforced() {
        let m = model(0.2, 0.0, 4);
        let b = &simulate(&m, 1, 2, 0).unwrap()[0];
        assert!(matches!(wealth(&Wild, b, &m, 0.0), Err(Error::UnboundedStrategy { .. })));
    }

    #[test]
    fn girsanov_weights() {
        let m0 = model(0.0, 0.0, 10);
        for b in simulate(&m0, 10, 1, 0).unwrap() {
            assert_eq!(girsanov_weight(&b, &m0), 1.0);
        }
        let m = model(0.2, 0.0, 10);
        let paths = simulate(&m, 100_000, 14, 0).unwrap();
        let w: Vec<f64> = paths.iter().map(|b| girsanov_weight(b, &m)).collect();
        assert!(w.iter().all(|x| *x > 0.0));
        assert!(Estimate::from_samples(&w).within(1.0, 3.0));
        let ws: Vec<f64> = paths
            .iter()
            .zip(&w)
            .map(|(b, w)| w * b.prices(10)[0])
            .collect();
        assert!(Estimate::from_samples(&ws).within(100.0, 3.0));
    }

    #[test]
    fn worker_count_does_not_change_paths() {
        let mut m = model(0.2, 0.5, 20);
        m.levy = FiniteLevyMeasure::constant(vec![vec![0.1]], vec![1.0], vec![2.0]);
        let a = simulate(&m, 300, 77, 1).unwrap();
        let b = simulate(&m, 300, 77, 4).unwrap();
        assert_eq!(a, b);
        let ev = simulate_events(&m, 300, 77, 3).unwrap();
        assert!(a.iter().zip(&ev).all(|(x, e)| &x.events == e));
    }
}

//! Cox-constructed default time and the objects of the progressively enlarged
//! filtration built from it.
//!
//! With a deterministic intensity the survival process is
//! `A_t = exp(-int_0^t lambda)`, the default compensator is
//! `Lambda_t = int_0^{t ^ tau} lambda = -log A_{t ^ tau}`, and
//! `U = E(-M) = A^{-1} 1_{[0, tau)}`.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::ScenarioEvents;
use crate::model::{FiniteLevyMeasure, IntensitySpec, Stream, TimeGrid};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultRecord {
    /// Exact default time, `+inf` when the threshold is never reached.
    pub tau: f64,
    /// Unit-exponential threshold the integrated hazard has to cross.
    pub threshold: f64,
    /// First grid node `>= tau`, `None` when `tau > T`.
    pub default_step: Option<usize>,
}

impl DefaultRecord {
    pub fn from_threshold(intensity: &IntensitySpec, grid: &TimeGrid, threshold: f64) -> Self {
        let tau = intensity.invert(threshold);
        DefaultRecord {
            tau,
            threshold,
            default_step: grid.first_node_at_or_after(tau),
        }
    }

    pub fn defaulted_by(&self, t: f64) -> bool {
        self.tau <= t
    }

    /// `H_k = 1{t_k >= tau}` on the grid.
    pub fn h_at(&self, k: usize) -> bool {
        self.default_step.is_some_and(|s| k >= s)
    }
}

/// Per-node enlargement processes of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnlargementPaths {
    /// Azéma supermartingale `P[tau > t_k | F_{t_k}]`.
    pub a: Vec<f64>,
    /// Compensator of `H`.
    pub lambda: Vec<f64>,
    pub h: Vec<f64>,
    pub m: Vec<f64>,
    /// Stochastic exponential of `-M`.
    pub u: Vec<f64>,
}

/// `A_t = exp(-int_0^t lambda ds)`.
pub fn azema(intensity: &IntensitySpec, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::validation(format!("azema: negative time {t}")));
    }
    Ok((-intensity.cumulative(t)).exp())
}

/// Draws `Theta ~ Exp(1)` and inverts the integrated hazard.
pub fn sample_default(intensity: &IntensitySpec, grid: &TimeGrid, stream: &mut Stream) -> DefaultRecord {
    let threshold: f64 = Exp1.sample(stream);
    DefaultRecord::from_threshold(intensity, grid, threshold)
}

pub fn enlargement_paths(
    default: &DefaultRecord,
    intensity: &IntensitySpec,
    grid: &TimeGrid,
) -> Result<EnlargementPaths> {
    if grid.first_node_at_or_after(default.tau) != default.default_step {
        return Err(Error::validation(
            "default record was sampled on a different grid",
        ));
    }
    let n = grid.n_steps() + 1;
    let mut out = EnlargementPaths {
        a: Vec::with_capacity(n),
        lambda: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        m: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
    };
    let frozen = intensity.cumulative(default.tau.min(grid.horizon()));
    for k in 0..n {
        let t = grid.t(k);
        let hazard_t = intensity.cumulative(t);
        let a = (-hazard_t).exp();
        let h = if default.h_at(k) { 1.0 } else { 0.0 };
        let lambda = if t < default.tau { hazard_t } else { frozen };
        out.a.push(a);
        out.lambda.push(lambda);
        out.h.push(h);
        out.m.push(h - lambda);
        out.u.push((1.0 - h) * lambda.exp());
    }
    Ok(out)
}

/// Point of the joint jump space `E = R^d x {0, 1}` charged by `(X, H)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    /// Jump of `X` of size `atoms[i]`, no default.
    Jump(usize),
    /// Default jump of `H`, no jump of `X`.
    Default,
}

/// Monte Carlo estimate of `E[W * mu_T] - E[W * nu_T]` for the joint jump measure
/// of `(X, H)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensatorResidual {
    pub residual: Estimate,
    pub mu_mean: f64,
    pub nu_mean: f64,
}

pub fn joint_compensator_residual(
    events: &[ScenarioEvents],
    levy: &FiniteLevyMeasure,
    intensity: &IntensitySpec,
    grid: &TimeGrid,
    w: &dyn Fn(f64, Mark) -> f64,
    w_bound: f64,
) -> Result<CompensatorResidual> {
    let check = |v: f64| -> Result<f64> {
        if v.is_finite() && v.abs() <= w_bound {
            Ok(v)
        } else {
            Err(Error::validation(format!(
                "test function value {v} exceeds its bound {w_bound}"
            )))
        }
    };
    let horizon = grid.horizon();
    let n = grid.n_steps();

    let simpson = |f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64| -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        Ok((b - a) / 6.0 * (f(a)? + 4.0 * f(0.5 * (a + b))? + f(b)?))
    };

    // Jump part of nu is path independent.
    let mut nu_jumps = 0.0;
    for i in 0..levy.len() {
        let g = |t: f64| -> Result<f64> { Ok(check(w(t, Mark::Jump(i)))? * levy.rate(i, t)) };
        for k in 0..n {
            nu_jumps += simpson(&g, grid.t(k), grid.t(k + 1))?;
        }
    }
    let g_def = |t: f64| -> Result<f64> { Ok(check(w(t, Mark::Default))? * intensity.eval(t).max(0.0)) };
    let mut cum_def = Vec::with_capacity(n + 1);
    cum_def.push(0.0);
    for k in 0..n {
        let last = cum_def[k];
        cum_def.push(last + simpson(&g_def, grid.t(k), grid.t(k + 1))?);
    }

    let mut diffs = Vec::with_capacity(events.len());
    let (mut mu_sum, mut nu_sum) = (0.0, 0.0);
    for ev in events {
        let mut mu = 0.0;
        for j in &ev.jumps {
            mu += check(w(j.time, Mark::Jump(j.atom)))?;
        }
        let tau = ev.default.tau;
        let nu_def = if tau >= horizon {
            cum_def[n]
        } else {
            mu += check(w(tau, Mark::Default))?;
            let k = ((tau / grid.dt()).floor() as usize).min(n - 1);
            cum_def[k] + simpson(&g_def, grid.t(k), tau)?
        };
        let nu = nu_jumps + nu_def;
        mu_sum += mu;
        nu_sum += nu;
        diffs.push(mu - nu);
    }
    let count = events.len().max(1) as f64;
    Ok(CompensatorResidual {
        residual: Estimate::from_samples(&diffs),
        mu_mean: mu_sum / count,
        nu_mean: nu_sum / count,
    })
}

/// Cross-sectional moments of `M_t` at grid node `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketCheck {
    pub m_mean: Estimate,
    pub m_sq: Estimate,
    pub lambda: Estimate,
    /// `M_t^2 - Lambda_t`, mean zero when `<M, M> = Lambda`.
    pub gap: Estimate,
}

pub fn bracket_check(
    defaults: &[DefaultRecord],
    intensity: &IntensitySpec,
    grid: &TimeGrid,
    k: usize,
) -> BracketCheck {
    let t = grid.t(k);
    let hazard_t = intensity.cumulative(t);
    let mut m = Vec::with_capacity(defaults.len());
    let mut m_sq = Vec::with_capacity(defaults.len());
    let mut lam = Vec::with_capacity(defaults.len());
    let mut gap = Vec::with_capacity(defaults.len());
    for d in defaults {
        let (h, l) = if d.tau <= t {
            (1.0, intensity.cumulative(d.tau))
        } else {
            (0.0, hazard_t)
        };
        let mk = h - l;
        m.push(mk);
        m_sq.push(mk * mk);
        lam.push(l);
        gap.push(mk * mk - l);
    }
    BracketCheck {
        m_mean: Estimate::from_samples(&m),
        m_sq: Estimate::from_samples(&m_sq),
        lambda: Estimate::from_samples(&lam),
        gap: Estimate::from_samples(&gap),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, derive_stream, TimeFn};

    #[test]
    fn azema_values() {
        let lam = IntensitySpec::constant(0.3);
        assert!((azema(&lam, 1.0).unwrap() - (-0.3f64).exp()).abs() < 1e-15);
        assert_eq!(azema(&lam, 0.0).unwrap(), 1.0);
        let affine = IntensitySpec::new(TimeFn::affine(0.2, 0.1), 0.4);
        assert!((azema(&affine, 2.0).unwrap() - 0.548_811_636_094_026_4).abs() < 1e-12);
        assert!(azema(&lam, -0.1).is_err());
    }

    #[test]
    fn threshold_inversion() {
        let lam = IntensitySpec::constant(0.3);
        let g = build_grid(1.0, 4).unwrap();
        let d = DefaultRecord::from_threshold(&lam, &g, 0.15);
        assert_eq!(d.tau, 0.5);
        assert_eq!(d.default_step, Some(2));
    }

    #[test]
    fn zero_hazard_never_defaults() {
        let lam = IntensitySpec::zero();
        let g = build_grid(1.0, 10).unwrap();
        let mut s = derive_stream(1, 0);
        for _ in 0..100 {
            let d = sample_default(&lam, &g, &mut s);
            assert_eq!(d.tau, f64::INFINITY);
            assert_eq!(d.default_step, None);
        }
    }

    #[test]
    fn stopped_compensator_after_default() {
        let lam = IntensitySpec::constant(0.3);
        let g = build_grid(1.0, 10).unwrap();
        let d = DefaultRecord::from_threshold(&lam, &g, 0.15);
        let p = enlargement_paths(&d, &lam, &g).unwrap();
        assert!((p.lambda[10] - 0.15).abs() < 1e-15);
        assert!((p.m[10] - 0.85).abs() < 1e-15);
        assert_eq!(p.u[10], 0.0);
        assert_eq!(p.u[5], 0.0);
        assert!(p.u[4] > 0.0);
    }

    #[test]
    fn survival_values() {
        let lam = IntensitySpec::constant(0.3);
        let g = build_grid(1.0, 10).unwrap();
        let d = DefaultRecord::from_threshold(&lam, &g, 5.0);
        let p = enlargement_paths(&d, &lam, &g).unwrap();
        assert!((p.lambda[10] - 0.3).abs() < 1e-15);
        assert!((p.m[10] + 0.3).abs() < 1e-15);
        assert!((p.u[10] - 1.349_858_807_576_003).abs() < 1e-12);
        assert!((p.u[4] - 1.127_496_851_579_376).abs() < 1e-12);
    }

    #[test]
    fn identities_hold_to_machine_precision() {
        let lam = IntensitySpec::new(TimeFn::piecewise(vec![0.3, 0.7], vec![0.2, 0.6, 0.1]).unwrap(), 0.6);
        let g = build_grid(1.0, 50).unwrap();
        let mut s = derive_stream(9, 0);
        for _ in 0..500 {
            let d = sample_default(&lam, &g, &mut s);
            let p = enlargement_paths(&d, &lam, &g).unwrap();
            for k in 0..=50 {
                let t = g.t(k);
                let a_stopped = azema(&lam, d.tau.min(t)).unwrap();
                assert!((p.lambda[k] + a_stopped.ln()).abs() < 1e-12);
                let alive = if t < d.tau { 1.0 } else { 0.0 };
                assert!((p.u[k] * p.a[k] - alive).abs() < 1e-12);
                assert_eq!(p.m[k], p.h[k] - p.lambda[k]);
            }
            assert!(p.a.windows(2).all(|w| w[1] <= w[0]));
            assert!(p.lambda.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn grid_mismatch_detected() {
        let lam = IntensitySpec::constant(0.3);
        let g4 = build_grid(1.0, 4).unwrap();
        let g10 = build_grid(1.0, 10).unwrap();
        let d = DefaultRecord::from_threshold(&lam, &g4, 0.1);
        assert!(enlargement_paths(&d, &lam, &g10).is_err());
    }
}

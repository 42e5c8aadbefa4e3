//! Deterministic-coefficient reduction for claims `g1 1{tau > T} + g2(tau) 1{tau <= T}`.
//!
//! Before default `Y_t = y_pre(t)`, after default `Y_t = y_post(t; tau)` with
//! `y_pre' = |phi|^2/(2 alpha) - lambda w - (lambda/alpha)(e^{alpha w} - 1 - alpha w)`,
//! `w = y_post(t; t) - y_pre(t)`. On a fixed horizon
//! `y_post(t; tau) = g2(tau) - int_t^T |phi|^2/(2 alpha)`; on the stopped
//! horizon `y_post(t; tau) = g2(tau)`.

use serde::Serialize;

use super::generator::{GeneratorSpec, Horizon, EXP_LIMIT};
use crate::error::{Error, Result};
use crate::model::{ClaimSpec, TimeGrid};

/// Target for the Richardson estimate of the per-run integration error.
pub const ODE_TOL: f64 = 1e-9;
const BASE_SUBSTEPS: usize = 4;
const MAX_SUBSTEPS: usize = 1 << 14;

#[derive(Debug, Clone, Serialize)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub y_pre: Vec<f64>,
    /// Post-default value at the node for a default at that node.
    pub y_post: Vec<f64>,
    /// `int_{t_k}^T |phi|^2 / (2 alpha)`.
    pub penalty: Vec<f64>,
    /// Richardson estimate of the largest nodal error.
    pub error_estimate: f64,
    pub substeps: usize,
    #[serde(skip)]
    pub(crate) claim: ClaimSpec,
    pub horizon: Horizon,
}

impl OdeSolution {
    pub fn y0(&self) -> f64 {
        self.y_pre[0]
    }

    /// `Y` at node `k` after a default at `tau <= t_k`.
    pub fn post_value(&self, k: usize, tau: f64) -> Result<f64> {
        let g2 = self.claim.default_value(tau)?;
        Ok(match self.horizon {
            Horizon::Fixed => g2 - self.penalty[k],
            Horizon::Stopped => g2,
        })
    }

    /// `W_def` at node `k` for a pre-default state.
    pub fn w_def(&self, k: usize) -> f64 {
        self.y_post[k] - self.y_pre[k]
    }
}

fn check_claim(claim: &ClaimSpec) -> Result<()> {
    if claim.depends_on_price() || claim.depends_on_jumps() {
        return Err(Error::validation(
            "ODE solver needs a claim depending only on the default time",
        ));
    }
    claim.validate(usize::MAX)
}

struct Rhs<'a> {
    spec: &'a GeneratorSpec,
    claim: &'a ClaimSpec,
}

impl Rhs<'_> {
    fn half_phi_sq(&self, t: f64) -> f64 {
        let s: f64 = self.spec.phi.iter().map(|f| f.eval(t).powi(2)).sum();
        s / (2.0 * self.spec.alpha)
    }

    /// Derivative of `(y_pre, penalty)`.
    fn eval(&self, t: f64, y: f64, penalty: f64) -> Result<(f64, f64)> {
        let h = self.half_phi_sq(t);
        let g2 = self.claim.default_value(t)?;
        let post = match self.spec.horizon {
            Horizon::Fixed => g2 - penalty,
            Horizon::Stopped => g2,
        };
        let w = post - y;
        let lambda = self.spec.intensity.eval(t).max(0.0);
        let alpha = self.spec.alpha;
        let mut dy = h - lambda * w;
        if self.spec.default_term && lambda > 0.0 {
            let x = alpha * w;
            if x.abs() > EXP_LIMIT {
                return Err(Error::Overflow {
                    context: "ODE default term",
                    magnitude: x.abs(),
                    limit: EXP_LIMIT,
                });
            }
            dy -= lambda * (x.exp_m1() - x) / alpha;
        }
        Ok((dy, -h))
    }
}

fn integrate(rhs: &Rhs<'_>, grid: &TimeGrid, terminal: f64, substeps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = grid.n_steps();
    let mut ys = vec![0.0; n + 1];
    let mut ps = vec![0.0; n + 1];
    ys[n] = terminal;
    let (mut y, mut p) = (terminal, 0.0);
    let mut breaks: Vec<f64> = rhs
        .spec
        .phi
        .iter()
        .chain([&rhs.spec.intensity.lambda])
        .flat_map(|f| f.breakpoints().iter().copied())
        .collect();
    breaks.sort_by(f64::total_cmp);
    for k in (0..n).rev() {
        let (a, b) = (grid.t(k), grid.t(k + 1));
        // integrate piece by piece so RK4 never steps across a jump
        let mut edges = vec![b];
        edges.extend(breaks.iter().rev().copied().filter(|x| *x > a && *x < b));
        edges.push(a);
        for piece in edges.windows(2) {
            let (hi, lo) = (piece[0], piece[1]);
            let h = -(hi - lo) / substeps as f64;
            for s in 0..substeps {
                // evaluate just inside the piece so the right value is seen at the edges
                let t = hi + s as f64 * h;
                let inside = |x: f64| x.clamp(lo, hi);
                let eps = (hi - lo) * 1e-12;
                let (k1y, k1p) = rhs.eval(inside(t - eps), y, p)?;
                let (k2y, k2p) = rhs.eval(t + 0.5 * h, y + 0.5 * h * k1y, p + 0.5 * h * k1p)?;
                let (k3y, k3p) = rhs.eval(t + 0.5 * h, y + 0.5 * h * k2y, p + 0.5 * h * k2p)?;
                let (k4y, k4p) = rhs.eval(inside(t + h + eps), y + h * k3y, p + h * k3p)?;
                y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
                p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            }
        }
        ys[k] = y;
        ps[k] = p;
    }
    Ok((ys, ps))
}

/// Solves the reduced ODE on `grid` with classical RK4, sub-step `dt/4`
/// refined until the Richardson estimate is at most [`ODE_TOL`].
pub fn solve_ode_deterministic(spec: &GeneratorSpec, claim: &ClaimSpec, grid: &TimeGrid) -> Result<OdeSolution> {
    check_claim(claim)?;
    let rhs = Rhs { spec, claim };
    let terminal = claim.survival_value()?;
    let mut substeps = BASE_SUBSTEPS;
    let mut coarse = integrate(&rhs, grid, terminal, substeps)?;
    loop {
        let fine = integrate(&rhs, grid, terminal, 2 * substeps)?;
        let err = coarse
            .0
            .iter()
            .zip(&fine.0)
            .map(|(a, b)| (a - b).abs() / 15.0)
            .fold(0.0, f64::max);
        if err <= ODE_TOL || 2 * substeps >= MAX_SUBSTEPS {
            if err > ODE_TOL {
                return Err(Error::solver(
                    "bsde",
                    format!("ODE error estimate {err:.2e} above {ODE_TOL:.0e} at the refinement limit"),
                ));
            }
            let (y_pre, penalty) = coarse;
            let y_post = (0..=grid.n_steps())
                .map(|k| {
                    let g2 = claim.default_value(grid.t(k))?;
                    Ok(match spec.horizon {
                        Horizon::Fixed => g2 - penalty[k],
                        Horizon::Stopped => g2,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(OdeSolution {
                times: grid.nodes().collect(),
                y_pre,
                y_post,
                penalty,
                error_estimate: err,
                substeps,
                claim: claim.clone(),
                horizon: spec.horizon,
            });
        }
        substeps *= 2;
        coarse = fine;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, FiniteLevyMeasure, IntensitySpec, MarketSpec, Model, TimeFn};

    fn spec(phi: f64, lambda: f64, horizon: Horizon) -> (GeneratorSpec, TimeGrid) {
        let grid = build_grid(1.0, 50).unwrap();
        let model = Model::new(
            MarketSpec::scalar(1.0, phi, 1.0, 1.0, 0.0),
            FiniteLevyMeasure::empty(),
            IntensitySpec::constant(lambda),
            grid.clone(),
        );
        (GeneratorSpec::from_model(&model, horizon), grid)
    }

    #[test]
    fn bond_closed_form() {
        let (g, grid) = spec(0.0, 0.3, Horizon::Fixed);
        let sol = solve_ode_deterministic(&g, &ClaimSpec::survival(1.0), &grid).unwrap();
        let exact = (1.0 + (1.0f64.exp() - 1.0) * (-0.3f64).exp()).ln();
        assert!((sol.y0() - exact).abs() < 1e-9);
        assert!((exact - 0.8210717221).abs() < 1e-9);
    }

    #[test]
    fn merton_linear() {
        let (g, grid) = spec(0.2, 0.3, Horizon::Fixed);
        let sol = solve_ode_deterministic(&g, &ClaimSpec::zero(), &grid).unwrap();
        for (t, (a, b)) in sol.times.iter().zip(sol.y_pre.iter().zip(&sol.y_post)) {
            assert!((a + (1.0 - t) * 0.02).abs() < 1e-12);
            assert!((b + (1.0 - t) * 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn stopped_default_indicator() {
        let (g, grid) = spec(0.0, 0.3, Horizon::Stopped);
        let sol = solve_ode_deterministic(&g, &ClaimSpec::default_indicator(1.0), &grid).unwrap();
        let e = 1.0f64.exp();
        let exact = (e + (1.0 - e) * (-0.3f64).exp()).ln();
        assert!((sol.y0() - exact).abs() < 1e-9);
        assert!((exact - 0.3683496675).abs() < 1e-9);
    }

    #[test]
    fn zero_intensity_is_inert() {
        let (g, grid) = spec(0.2, 0.0, Horizon::Fixed);
        let sol = solve_ode_deterministic(&g, &ClaimSpec::survival(1.0), &grid).unwrap();
        assert!((sol.y0() - (1.0 - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn cash_shift_exact() {
        let (g, grid) = spec(0.2, 0.3, Horizon::Fixed);
        let a = solve_ode_deterministic(&g, &ClaimSpec::survival(1.0), &grid).unwrap();
        let b = solve_ode_deterministic(&g, &ClaimSpec::survival(1.0).shifted(0.5), &grid).unwrap();
        assert!((b.y0() - a.y0() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn piecewise_intensity_converges() {
        let (mut g, grid) = spec(0.1, 0.3, Horizon::Fixed);
        g.intensity = IntensitySpec::new(TimeFn::piecewise(vec![0.33], vec![0.1, 0.5]).unwrap(), 0.5);
        let sol = solve_ode_deterministic(&g, &ClaimSpec::survival(1.0), &grid).unwrap();
        assert!(sol.error_estimate <= ODE_TOL);
    }

    #[test]
    fn rejects_price_claims() {
        let (g, grid) = spec(0.2, 0.3, Horizon::Fixed);
        let call = ClaimSpec::new(
            crate::model::ClaimKind::CappedCall { strike: 1.0, cap: 1.0 },
            1.0,
            crate::model::Measurability::MarketOnly,
        );
        assert!(solve_ode_deterministic(&g, &call, &grid).is_err());
    }
}

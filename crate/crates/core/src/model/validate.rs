use serde::{Deserialize, Serialize};

use super::{FiniteLevyMeasure, IntensitySpec, MarketSpec, TimeGrid};
use crate::error::{Error, Result};

/// Outcome of [`validate_model`] for a model that passed every hard check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `(lambda_max + sum_i zeta_max_i w_i) * dt`.
    pub event_budget: f64,
    pub oracle_usable: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    /// Fails when the serial-event budget rules out the exact tree oracle.
    pub fn require_oracle(&self, dt: f64) -> Result<()> {
        if self.oracle_usable {
            Ok(())
        } else {
            Err(Error::Budget {
                budget: self.event_budget,
                dt,
            })
        }
    }
}

const SINGULAR_TOL: f64 = 1e-12;

/// Checks every coefficient bound at each grid node.
pub fn validate_model(
    market: &MarketSpec,
    levy: &FiniteLevyMeasure,
    intensity: &IntensitySpec,
    grid: &TimeGrid,
) -> Result<ValidationReport> {
    let d = market.dim();
    if d == 0 {
        return Err(Error::validation("market dimension must be at least 1"));
    }
    if market.sigma.dim() != (d, d) {
        return Err(Error::validation(format!(
            "sigma is {:?}, expected {d}x{d}",
            market.sigma.dim()
        )));
    }
    if market.phi.len() != d {
        return Err(Error::validation(format!(
            "phi has {} components, expected {d}",
            market.phi.len()
        )));
    }
    if let Some(s) = market.s0.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::validation(format!("initial price {s} must be positive")));
    }
    if !(market.alpha.is_finite() && market.alpha > 0.0) {
        return Err(Error::validation(format!(
            "risk aversion must be positive, got {}",
            market.alpha
        )));
    }
    if !market.x0.is_finite() {
        return Err(Error::validation("initial wealth must be finite"));
    }
    if !(market.phi_max.is_finite() && market.phi_max >= 0.0) {
        return Err(Error::validation("declared phi bound must be finite"));
    }
    if !(intensity.lambda_max.is_finite() && intensity.lambda_max >= 0.0) {
        return Err(Error::validation("unbounded intensity: lambda_max must be finite"));
    }

    let m = levy.len();
    if levy.weights.len() != m || levy.zeta.len() != m || levy.zeta_max.len() != m {
        return Err(Error::validation(
            "Lévy measure needs one weight, density and bound per atom",
        ));
    }
    for (i, atom) in levy.atoms.iter().enumerate() {
        if atom.len() != d {
            return Err(Error::validation(format!("atom {i} has wrong dimension")));
        }
        if atom.iter().all(|x| *x == 0.0) {
            return Err(Error::validation(format!("zero atom at index {i}")));
        }
        if !(levy.weights[i].is_finite() && levy.weights[i] > 0.0) {
            return Err(Error::validation(format!("atom {i} weight must be positive")));
        }
        if !(levy.zeta_max[i].is_finite() && levy.zeta_max[i] >= 0.0) {
            return Err(Error::validation(format!("atom {i} density bound must be finite")));
        }
    }

    for t in grid.nodes() {
        let sigma = market.sigma.at(t);
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(format!("non-finite volatility at t = {t}")));
        }
        let svd = sigma.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smax == 0.0 || smin <= SINGULAR_TOL * smax.max(1.0) {
            return Err(Error::validation(format!("singular volatility at t = {t}")));
        }
        let phi_norm = market.phi_norm_sq(t).sqrt();
        if !phi_norm.is_finite() || phi_norm > market.phi_max * (1.0 + 1e-12) {
            return Err(Error::validation(format!(
                "|phi({t})| = {phi_norm} exceeds declared bound {}",
                market.phi_max
            )));
        }
        let lam = intensity.eval(t);
        if !lam.is_finite() || lam < 0.0 {
            return Err(Error::validation(format!("negative intensity {lam} at t = {t}")));
        }
        if lam > intensity.lambda_max * (1.0 + 1e-12) {
            return Err(Error::validation(format!(
                "unbounded intensity: lambda({t}) = {lam} exceeds declared {}",
                intensity.lambda_max
            )));
        }
        for i in 0..m {
            let z = levy.zeta[i].eval(t);
            if !z.is_finite() || z < 0.0 || z > levy.zeta_max[i] * (1.0 + 1e-12) {
                return Err(Error::validation(format!(
                    "density of atom {i} is {z} at t = {t}, outside [0, {}]",
                    levy.zeta_max[i]
                )));
            }
        }
    }

    let event_budget = (intensity.lambda_max + levy.max_total_rate()) * grid.dt();
    let oracle_usable = event_budget < 1.0;
    let mut warnings = Vec::new();
    if !oracle_usable {
        warnings.push(format!(
            "event budget {event_budget:.4} >= 1: more than one event per step is likely; refine the grid"
        ));
    }
    Ok(ValidationReport {
        event_budget,
        oracle_usable,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, TimeFn, VolFn};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn base() -> (MarketSpec, FiniteLevyMeasure, IntensitySpec) {
        (
            MarketSpec::scalar(1.0, 0.2, 100.0, 1.0, 0.0),
            FiniteLevyMeasure::empty(),
            IntensitySpec::constant(0.3),
        )
    }

    #[test]
    fn small_budget() {
        let (m, l, i) = base();
        let g = build_grid(1.0, 100).unwrap();
        let r = validate_model(&m, &l, &i, &g).unwrap();
        assert!((r.event_budget - 0.003).abs() < 1e-15);
        assert!(r.oracle_usable);
    }

    #[test]
    fn zero_sigma_is_singular() {
        let (mut m, l, i) = base();
        m.sigma = VolFn::Constant(DMatrix::zeros(1, 1));
        let g = build_grid(1.0, 10).unwrap();
        let err = validate_model(&m, &l, &i, &g).unwrap_err();
        assert!(err.to_string().contains("singular volatility"));
    }

    #[test]
    fn budget_with_atom() {
        let (m, _, i) = base();
        let l = FiniteLevyMeasure::constant(vec![vec![0.1]], vec![1.0], vec![0.5]);
        let g = build_grid(1.0, 1).unwrap();
        let r = validate_model(&m, &l, &i, &g).unwrap();
        assert!((r.event_budget - 0.8).abs() < 1e-15);
        assert!(r.oracle_usable);
        let l = FiniteLevyMeasure::constant(vec![vec![0.1]], vec![1.0], vec![0.8]);
        let r = validate_model(&m, &l, &i, &g).unwrap();
        assert!(!r.oracle_usable);
        assert!(r.require_oracle(1.0).is_err());
    }

    #[test]
    fn zero_atom_rejected() {
        let (m, _, i) = base();
        let l = FiniteLevyMeasure::constant(vec![vec![0.0]], vec![1.0], vec![0.5]);
        let g = build_grid(1.0, 10).unwrap();
        assert!(validate_model(&m, &l, &i, &g).is_err());
    }

    #[test]
    fn negative_intensity_rejected() {
        let (m, l, _) = base();
        let i = IntensitySpec::new(TimeFn::affine(0.1, -0.5), 0.1);
        let g = build_grid(1.0, 10).unwrap();
        assert!(validate_model(&m, &l, &i, &g).is_err());
    }

    proptest! {
        // Declared bounds are drawn either above or below the true sup; the
        // validator must accept exactly when all of them hold.
        #[test]
        fn accepts_iff_bounds_hold(
            lam_a in 0.0f64..1.0, lam_b in -0.5f64..0.5,
            lam_decl in 0.0f64..1.5,
            phi in -0.5f64..0.5, phi_decl in 0.0f64..0.6,
            zeta in 0.0f64..1.0, zeta_decl in 0.0f64..1.2,
            n in 1usize..20,
        ) {
            let grid = build_grid(1.0, n).unwrap();
            let mut market = MarketSpec::scalar(1.0, phi, 1.0, 1.0, 0.0);
            market.phi_max = phi_decl;
            let intensity = IntensitySpec::new(TimeFn::affine(lam_a, lam_b), lam_decl);
            let mut levy = FiniteLevyMeasure::constant(vec![vec![0.1]], vec![1.0], vec![zeta]);
            levy.zeta_max = vec![zeta_decl];

            let lam_at: Vec<f64> = grid.nodes().map(|t| lam_a + lam_b * t).collect();
            let ok = phi.abs() <= phi_decl * (1.0 + 1e-12)
                && zeta <= zeta_decl * (1.0 + 1e-12)
                && lam_at.iter().all(|l| *l >= 0.0 && *l <= lam_decl * (1.0 + 1e-12));
            let res = validate_model(&market, &levy, &intensity, &grid);
            prop_assert_eq!(res.is_ok(), ok);
        }
    }
}

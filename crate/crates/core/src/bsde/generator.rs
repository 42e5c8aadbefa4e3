use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClaimSpec, FiniteLevyMeasure, IntensitySpec, Model, TimeFn};

/// Largest exponent the generator is allowed to evaluate.
pub const EXP_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Terminal time `T`.
    Fixed,
    /// Terminal time `T ^ tau`; the generator is switched off after default.
    Stopped,
}

/// Ingredients of the exponential-utility generator
///
/// `f(t, z, w) = -(z.phi + |phi|^2 / (2 alpha))
///   + 1/alpha sum_i (e^{alpha w_i} - 1 - alpha w_i) zeta_i w_i
///   + 1/alpha (e^{alpha w_def} - 1 - alpha w_def) lambda 1{t <= tau}`.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub alpha: f64,
    pub phi: Vec<TimeFn>,
    pub phi_max: f64,
    pub levy: FiniteLevyMeasure,
    pub intensity: IntensitySpec,
    pub horizon: Horizon,
    /// `false` gives the market-filtration generator with `w(t, 0, 1) = 0`.
    pub default_term: bool,
}

impl GeneratorSpec {
    pub fn from_model(model: &Model, horizon: Horizon) -> Self {
        GeneratorSpec {
            alpha: model.market.alpha,
            phi: model.market.phi.clone(),
            phi_max: model.market.phi_max,
            levy: model.levy.clone(),
            intensity: model.intensity.clone(),
            horizon,
            default_term: true,
        }
    }

    /// Same spec without the default term.
    pub fn market_filtration(&self) -> Self {
        GeneratorSpec {
            default_term: false,
            ..self.clone()
        }
    }

    pub fn phi_into(&self, t: f64, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.phi) {
            *o = f.eval(t);
        }
    }
}

fn jump_term(alpha: f64, w: f64, context: &'static str) -> Result<f64> {
    let x = alpha * w;
    if !x.is_finite() || x.abs() > EXP_LIMIT {
        return Err(Error::Overflow {
            context,
            magnitude: x.abs(),
            limit: EXP_LIMIT,
        });
    }
    // e^x - 1 - x without cancellation near zero
    Ok((x.exp_m1() - x) / alpha)
}

/// Evaluates the generator at time `t`.
pub fn generator_f(
    spec: &GeneratorSpec,
    t: f64,
    z: &[f64],
    w_jumps: &[f64],
    w_def: f64,
    pre_default: bool,
) -> Result<f64> {
    if spec.horizon == Horizon::Stopped && !pre_default {
        return Ok(0.0);
    }
    let alpha = spec.alpha;
    let mut zphi = 0.0;
    let mut phi_sq = 0.0;
    for (zj, f) in z.iter().zip(&spec.phi) {
        let p = f.eval(t);
        zphi += zj * p;
        phi_sq += p * p;
    }
    let mut value = -(zphi + phi_sq / (2.0 * alpha));
    for (i, w) in w_jumps.iter().enumerate() {
        if *w != 0.0 {
            value += jump_term(alpha, *w, "generator jump term")? * spec.levy.rate(i, t);
        }
    }
    if spec.default_term && pre_default && w_def != 0.0 {
        value += jump_term(alpha, w_def, "generator default term")? * spec.intensity.eval(t).max(0.0);
    }
    Ok(value)
}

/// `||xi||_inf + T phi_max^2 / (2 alpha)`, a bound on `|Y|`.
pub fn apriori_bound(spec: &GeneratorSpec, claim: &ClaimSpec, horizon: f64) -> f64 {
    claim.bound + horizon * spec.phi_max * spec.phi_max / (2.0 * spec.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, MarketSpec};

    fn spec(phi: f64, alpha: f64, lambda: f64) -> GeneratorSpec {
        let mut market = MarketSpec::scalar(1.0, phi, 1.0, alpha, 0.0);
        market.phi_max = phi.abs();
        let model = Model::new(
            market,
            FiniteLevyMeasure::empty(),
            IntensitySpec::constant(lambda),
            build_grid(1.0, 10).unwrap(),
        );
        GeneratorSpec::from_model(&model, Horizon::Fixed)
    }

    #[test]
    fn zero_jump_values_kill_jump_terms() {
        let s = spec(0.2, 1.0, 0.3);
        let f = generator_f(&s, 0.0, &[0.0], &[], 0.0, true).unwrap();
        assert!((f + 0.02).abs() < 1e-15);
    }

    #[test]
    fn default_term_value() {
        let s = spec(0.0, 1.0, 0.3);
        let f = generator_f(&s, 0.0, &[0.0], &[], 2f64.ln(), true).unwrap();
        assert!((f - 0.092_055_845_832_016_41).abs() < 1e-15);
        // switched off after default and in the market filtration
        assert_eq!(generator_f(&s, 0.0, &[0.0], &[], 2f64.ln(), false).unwrap(), 0.0);
        let g = s.market_filtration();
        assert_eq!(generator_f(&g, 0.0, &[0.0], &[], 2f64.ln(), true).unwrap(), 0.0);
    }

    #[test]
    fn z_term() {
        let s = spec(0.2, 2.0, 0.0);
        let f = generator_f(&s, 0.0, &[0.1], &[], 0.0, true).unwrap();
        assert!((f + 0.03).abs() < 1e-15);
    }

    #[test]
    fn stopped_generator_vanishes_after_default() {
        let mut s = spec(0.2, 1.0, 0.3);
        s.horizon = Horizon::Stopped;
        assert_eq!(generator_f(&s, 0.5, &[1.0], &[], 0.3, false).unwrap(), 0.0);
        assert!(generator_f(&s, 0.5, &[0.0], &[], 0.0, true).unwrap() < 0.0);
    }

    #[test]
    fn overflow_is_an_error() {
        let s = spec(0.0, 1.0, 0.3);
        assert!(matches!(
            generator_f(&s, 0.0, &[0.0], &[], 800.0, true),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn apriori_bounds() {
        let c = ClaimSpec::survival(1.0);
        assert!((apriori_bound(&spec(0.2, 1.0, 0.3), &c, 1.0) - 1.02).abs() < 1e-15);
        assert!((apriori_bound(&spec(0.2, 2.0, 0.3), &c, 1.0) - 1.01).abs() < 1e-15);
        assert_eq!(apriori_bound(&spec(0.0, 1.0, 0.3), &ClaimSpec::zero(), 1.0), 0.0);
    }
}

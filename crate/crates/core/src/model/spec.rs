use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::timefn::TimeFn;
use super::TimeGrid;
use crate::error::{Error, Result};

/// Volatility matrix as a function of time.
#[derive(Debug, Clone)]
pub enum VolFn {
    Constant(DMatrix<f64>),
    /// `mats[0]` on `[0, breaks[0])`, and so on; last matrix thereafter.
    PiecewiseConstant {
        breaks: Vec<f64>,
        mats: Vec<DMatrix<f64>>,
    },
}

impl VolFn {
    pub fn at(&self, t: f64) -> &DMatrix<f64> {
        match self {
            VolFn::Constant(m) => m,
            VolFn::PiecewiseConstant { breaks, mats } => &mats[breaks.partition_point(|b| *b <= t)],
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        match self {
            VolFn::Constant(m) => m.shape(),
            VolFn::PiecewiseConstant { mats, .. } => mats[0].shape(),
        }
    }

    fn matrices(&self) -> Vec<&DMatrix<f64>> {
        match self {
            VolFn::Constant(m) => vec![m],
            VolFn::PiecewiseConstant { mats, .. } => mats.iter().collect(),
        }
    }
}

/// Market coefficients: `dS = diag(S) sigma (phi dt + dB)`, zero interest rate.
#[derive(Debug, Clone)]
pub struct MarketSpec {
    pub sigma: VolFn,
    /// Market price of risk, one function per Brownian component.
    pub phi: Vec<TimeFn>,
    pub s0: Vec<f64>,
    pub alpha: f64,
    pub x0: f64,
    /// Declared bound on `|phi(t)|`.
    pub phi_max: f64,
}

impl MarketSpec {
    /// One-dimensional market with constant coefficients; `phi_max` is `|phi|`.
    pub fn scalar(sigma: f64, phi: f64, s0: f64, alpha: f64, x0: f64) -> Self {
        MarketSpec {
            sigma: VolFn::Constant(DMatrix::from_element(1, 1, sigma)),
            phi: vec![TimeFn::constant(phi)],
            s0: vec![s0],
            alpha,
            x0,
            phi_max: phi.abs(),
        }
    }

    pub fn dim(&self) -> usize {
        self.s0.len()
    }

    pub fn phi_at(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.phi.len(), self.phi.iter().map(|f| f.eval(t)))
    }

    pub fn phi_into(&self, t: f64, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.phi) {
            *o = f.eval(t);
        }
    }

    pub fn phi_norm_sq(&self, t: f64) -> f64 {
        self.phi.iter().map(|f| f.eval(t).powi(2)).sum()
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.sigma, VolFn::Constant(_)) && self.phi.iter().all(|f| matches!(f, TimeFn::Constant(_)))
    }

    /// Largest row norm of sigma over all pieces.
    pub fn sigma_row_bound(&self) -> f64 {
        self.sigma
            .matrices()
            .iter()
            .flat_map(|m| m.row_iter().map(|r| r.norm()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// Finite Lévy measure `sum_i w_i delta_{x_i}` with time-dependent densities.
#[derive(Debug, Clone, Default)]
pub struct FiniteLevyMeasure {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub zeta: Vec<TimeFn>,
    /// Declared bounds `sup_t zeta_i(t)`.
    pub zeta_max: Vec<f64>,
}

impl FiniteLevyMeasure {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Atoms with constant densities; the declared bounds equal the densities.
    pub fn constant(atoms: Vec<Vec<f64>>, weights: Vec<f64>, zeta: Vec<f64>) -> Self {
        FiniteLevyMeasure {
            atoms,
            weights,
            zeta_max: zeta.clone(),
            zeta: zeta.into_iter().map(TimeFn::constant).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Event rate `zeta_i(t) w_i` of atom `i`.
    pub fn rate(&self, i: usize, t: f64) -> f64 {
        self.zeta[i].eval(t) * self.weights[i]
    }

    /// `int_a^b zeta_i(s) w_i ds`.
    pub fn rate_integral(&self, i: usize, a: f64, b: f64) -> f64 {
        self.zeta[i].integral(a, b) * self.weights[i]
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn max_total_rate(&self) -> f64 {
        self.zeta_max
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| z * w)
            .sum()
    }
}

/// Deterministic default intensity `lambda(t) >= 0` with declared bound.
#[derive(Debug, Clone)]
pub struct IntensitySpec {
    pub lambda: TimeFn,
    pub lambda_max: f64,
}

impl IntensitySpec {
    pub fn new(lambda: TimeFn, lambda_max: f64) -> Self {
        IntensitySpec { lambda, lambda_max }
    }

    pub fn constant(lambda: f64) -> Self {
        IntensitySpec::new(TimeFn::constant(lambda), lambda)
    }

    pub fn zero() -> Self {
        IntensitySpec::constant(0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.lambda.eval(t)
    }

    pub fn is_zero(&self) -> bool {
        self.lambda.is_zero()
    }

    /// Integrated hazard `int_0^t lambda ds`.
    pub fn cumulative(&self, t: f64) -> f64 {
        self.lambda.positive_integral(0.0, t)
    }

    pub fn hazard_between(&self, a: f64, b: f64) -> f64 {
        self.lambda.positive_integral(a, b)
    }

    /// `inf { t : int_0^t lambda >= threshold }`, `+inf` if never reached.
    pub fn invert(&self, threshold: f64) -> f64 {
        if threshold <= 0.0 {
            return 0.0;
        }
        match &self.lambda {
            TimeFn::Constant(c) => {
                if *c > 0.0 {
                    threshold / c
                } else {
                    f64::INFINITY
                }
            }
            TimeFn::Affine { intercept: a, slope: b } => {
                let (a, b) = (*a, *b);
                if b == 0.0 {
                    return if a > 0.0 { threshold / a } else { f64::INFINITY };
                }
                if b > 0.0 && a < 0.0 {
                    let root = -a / b;
                    return root + (2.0 * threshold / b).sqrt();
                }
                if b < 0.0 {
                    if a <= 0.0 {
                        return f64::INFINITY;
                    }
                    let reachable = a * (-a / b) / 2.0;
                    if threshold > reachable {
                        return f64::INFINITY;
                    }
                }
                let disc = (a * a + 2.0 * b * threshold).max(0.0);
                2.0 * threshold / (a + disc.sqrt())
            }
            TimeFn::PiecewiseConstant { breaks, values } => {
                let mut remaining = threshold;
                let mut lo = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let v = v.max(0.0);
                    let hi = breaks.get(i).copied().unwrap_or(f64::INFINITY);
                    if v > 0.0 && v * (hi - lo) >= remaining {
                        return lo + remaining / v;
                    }
                    if hi.is_finite() {
                        remaining -= v * (hi - lo);
                    }
                    lo = hi;
                }
                f64::INFINITY
            }
            TimeFn::Custom { .. } => {
                let mut hi = 1.0;
                while self.cumulative(hi) < threshold {
                    hi *= 2.0;
                    if hi > 1e6 {
                        return f64::INFINITY;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cumulative(mid) >= threshold {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo <= 1e-15 * hi.max(1.0) {
                        break;
                    }
                }
                hi
            }
        }
    }
}

/// Information set a claim must be measurable with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measurability {
    #[serde(rename = "F_T")]
    MarketOnly,
    #[serde(rename = "G_T")]
    Enlarged,
    #[serde(rename = "G_T_tau")]
    Stopped,
}

/// Payoff shapes `g(S_T, H_T, tau ^ T)` (plus per-atom jump counts where noted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimKind {
    Zero,
    Constant { value: f64 },
    /// `notional * 1{tau > T}`.
    Survival { notional: f64 },
    /// `notional * 1{tau <= T}`.
    DefaultIndicator { notional: f64 },
    /// `min((S^1_T - strike)^+, cap)`.
    CappedCall { strike: f64, cap: f64 },
    /// Capped call paid on survival, fixed `recovery` on default.
    DefaultableCall { strike: f64, cap: f64, recovery: f64 },
    /// `notional * 1{tau > T} + rate * tau * 1{tau <= T}`.
    AccruedRecovery { notional: f64, rate: f64 },
    /// `min(N^atom_T, cap)`, counting jumps of one atom.
    JumpCount { atom: usize, cap: u32 },
}

/// State a claim is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct ClaimInput<'a> {
    pub prices: &'a [f64],
    pub defaulted: bool,
    /// `tau ^ T`.
    pub tau: f64,
    pub jumps: &'a [u32],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSpec {
    pub kind: ClaimKind,
    /// Declared `||xi||_inf`.
    pub bound: f64,
    pub measurability: Measurability,
    /// Cash amount added to the payoff.
    #[serde(default)]
    pub shift: f64,
}

impl ClaimSpec {
    pub fn new(kind: ClaimKind, bound: f64, measurability: Measurability) -> Self {
        ClaimSpec {
            kind,
            bound,
            measurability,
            shift: 0.0,
        }
    }

    pub fn zero() -> Self {
        ClaimSpec::new(ClaimKind::Zero, 0.0, Measurability::MarketOnly)
    }

    pub fn constant(c: f64) -> Self {
        ClaimSpec::new(ClaimKind::Constant { value: c }, c.abs(), Measurability::MarketOnly)
    }

    pub fn survival(notional: f64) -> Self {
        ClaimSpec::new(ClaimKind::Survival { notional }, notional.abs(), Measurability::Enlarged)
    }

    pub fn default_indicator(notional: f64) -> Self {
        ClaimSpec::new(
            ClaimKind::DefaultIndicator { notional },
            notional.abs(),
            Measurability::Stopped,
        )
    }

    /// Same payoff plus `c`, bound widened accordingly.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.shift += c;
        out.bound += c.abs();
        out
    }

    pub fn depends_on_price(&self) -> bool {
        matches!(
            self.kind,
            ClaimKind::CappedCall { .. } | ClaimKind::DefaultableCall { .. }
        )
    }

    pub fn depends_on_jumps(&self) -> bool {
        matches!(self.kind, ClaimKind::JumpCount { .. })
    }

    pub fn depends_on_default(&self) -> bool {
        matches!(
            self.kind,
            ClaimKind::Survival { .. }
                | ClaimKind::DefaultIndicator { .. }
                | ClaimKind::DefaultableCall { .. }
                | ClaimKind::AccruedRecovery { .. }
        )
    }

    pub fn depends_on_tau(&self) -> bool {
        matches!(self.kind, ClaimKind::AccruedRecovery { .. })
    }

    /// Structural checks of the measurability tag and the declared bound.
    pub fn validate(&self, n_atoms: usize) -> Result<()> {
        if !(self.bound.is_finite() && self.bound >= 0.0) {
            return Err(Error::validation("claim bound must be finite and nonnegative"));
        }
        if let ClaimKind::JumpCount { atom, .. } = self.kind {
            if atom >= n_atoms {
                return Err(Error::validation(format!(
                    "jump-count claim references atom {atom}, model has {n_atoms}"
                )));
            }
        }
        match self.measurability {
            Measurability::MarketOnly if self.depends_on_default() => {
                Err(Error::Measurability("F_T: payoff depends on the default time".into()))
            }
            Measurability::Stopped if self.depends_on_jumps() => Err(Error::Measurability(
                "G_(T^tau): payoff depends on jumps of X beyond the stopped price".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Evaluates the payoff and enforces the declared bound.
    pub fn eval(&self, input: &ClaimInput<'_>) -> Result<f64> {
        let survived = !input.defaulted;
        let raw = match &self.kind {
            ClaimKind::Zero => 0.0,
            ClaimKind::Constant { value } => *value,
            ClaimKind::Survival { notional } => {
                if survived {
                    *notional
                } else {
                    0.0
                }
            }
            ClaimKind::DefaultIndicator { notional } => {
                if survived {
                    0.0
                } else {
                    *notional
                }
            }
            ClaimKind::CappedCall { strike, cap } => (input.prices[0] - strike).max(0.0).min(*cap),
            ClaimKind::DefaultableCall {
                strike,
                cap,
                recovery,
            } => {
                if survived {
                    (input.prices[0] - strike).max(0.0).min(*cap)
                } else {
                    *recovery
                }
            }
            ClaimKind::AccruedRecovery { notional, rate } => {
                if survived {
                    *notional
                } else {
                    rate * input.tau
                }
            }
            ClaimKind::JumpCount { atom, cap } => input.jumps[*atom].min(*cap) as f64,
        };
        let value = raw + self.shift;
        if !value.is_finite() || value.abs() > self.bound * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::ClaimBound {
                value,
                bound: self.bound,
            });
        }
        Ok(value)
    }

    /// Payoff on survival for claims independent of price and jumps.
    pub fn survival_value(&self) -> Result<f64> {
        self.eval(&ClaimInput {
            prices: &[f64::NAN],
            defaulted: false,
            tau: f64::NAN,
            jumps: &[],
        })
    }

    /// Payoff when default happens at `tau`, for claims independent of price and jumps.
    pub fn default_value(&self, tau: f64) -> Result<f64> {
        self.eval(&ClaimInput {
            prices: &[f64::NAN],
            defaulted: true,
            tau,
            jumps: &[],
        })
    }
}

/// Everything needed to simulate a scenario set.
#[derive(Debug, Clone)]
pub struct Model {
    pub market: MarketSpec,
    pub levy: FiniteLevyMeasure,
    pub intensity: IntensitySpec,
    pub grid: TimeGrid,
}

impl Model {
    pub fn new(
        market: MarketSpec,
        levy: FiniteLevyMeasure,
        intensity: IntensitySpec,
        grid: TimeGrid,
    ) -> Self {
        Model {
            market,
            levy,
            intensity,
            grid,
        }
    }

    pub fn dim(&self) -> usize {
        self.market.dim()
    }

    pub fn n_atoms(&self) -> usize {
        self.levy.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_inversion() {
        let lam = IntensitySpec::constant(0.3);
        assert_eq!(lam.invert(0.15), 0.5);
        assert_eq!(IntensitySpec::zero().invert(0.7), f64::INFINITY);
    }

    #[test]
    fn affine_inversion_round_trips() {
        for (a, b) in [(0.2, 0.1), (0.0, 0.5), (-0.1, 0.4), (0.5, -0.2)] {
            let lam = IntensitySpec::new(TimeFn::affine(a, b), 1.0);
            for theta in [0.01, 0.2, 0.5] {
                let tau = lam.invert(theta);
                if tau.is_finite() {
                    assert!((lam.cumulative(tau) - theta).abs() < 1e-12, "{a} {b} {theta}");
                }
            }
        }
        // 0.5 - 0.2 t is exhausted after cumulative 0.625
        let lam = IntensitySpec::new(TimeFn::affine(0.5, -0.2), 0.5);
        assert_eq!(lam.invert(0.7), f64::INFINITY);
    }

    #[test]
    fn piecewise_inversion() {
        let lam = IntensitySpec::new(TimeFn::piecewise(vec![1.0], vec![0.1, 0.5]).unwrap(), 0.5);
        assert!((lam.invert(0.05) - 0.5).abs() < 1e-15);
        assert!((lam.invert(0.35) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn custom_inversion() {
        let lam = IntensitySpec::new(TimeFn::custom(|t| 0.2 + 0.1 * t * t, 1.0), 1.0);
        let tau = lam.invert(0.3);
        assert!((lam.cumulative(tau) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn claim_bound_enforced() {
        let mut c = ClaimSpec::constant(2.0);
        c.bound = 1.0;
        let input = ClaimInput {
            prices: &[1.0],
            defaulted: false,
            tau: 1.0,
            jumps: &[],
        };
        assert!(matches!(c.eval(&input), Err(Error::ClaimBound { .. })));
    }

    #[test]
    fn measurability_tags() {
        let mut bond = ClaimSpec::survival(1.0);
        bond.measurability = Measurability::MarketOnly;
        assert!(bond.validate(0).is_err());
        let jc = ClaimSpec::new(ClaimKind::JumpCount { atom: 0, cap: 3 }, 3.0, Measurability::Stopped);
        assert!(jc.validate(1).is_err());
        let jc = ClaimSpec::new(ClaimKind::JumpCount { atom: 1, cap: 3 }, 3.0, Measurability::Enlarged);
        assert!(jc.validate(1).is_err());
    }

    #[test]
    fn shift_moves_value_and_bound() {
        let c = ClaimSpec::survival(1.0).shifted(0.5);
        assert_eq!(c.survival_value().unwrap(), 1.5);
        assert_eq!(c.default_value(0.3).unwrap(), 0.5);
        assert_eq!(c.bound, 1.5);
    }
}

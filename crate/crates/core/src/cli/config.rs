//! TOML experiment configuration and its conversion into a validated model.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bsde::{LsmcSettings, SolverMode};
use crate::error::{Error, Result};
use crate::model::{
    build_grid, validate_model, ClaimKind, ClaimSpec, FiniteLevyMeasure, IntensitySpec, MarketSpec,
    Measurability, Model, TimeFn, ValidationReport, VolFn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    VerifyEnlargement,
    Solve,
    Optimize,
    Indifference,
    RandomHorizon,
    Oracle,
    Acceptance,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::VerifyEnlargement => "verify-enlargement",
            ExperimentKind::Solve => "solve",
            ExperimentKind::Optimize => "optimize",
            ExperimentKind::Indifference => "indifference",
            ExperimentKind::RandomHorizon => "random-horizon",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::Acceptance => "acceptance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfigSolverMode {
    #[default]
    Lsmc,
    Ode,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
}

/// A scalar broadcast to the needed shape, or the full value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOr<T> {
    Scalar(f64),
    Full(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    #[serde(default = "one")]
    pub d: usize,
    /// Scalar (times identity) or a `d x d` matrix given row by row.
    pub sigma: ScalarOr<Vec<Vec<f64>>>,
    pub phi: ScalarOr<Vec<f64>>,
    #[serde(rename = "S0")]
    pub s0: ScalarOr<Vec<f64>>,
    pub alpha: f64,
    #[serde(default)]
    pub x: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsConfig {
    /// One point of `R^d` per atom; scalars are accepted when `d = 1`.
    pub atoms: Vec<ScalarOr<Vec<f64>>>,
    pub weights: Vec<f64>,
    /// Constant densities `zeta_i`.
    pub zeta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum LambdaConfig {
    Constant(f64),
    Affine { intercept: f64, slope: f64 },
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DefaultConfig {
    #[serde(default)]
    pub lambda: LambdaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimConfig {
    pub kind: String,
    #[serde(default)]
    pub params: toml::Table,
    /// Declared sup-norm bound; derived from the parameters when absent.
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default)]
    pub measurability: Option<Measurability>,
    #[serde(default)]
    pub shift: f64,
}

impl Default for ClaimConfig {
    fn default() -> Self {
        ClaimConfig {
            kind: "zero".into(),
            params: toml::Table::new(),
            bound: None,
            measurability: None,
            shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub mode: ConfigSolverMode,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_paths() -> usize {
    100_000
}

fn default_degree() -> usize {
    2
}

fn default_seed() -> u64 {
    42
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: ConfigSolverMode::default(),
            n_paths: default_paths(),
            basis_degree: default_degree(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Multiplies Monte Carlo tolerances of non-acceptance experiments.
    #[serde(default = "unit")]
    pub tolerance_scale: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub market: MarketConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<JumpsConfig>,
    #[serde(default)]
    pub default: DefaultConfig,
    #[serde(default)]
    pub claim: ClaimConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub experiment: ExperimentSection,
}

/// Model, claim and solver settings resolved from a config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: Model,
    pub claim: ClaimSpec,
    pub validation: ValidationReport,
    pub settings: LsmcSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn solver_mode(&self) -> SolverMode {
        match self.solver.mode {
            ConfigSolverMode::Ode => SolverMode::Ode,
            _ => SolverMode::Lsmc,
        }
    }

    pub fn resolve(&self, workers: usize) -> Result<Resolved> {
        let model = self.model()?;
        let validation = validate_model(&model.market, &model.levy, &model.intensity, &model.grid)?;
        let claim = self.claim(&model)?;
        if !(self.experiment.tolerance_scale.is_finite() && self.experiment.tolerance_scale > 0.0) {
            return Err(Error::validation("tolerance_scale must be positive"));
        }
        if self.solver.n_paths == 0 {
            return Err(Error::validation("n_paths must be positive"));
        }
        Ok(Resolved {
            model,
            claim,
            validation,
            settings: LsmcSettings {
                n_paths: self.solver.n_paths,
                basis_degree: self.solver.basis_degree,
                seed: self.solver.seed,
                workers,
            },
        })
    }

    pub fn model(&self) -> Result<Model> {
        let m = &self.market;
        let d = m.d;
        if d == 0 {
            return Err(Error::validation("market.d must be at least 1"));
        }
        let sigma = match &m.sigma {
            ScalarOr::Scalar(s) => DMatrix::from_diagonal_element(d, d, *s),
            ScalarOr::Full(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::validation(format!("market.sigma must be {d}x{d}")));
                }
                DMatrix::from_fn(d, d, |i, j| rows[i][j])
            }
        };
        let phi = broadcast(&m.phi, d, "market.phi")?;
        let s0 = broadcast(&m.s0, d, "market.S0")?;
        let phi_max = phi.iter().map(|p| p * p).sum::<f64>().sqrt();
        let market = MarketSpec {
            sigma: VolFn::Constant(sigma),
            phi: phi.into_iter().map(TimeFn::constant).collect(),
            s0,
            alpha: m.alpha,
            x0: m.x,
            phi_max,
        };
        let levy = match &self.jumps {
            None => FiniteLevyMeasure::empty(),
            Some(j) => {
                let n = j.atoms.len();
                if j.weights.len() != n || j.zeta.len() != n {
                    return Err(Error::validation(
                        "jumps.atoms, jumps.weights and jumps.zeta must have equal lengths",
                    ));
                }
                let atoms = j
                    .atoms
                    .iter()
                    .map(|a| broadcast(a, d, "jumps.atoms"))
                    .collect::<Result<Vec<_>>>()?;
                FiniteLevyMeasure::constant(atoms, j.weights.clone(), j.zeta.clone())
            }
        };
        let horizon = self.grid.horizon;
        let intensity = match &self.default.lambda {
            LambdaConfig::Constant(c) => IntensitySpec::constant(*c),
            LambdaConfig::Affine { intercept, slope } => {
                let f = TimeFn::affine(*intercept, *slope);
                let max = f.sup_abs(horizon);
                IntensitySpec::new(f, max)
            }
            LambdaConfig::Piecewise { breaks, values } => {
                let f = TimeFn::piecewise(breaks.clone(), values.clone())?;
                let max = f.sup_abs(horizon);
                IntensitySpec::new(f, max)
            }
        };
        let grid = build_grid(horizon, self.grid.n_steps)?;
        Ok(Model::new(market, levy, intensity, grid))
    }

    pub fn claim(&self, model: &Model) -> Result<ClaimSpec> {
        let c = &self.claim;
        let mut table = c.params.clone();
        if table.contains_key("kind") {
            return Err(Error::Config("claim.params must not contain `kind`".into()));
        }
        table.insert("kind".into(), toml::Value::String(c.kind.clone()));
        let kind: ClaimKind = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("claim: {e}")))?;
        let base = ClaimSpec::new(kind.clone(), 0.0, Measurability::MarketOnly);
        let bound = match c.bound {
            Some(b) => b,
            None => natural_bound(&kind, model.grid.horizon()) + c.shift.abs(),
        };
        let measurability = c.measurability.unwrap_or(if base.depends_on_default() {
            Measurability::Enlarged
        } else {
            Measurability::MarketOnly
        });
        let claim = ClaimSpec {
            kind,
            bound,
            measurability,
            shift: c.shift,
        };
        claim.validate(model.n_atoms())?;
        Ok(claim)
    }
}

fn broadcast(v: &ScalarOr<Vec<f64>>, d: usize, key: &str) -> Result<Vec<f64>> {
    match v {
        ScalarOr::Scalar(s) => Ok(vec![*s; d]),
        ScalarOr::Full(xs) if xs.len() == d => Ok(xs.clone()),
        ScalarOr::Full(xs) => Err(Error::validation(format!(
            "{key} has {} components, expected {d}",
            xs.len()
        ))),
    }
}

/// Sup norm of the raw payoff over its whole range.
fn natural_bound(kind: &ClaimKind, horizon: f64) -> f64 {
    match kind {
        ClaimKind::Zero => 0.0,
        ClaimKind::Constant { value } => value.abs(),
        ClaimKind::Survival { notional } | ClaimKind::DefaultIndicator { notional } => notional.abs(),
        ClaimKind::CappedCall { cap, .. } => cap.abs(),
        ClaimKind::DefaultableCall { cap, recovery, .. } => cap.abs().max(recovery.abs()),
        ClaimKind::AccruedRecovery { notional, rate } => notional.abs().max((rate * horizon).abs()),
        ClaimKind::JumpCount { cap, .. } => *cap as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BOND: &str = r#"
[grid]
T = 1.0
n_steps = 50

[market]
sigma = 1.0
phi = 0.2
S0 = 100.0
alpha = 1.0

[default]
lambda = 0.3

[claim]
kind = "survival"
params = { notional = 1.0 }

[experiment]
kind = "indifference"
"#;

    #[test]
    fn parses_bond() {
        let c = ExperimentConfig::from_toml(BOND).unwrap();
        let r = c.resolve(0).unwrap();
        assert_eq!(r.claim.kind, ClaimKind::Survival { notional: 1.0 });
        assert_eq!(r.claim.bound, 1.0);
        assert_eq!(r.claim.measurability, Measurability::Enlarged);
        assert_eq!(r.model.intensity.eval(0.5), 0.3);
        assert_eq!(r.settings.n_paths, 100_000);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let text = BOND.replace("alpha = 1.0", "alpha = 1.0\nbeta = 2.0");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("beta"), "{err}");
        let text = BOND.replace("notional = 1.0", "notional = 1.0, strike = 3.0");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert!(c.resolve(0).is_err());
    }

    #[test]
    fn singular_volatility_rejected() {
        let text = BOND.replace("sigma = 1.0", "sigma = 0.0");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let err = c.resolve(0).unwrap_err().to_string();
        assert!(err.contains("singular volatility"), "{err}");
    }

    #[test]
    fn intensity_shapes_and_round_trip() {
        let text = BOND.replace("lambda = 0.3", "lambda = { breaks = [0.5], values = [0.1, 0.4] }");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.intensity.eval(0.7), 0.4);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        let text = BOND.replace("lambda = 0.3", "lambda = { intercept = 0.2, slope = 0.1 }");
        let m = ExperimentConfig::from_toml(&text).unwrap().model().unwrap();
        assert!((m.intensity.cumulative(1.0) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn matrix_sigma_and_jumps() {
        let text = BOND
            .replace("sigma = 1.0", "d = 2\nsigma = [[1.0, 0.0], [0.3, 0.8]]")
            .replace("phi = 0.2", "phi = [0.2, 0.1]")
            + "\n[jumps]\natoms = [[0.1, 0.0]]\nweights = [1.0]\nzeta = [0.5]\n";
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let r = c.resolve(0).unwrap();
        assert_eq!(r.model.dim(), 2);
        assert_eq!(r.model.n_atoms(), 1);
        assert_eq!(r.model.market.s0, vec![100.0, 100.0]);
    }
}

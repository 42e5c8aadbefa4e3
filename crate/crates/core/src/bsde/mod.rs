//! The exponential-utility BSDE with jumps and default: generator, regression
//! Monte Carlo, the deterministic-coefficient ODE reduction and the stopped
//! (random-horizon) variant.

pub mod basis;
pub mod generator;
pub mod lsmc;
pub mod ode;
pub mod solution;

pub use generator::{apriori_bound, generator_f, GeneratorSpec, Horizon, EXP_LIMIT};
pub use lsmc::{solve_lsmc, solve_lsmc_on, solve_random_horizon, LsmcSettings};
pub use ode::{solve_ode_deterministic, OdeSolution, ODE_TOL};
pub use solution::{
    martingale_residuals, node_stats, path_drift_residuals, path_residuals, residual_summary, write_bsde_csv, BsdeSolution, NodeStats, NodeValues,
    SolutionKind,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ClaimSpec, Model};

/// Which solver produces a [`BsdeSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    #[default]
    Lsmc,
    Ode,
}

/// Solves with the chosen method; the horizon comes from `spec`.
pub fn solve(
    spec: &GeneratorSpec,
    claim: &ClaimSpec,
    model: &Model,
    mode: SolverMode,
    settings: &LsmcSettings,
) -> Result<BsdeSolution> {
    match mode {
        SolverMode::Lsmc => match spec.horizon {
            Horizon::Fixed => solve_lsmc(spec, claim, model, settings),
            Horizon::Stopped => solve_random_horizon(spec, claim, model, settings),
        },
        SolverMode::Ode => {
            let ode = solve_ode_deterministic(spec, claim, &model.grid)?;
            Ok(BsdeSolution::from_ode(ode, spec, model.grid.clone()))
        }
    }
}

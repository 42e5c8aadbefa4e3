//! Numerical laboratory for progressively enlarged filtrations generated by a
//! Cox default time, and for exponential-utility maximization and indifference
//! pricing driven by the associated jump BSDE.
//!
//! Layout:
//! - [`model`]: time grids, coefficient specs, random streams, validation.
//! - [`enlargement`]: Azéma supermartingale, default compensator, default
//!   martingale and its stochastic exponential.
//! - [`market`]: price, jump and default scenario simulation; wealth; Girsanov.
//! - [`oracle`]: exact serial event trees (conditional expectations,
//!   martingale representation, discrete BSDE, dynamic programming).
//! - [`bsde`]: generator and the regression, ODE and stopped solvers.
//! - [`utility`]: optimal strategy, value function, optimality verification,
//!   indifference prices and the random-horizon problem.
//! - [`cli`]: experiment configuration, orchestration and reports.

// `!(x <= y)` deliberately rejects NaN; indexed loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bsde;
pub mod cli;
pub mod enlargement;
pub mod error;
pub mod market;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};

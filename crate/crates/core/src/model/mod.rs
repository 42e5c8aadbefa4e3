//! Model specifications shared by every other module.

mod grid;
pub mod rng;
mod spec;
mod timefn;
mod validate;

pub use grid::{build_grid, TimeGrid};
pub use rng::{derive_lane, derive_stream, Lane, Stream};
pub use spec::{
    ClaimInput, ClaimKind, ClaimSpec, FiniteLevyMeasure, IntensitySpec, MarketSpec, Measurability,
    Model, VolFn,
};
pub use timefn::{adaptive_simpson, TimeFn, QUADRATURE_TOL};
pub use validate::{validate_model, ValidationReport};

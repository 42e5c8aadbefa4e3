use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model, grid or claim failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// The serial-event budget is too large for an exact event tree.
    #[error("event budget {budget:.6} >= 1 at dt = {dt}; the tree oracle needs at most one event per step")]
    Budget { budget: f64, dt: f64 },

    #[error("claim bound violated: |{value}| > {bound}")]
    ClaimBound { value: f64, bound: f64 },

    #[error("claim is not measurable with respect to {0}")]
    Measurability(String),

    #[error("exponential overflow in {context}: |alpha * w| = {magnitude:.3e} exceeds {limit}")]
    Overflow {
        context: &'static str,
        magnitude: f64,
        limit: f64,
    },

    #[error("strategy sample |theta| = {value:.6} exceeds declared bound {bound}")]
    UnboundedStrategy { value: f64, bound: f64 },

    #[error("[{module}] {message}")]
    Solver {
        module: &'static str,
        message: String,
    },

    #[error("rank-deficient regression at step {step}: condition number {condition:.3e}")]
    RankDeficient { step: usize, condition: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for configuration and validation problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Budget { .. }
            | Error::ClaimBound { .. }
            | Error::Measurability(_)
            | Error::Config(_) => 2,
            _ => 1,
        }
    }

    /// Module the error originates from, for diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Validation(_) | Error::ClaimBound { .. } | Error::Measurability(_) => "model",
            Error::Budget { .. } => "oracle",
            Error::Overflow { .. } | Error::RankDeficient { .. } => "bsde",
            Error::UnboundedStrategy { .. } => "market",
            Error::Solver { module, .. } => module,
            Error::Config(_) | Error::Io(_) => "cli",
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn solver(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Solver {
            module,
            message: msg.into(),
        }
    }
}

use thiserror::Error;

/// Errors raised by plant evaluation, controllers, the simulation engine,
/// and scenario handling.
#[derive(Debug, Error)]
pub enum Error {
    /// An input carried a NaN or infinite entry.
    #[error("non-finite value in {quantity}")]
    NonFinite { quantity: String },

    #[error("dimension mismatch: {context}")]
    Dimension { context: String },

    /// The inertia matrix could not be inverted; should never happen for a
    /// physically valid model.
    #[error("inertia matrix is numerically singular (det = {det:.3e})")]
    SingularInertia { det: f64 },

    /// The filtered error reached the barrier radius. The controller is no
    /// longer defined there, so the simulation must abort loudly.
    #[error("barrier breached: ||r|| = {r_norm:.12} >= kappa = {kappa:.12}")]
    BarrierBreach { r_norm: f64, kappa: f64 },

    /// A NaN or infinity appeared during integration.
    #[error("numeric failure at t = {t}: {quantity} is not finite")]
    NumericFailure { t: f64, quantity: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

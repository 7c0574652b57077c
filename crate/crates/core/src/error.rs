//! Error type shared by all modules of the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix that must be symmetric is not, beyond the accepted tolerance.
    #[error("matrix `{name}` is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: &'static str, asymmetry: f64 },

    /// A matrix that must be positive definite failed its Cholesky factorization.
    #[error("matrix `{name}` is not positive definite")]
    NotPositiveDefinite { name: &'static str },

    /// A matrix that must be positive semidefinite has a negative eigenvalue.
    #[error("matrix `{name}` is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPositiveSemidefinite { name: &'static str, min_eig: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The state-transition matrix cannot be inverted (singular or too
    /// ill-conditioned), so the information-form prediction has no solution.
    #[error("dynamics not invertible, information-form prediction undefined")]
    DynamicsNotInvertible,

    /// A quantity that is nonnegative by construction came out negative
    /// beyond the numerical guard, indicating a bug rather than bad input.
    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    /// Bayes update with a likelihood that assigns zero mass to the
    /// entire support of the prior.
    #[error("measurement incompatible with support")]
    MeasurementIncompatibleWithSupport,

    /// Pointwise geometric mean of the pooled distributions vanished everywhere.
    #[error("pooled distribution has zero total mass (pairwise disjoint supports)")]
    ZeroPoolMass,

    #[error("duplicate sender {sender} in one step")]
    DuplicateSender { sender: usize },

    #[error("message from sender {sender} carries step {got}, node clock is {expected}")]
    StaleMessage {
        sender: usize,
        expected: u64,
        got: u64,
    },

    /// Linearization point inside the degeneracy ball around the sensor.
    #[error("linearization point within {limit} m of the sensor position")]
    DegenerateGeometry { limit: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    /// Wrapper adding step/node context to failures inside the simulation loop.
    #[error("numerical failure at step {step}, node {node}: {source}")]
    AtStep {
        step: usize,
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attach simulation-loop context to an error.
    pub fn at_step(self, step: usize, node: usize) -> Error {
        Error::AtStep {
            step,
            node,
            source: Box::new(self),
        }
    }

    /// True for errors caused by an invalid configuration rather than a
    /// numerical failure at runtime. The CLI maps these to exit code 1.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter { .. } | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

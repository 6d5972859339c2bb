use thiserror::Error;

/// Errors raised by the simulation, estimation and training layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// NaN or infinity reached a state. This aborts the run; it is never
    /// counted as a physical instability.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("neighbor capacity exceeded: atom {atom} has {found} neighbors (capacity {capacity})")]
    Capacity { atom: usize, found: usize, capacity: usize },

    #[error("not enough samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("reweighting degenerate: {0}")]
    ReweightDegenerate(String),

    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;

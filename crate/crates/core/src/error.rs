use thiserror::Error;

use crate::lattice::Mode;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis dimension exceeds the limit of {limit} states")]
    DimensionOverflow { limit: usize },
    #[error("sector mismatch: expected {expected:?}, found {found:?}")]
    SectorMismatch {
        expected: Option<Mode>,
        found: Option<Mode>,
    },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("cutoff too small: boundary/max eta ratio {ratio:.3e} exceeds {threshold:.3e}")]
    CutoffTooSmall { ratio: f64, threshold: f64 },
    #[error("eta is not inversion symmetric (defect {defect:.3e})")]
    AsymmetricEta { defect: f64 },
    #[error("order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("validation failure: {0}")]
    ValidationFailure(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

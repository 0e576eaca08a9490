use thiserror::Error;

use crate::attacks::AttackError;
use crate::dci::DciError;
use crate::detect::DetectError;
use crate::features::FeatureError;
use crate::honeynode::HoneyError;
use crate::netsim::SimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Dci(#[from] DciError),
    #[error(transparent)]
    Honey(#[from] HoneyError),
}

impl Error {
    /// True when the failure stems from bad input rather than the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dci(DciError::StorageFailure(_)) => false,
            Error::Detect(DetectError::NoConvergence { .. })
            | Error::Detect(DetectError::DivergedTraining) => false,
            _ => true,
        }
    }
}

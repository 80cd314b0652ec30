use alloc::boxed::Box;

use crate::wlrs::DecompositionResult;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("point cloud has {0} points, at least 2 are required")]
    TooFewPoints(usize),

    #[error("point cloud contains a non-finite coordinate at index {0}")]
    NonFinite(usize),

    #[error("block is not recoverable as a rigid motion: {0}")]
    SingularBlock(&'static str),

    #[error("correspondence cross-covariance is rank deficient (rank {rank})")]
    DegenerateGeometry { rank: usize },

    #[error("no weights to normalize")]
    NoWeights,

    #[error("scan index {index} out of range for {n} scans")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("duplicate estimate for pair ({0}, {1})")]
    DuplicatePair(usize, usize),

    #[error("matrix has numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("decomposition did not converge after {iterations} outer iterations")]
    NotConverged {
        iterations: usize,
        partial: Box<DecompositionResult>,
    },

    #[error("selected pair graph is disconnected: {components} components")]
    GraphDisconnected { components: usize },

    #[error("registration did not converge after {iterations} outer iterations")]
    RegistrationNotConverged {
        iterations: usize,
        best: Box<crate::pipeline::RegistrationRun>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
}

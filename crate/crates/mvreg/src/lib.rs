//! IO, synthetic scenes and the command-line surface around `mvreg-core`.
//!
//! * [`formats`] reads and writes point clouds (PLY, XYZ), motion files and
//!   matrix dumps.
//! * [`synth`] generates seeded multi-view scenes with ground truth.
//! * [`config`] parses flat `key = value` run configurations.
//! * [`report`] renders run reports.
//! * [`cli`] implements the `mvreg` command.

pub mod cli;
pub mod config;
pub mod formats;
pub mod report;
pub mod synth;

pub use mvreg_core as core;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("byte {offset}: {message}")]
    ParseByte { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Core(#[from] mvreg_core::Error),
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn line(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            message: message.into(),
        }
    }

    /// Short stable identifier printed in front of diagnostics.
    pub fn code(&self) -> &'static str {
        use mvreg_core::Error as E;
        match self {
            IoError::Io { .. } => "io",
            IoError::Parse { .. } | IoError::ParseByte { .. } => "parse",
            IoError::UnsupportedFormat(_) => "unsupported-format",
            IoError::Core(e) => match e {
                E::EmptyCloud => "empty-cloud",
                E::TooFewPoints(_) => "too-few-points",
                E::NonFinite(_) => "non-finite",
                E::SingularBlock(_) => "singular-block",
                E::DegenerateGeometry { .. } => "degenerate-geometry",
                E::NoWeights => "no-weights",
                E::IndexOutOfRange { .. } => "index-out-of-range",
                E::DuplicatePair(..) => "duplicate-pair",
                E::RankDeficient { .. } => "rank-deficient",
                E::NotConverged { .. } => "not-converged",
                E::GraphDisconnected { .. } => "graph-disconnected",
                E::RegistrationNotConverged { .. } => "registration-not-converged",
                E::InvalidConfig(_) => "invalid-config",
                E::Dimension(_) => "dimension",
            },
        }
    }
}

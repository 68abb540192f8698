use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("missing {artifact} at {path}; run `nsv {producer}` first")]
    Missing {
        artifact: &'static str,
        path: String,
        producer: &'static str,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadArtifact { path: String, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dataset(#[from] nsv::datasets::DatasetError),
    #[error(transparent)]
    Stage1(#[from] nsv::stage1::Stage1Error),
    #[error(transparent)]
    IntDim(#[from] nsv::intdim::IdError),
    #[error(transparent)]
    StateVars(#[from] nsv::statevars::StateVarError),
    #[error(transparent)]
    Rollout(#[from] nsv::rollout::RolloutError),
    #[error(transparent)]
    Analysis(#[from] nsv::analysis::AnalysisError),
    #[error(transparent)]
    Table(#[from] nsv::table::TableError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

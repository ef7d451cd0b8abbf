use std::fmt;
use std::path::Path;

use thiserror::Error;
use vibrancy_core::clustering::ClusterError;
use vibrancy_core::model::ModelError;

/// Pipeline stage, used to say where a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Signatures,
    Cluster,
    Features,
    Fit,
    Report,
    Synth,
    Manifest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Signatures => "signatures",
            Stage::Cluster => "cluster",
            Stage::Features => "features",
            Stage::Fit => "fit",
            Stage::Report => "report",
            Stage::Synth => "synth",
            Stage::Manifest => "manifest",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Data { stage: Stage, message: String },
    #[error("{stage}: {message}")]
    Numeric { stage: Stage, message: String },
}

impl CliError {
    /// 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            CliError::Usage(_) => None,
            CliError::Data { stage, .. } | CliError::Numeric { stage, .. } => Some(*stage),
        }
    }

    pub fn data(stage: Stage, e: impl fmt::Display) -> Self {
        CliError::Data {
            stage,
            message: e.to_string(),
        }
    }

    pub fn numeric(stage: Stage, e: impl fmt::Display) -> Self {
        CliError::Numeric {
            stage,
            message: e.to_string(),
        }
    }

    pub fn io(stage: Stage, path: &Path, e: impl fmt::Display) -> Self {
        CliError::Data {
            stage,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn from_cluster(e: ClusterError) -> Self {
        match e {
            ClusterError::NonFinite => CliError::numeric(Stage::Cluster, e),
            e => CliError::data(Stage::Cluster, e),
        }
    }

    pub fn from_model(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => CliError::numeric(Stage::Fit, e),
            e => CliError::data(Stage::Fit, e),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

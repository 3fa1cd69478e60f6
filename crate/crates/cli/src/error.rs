use std::path::PathBuf;

use exoval_core::ecn::EcnError;
use exoval_core::ingest::IngestError;
use exoval_core::pipeline::PipelineError;
use exoval_core::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Ecn(#[from] EcnError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{failed} of {total} item(s) failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    /// 1 for validation failures, 2 when some items succeeded.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Partial { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

use std::fs;
use std::path::Path;

use exoval_core::delay_study::DelayConfig;
use exoval_core::ecn::TrainConfig;
use exoval_core::ingest::{ColumnMap, Environment};
use exoval_core::pipeline::EvalConfig;
use exoval_core::synth::DatasetSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Every tunable of a run. Missing keys take defaults, unknown keys are
/// rejected. The top-level `seed` overrides the nested training and
/// synthesis seeds, so a single number drives all randomness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Column layout of raw files for `convert`.
    pub columns: ColumnMap,
    pub exclude_subjects: Vec<String>,
    pub synth: DatasetSpec,
    pub train: TrainConfig,
    /// Environments used for training; empty means all.
    pub train_environments: Vec<Environment>,
    pub eval: EvalConfig,
    pub delay: DelayConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Apply a seed override and push the seed into nested sections.
    pub fn resolve(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.synth.base.seed = self.seed;
        self
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

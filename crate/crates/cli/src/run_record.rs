//! On-disk record of a training run: the full configuration snapshot plus
//! artifact paths, sufficient to reproduce the run bit-for-bit from the
//! same seed and to rebuild the model at evaluation time.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slotbench_core::model::ModelConfig;
use slotbench_core::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub data_dir: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Paths relative to the run directory.
    pub checkpoint: String,
    pub step_log: String,
    pub collapse_step: Option<usize>,
    pub lr_groups: Vec<String>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("run record serializes");
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> Result<RunRecord, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("bad run record {}: {e}", path.display()))
    }
}

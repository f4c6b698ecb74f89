use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Task;
use crate::splitters::SplitMetadata;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cell_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub y_true: f64,
    pub y_pred: f64,
    pub seed: u64,
}

/// A cell left out of training or scoring, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub cell_id: String,
    pub split: String,
    pub reason: String,
}

/// Test-split metrics in original label units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub model: String,
    pub config_hash: String,
    pub feature_label_hash: String,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_rmse: f64,
    /// Population standard deviation across seeds.
    pub sd_rmse: f64,
    pub mean_mae: f64,
    pub sd_mae: f64,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub predictions: Vec<Prediction>,
    pub excluded: Vec<Excluded>,
    pub overrides: Vec<String>,
    pub warnings: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    #[serde(default)]
    pub split_metadata: SplitMetadata,
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    (stats::mean(values), stats::population_variance(values).sqrt())
}

impl EvalReport {
    /// Recomputes the cross-seed summary from `per_seed`.
    pub fn summarize(&mut self) {
        let rmse: Vec<f64> = self.per_seed.iter().map(|s| s.rmse).collect();
        let mae: Vec<f64> = self.per_seed.iter().map(|s| s.mae).collect();
        (self.mean_rmse, self.sd_rmse) = mean_sd(&rmse);
        (self.mean_mae, self.sd_mae) = mean_sd(&mae);
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

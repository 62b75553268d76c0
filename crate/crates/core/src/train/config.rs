use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimiser and loop settings. Model shape lives in [`crate::model::ModelConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Separates RNG streams of concurrent runs sharing a seed (fold index, grid cell).
    pub stream: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            clip_norm: Some(5.0),
            stream: 0,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted so a run can be checked to leave parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be >= 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return fail(format!("clip_norm must be > 0, got {c}"));
            }
        }
        Ok(())
    }
}

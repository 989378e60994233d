//! Model and training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureSource;
use crate::grounding::QueryMode;
use crate::loss::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq: usize,
    pub query_mode: QueryMode,
    pub feature_source: FeatureSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq: 128,
            query_mode: QueryMode::default(),
            feature_source: FeatureSource::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.max_seq == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Emit a loss-log record every this many steps (and at the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 16,
            epochs: 12,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            loss_weights: LossWeights::default(),
            seed: 0,
            log_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.log_every == 0 {
            return Err(Error::InvalidArgument(
                "batch size, epochs, and log interval must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad learning rate {}", self.lr)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} {v} outside [0,1)")));
            }
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::InvalidArgument("bad optimizer constants".into()));
        }
        Ok(())
    }
}

/// Cosine annealing from `lr` to 0 over `total_steps`; `step` counts
/// completed updates, so the first update uses the full rate.
pub fn cosine_lr(lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return lr;
    }
    let t = (step as f64 / total_steps as f64).min(1.0);
    0.5 * lr * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().head_dim(), 16);
        assert_eq!(ModelConfig::default().ffn_dim(), 256);
    }

    #[test]
    fn head_divisibility_enforced() {
        let cfg = ModelConfig { n_heads: 5, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(2e-4, 0, 100) - 2e-4).abs() < 1e-18);
        assert!((cosine_lr(2e-4, 50, 100) - 1e-4).abs() < 1e-12);
        assert!(cosine_lr(2e-4, 100, 100).abs() < 1e-18);
        assert!(cosine_lr(2e-4, 160, 100).abs() < 1e-18, "clamped past the end");
        for s in 0..100 {
            assert!(cosine_lr(2e-4, s + 1, 100) < cosine_lr(2e-4, s, 100));
        }
    }
}

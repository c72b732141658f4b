use serde::{Deserialize, Serialize};

use crate::gaussian::LatentPartition;
use crate::neural::OptimizerConfig;

use super::ModelError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSchedule {
    /// `min(step / ramp, 1)`.
    #[default]
    Linear,
    /// Sawtooth: the linear ramp restarts every `beta_period` updates.
    Cyclic,
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// hidden width of the recognition and prior MLPs
    pub mlp_hidden: usize,
    /// updates until the prior-KL coefficient reaches 1
    pub beta_ramp: u64,
    pub beta_schedule: BetaSchedule,
    pub beta_period: u64,
    /// gold-KL coefficient, constant over training
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// truncation length for contexts and framed responses
    pub max_len: usize,
    /// label that selects the gold Gaussian when no partition is set
    pub label: String,
    pub partition: Option<LatentPartition>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 300,
            hidden_dim: 300,
            latent_dim: 200,
            mlp_hidden: 250,
            beta_ramp: 10_000,
            beta_schedule: BetaSchedule::Linear,
            beta_period: 20_000,
            lambda: 1.0,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            max_len: 30,
            label: "emotion".into(),
            partition: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.beta_ramp == 0 {
            return Err(ModelError::Config("beta_ramp must be positive".into()));
        }
        if self.beta_schedule == BetaSchedule::Cyclic && self.beta_period == 0 {
            return Err(ModelError::Config("beta_period must be positive".into()));
        }
        if self.max_len < 2 {
            return Err(ModelError::Config("max_len must be at least 2".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(p) = &self.partition {
            p.validate(self.latent_dim)?;
        }
        Ok(())
    }

    pub fn beta_at(&self, step: u64) -> f64 {
        match self.beta_schedule {
            BetaSchedule::Linear => anneal_beta(step, self.beta_ramp),
            BetaSchedule::Cyclic => anneal_beta(step % self.beta_period, self.beta_ramp),
        }
    }
}

/// Linear KL-annealing ramp, clamped to `[0, 1]`.
pub fn anneal_beta(step: u64, ramp: u64) -> f64 {
    assert!(ramp > 0, "ramp must be positive");
    if step >= ramp {
        1.0
    } else {
        step as f64 / ramp as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }
}

//! PPO with GAE over a population of morphologies, plus evaluation and
//! transfer drivers.

mod gae;
mod ppo;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::model::ModelError;
use crate::morphology::MorphologyError;
use crate::tensor::TensorError;

pub use gae::{compute_gae, normalize_advantages};
pub use ppo::{clipped_objective, minibatch_gradient, ppo_update, Adam, MinibatchResult, Sample, UpdateStats};
pub use rollout::{collect_rollouts, observation_tensors, EnvRollout, RolloutBatch, Transition, Worker};
pub use train::{
    evaluate, train, transfer, EvalResult, MorphologyTransfer, TrainOutcome, TrainRunConfig, TransferMode, TransferReport,
    UpdateMetrics,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Morphology(#[from] MorphologyError),
    #[error("non-finite loss in update {update}, epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFiniteLoss {
        update: usize,
        epoch: usize,
        minibatch: usize,
        detail: String,
    },
    #[error("unseen set overlaps the training set: {}", .0.join(", "))]
    Overlap(Vec<String>),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, RlError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Steps collected per environment per update.
    pub horizon: usize,
    pub envs_per_morphology: usize,
    pub updates: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatches: 4,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            horizon: 128,
            envs_per_morphology: 4,
            updates: 1000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(RlError::Config("gamma and lambda must lie in (0, 1]".into()));
        }
        if !(self.clip > 0.0) {
            return Err(RlError::Config("clip must be positive".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 || self.envs_per_morphology == 0 {
            return Err(RlError::Config("epochs, minibatches, horizon and envs_per_morphology must be positive".into()));
        }
        let finite_positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in finite_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(RlError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(RlError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.value_coef.is_finite() && self.value_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(RlError::Config("loss coefficients must be finite and value_coef non-negative".into()));
        }
        Ok(())
    }
}

/// Worker count: `HM_THREADS` when set to a positive integer, else all cores.
pub fn thread_count() -> usize {
    std::env::var("HM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Independent ChaCha stream for one (purpose, a, b) triple under `seed`.
pub(crate) fn stream_rng(seed: u64, purpose: u64, a: u64, b: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) ^ (a << 28) ^ b);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(PpoConfig::default().validate().is_ok());
        let bad = PpoConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PpoConfig {
            minibatches: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn streams_differ() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 1, 0, 0).gen();
        let b: u64 = stream_rng(1, 1, 0, 1).gen();
        let c: u64 = stream_rng(1, 1, 0, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}

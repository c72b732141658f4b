//! The conditional VAE: five networks, the annealed objective with the
//! gold-Gaussian term, the training loop, and greedy generation.

mod config;
mod gold;
mod network;
mod train;

pub use config::{anneal_beta, BetaSchedule, ModelConfig, TrainConfig};
pub use gold::{GoldGuide, GoldTerm};
pub use network::{Cvae, LossBreakdown};
pub use train::{generation_noise, train, EpochLog, TrainReport, TrainStatus};

use std::path::{Path, PathBuf};

use crate::gaussian::GaussianError;
use crate::neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("no gold Gaussians for label {0:?}")]
    MissingGold(String),
    #[error("batch has examples without label {0:?}")]
    MissingLabel(String),
    #[error("no gold Gaussian for category {category} of label {label:?}")]
    MissingCategory { label: String, category: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

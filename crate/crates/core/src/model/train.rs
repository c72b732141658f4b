use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::corpus::{make_batches, DialoguePair};
use crate::neural::{adam_step, Precision};
use crate::rng::{derive_seed, indexed_stream, stream, GENERATE, NOISE};

use super::{Cvae, GoldGuide, LossBreakdown, ModelError, TrainConfig};

/// Per-epoch means of the logged loss terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based
    pub epoch: usize,
    pub recon: f64,
    pub prior_kl: f64,
    pub gold_kl: f64,
    pub beta: f64,
    pub lambda: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// Stopped before the update at global step `step`; the model holds the
    /// parameters after the last successful update.
    Aborted { epoch: usize, step: u64, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Cvae,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<LossBreakdown>,
    pub status: TrainStatus,
}

impl TrainReport {
    /// One JSON object per epoch, newline terminated.
    pub fn log_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }
}

/// Fills `buf` with standard normal draws.
/// Prior noise for `rows` generations: example `i` draws from its own
/// indexed stream, so a line's output does not depend on the others.
pub fn generation_noise(seed: u64, rows: usize, latent: usize) -> Vec<f64> {
    let mut noise = vec![0.0; rows * latent];
    for (i, chunk) in noise.chunks_mut(latent.max(1)).enumerate() {
        fill_normal(&mut indexed_stream(seed, GENERATE, i as u64), chunk);
    }
    noise
}

pub(crate) fn fill_normal<R: rand::Rng>(rng: &mut R, buf: &mut [f64]) {
    for x in buf {
        *x = StandardNormal.sample(rng);
    }
}

/// Trains a fresh model on `pairs`. Batches are reshuffled every epoch; the
/// KL coefficient follows the global update counter.
pub fn train(
    config: &TrainConfig,
    pairs: &[DialoguePair],
    vocab_size: usize,
    gold: Option<&GoldGuide>,
) -> Result<TrainReport, ModelError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mc = &config.model;
    let mut model = Cvae::new(mc, vocab_size, Precision::Single)?;
    let mut noise_rng = stream(mc.seed, NOISE);
    let mut epochs = Vec::with_capacity(mc.epochs);
    let mut steps = Vec::new();
    let mut status = TrainStatus::Completed;
    'outer: for epoch in 0..mc.epochs {
        let shuffle_seed = derive_seed(mc.seed, &format!("epoch-{epoch}"));
        let batches = make_batches(pairs, mc.batch_size, mc.max_len, shuffle_seed);
        let mut sums = [0.0; 5];
        let lr = config.optimizer.rate_at(epoch);
        for batch in &batches {
            let step = model.params().step;
            let beta = mc.beta_at(step);
            let mut noise = vec![0.0; batch.size * mc.latent_dim];
            fill_normal(&mut noise_rng, &mut noise);
            model.params_mut().zero_grad();
            let loss = model.loss(batch, gold, beta, mc.lambda, &noise)?;
            if !loss.total.is_finite() {
                status = TrainStatus::Aborted {
                    epoch: epoch + 1,
                    step,
                    reason: format!("non-finite loss {}", loss.total),
                };
                break 'outer;
            }
            if let Err(e) = adam_step(model.params_mut(), &config.optimizer, epoch) {
                status = TrainStatus::Aborted {
                    epoch: epoch + 1,
                    step,
                    reason: e.to_string(),
                };
                break 'outer;
            }
            for (s, v) in sums
                .iter_mut()
                .zip([loss.reconstruction, loss.prior_kl, loss.gold_kl, loss.beta, loss.total])
            {
                *s += v;
            }
            steps.push(loss);
        }
        let n = batches.len() as f64;
        epochs.push(EpochLog {
            epoch: epoch + 1,
            recon: sums[0] / n,
            prior_kl: sums[1] / n,
            gold_kl: sums[2] / n,
            beta: sums[3] / n,
            lambda: mc.lambda,
            total: sums[4] / n,
            lr,
        });
    }
    Ok(TrainReport {
        model,
        epochs,
        steps,
        status,
    })
}

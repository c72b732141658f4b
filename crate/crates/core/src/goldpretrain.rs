//! Gold-Gaussian distillation: split the corpus by category, train a plain
//! CVAE on each part, and summarise each part's posteriors as one Gaussian.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DialoguePair;
use crate::gaussian::{aggregate_posteriors, Aggregation, GaussianError, GoldBank};
use crate::model::{train, ModelError, TrainConfig, TrainStatus};
use crate::rng::indexed_stream;

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("pair {index} has no {label:?} label")]
    MissingLabel { index: usize, label: String },
    #[error("pair {index} has category {category} but the label has {count} categories")]
    CategoryOutOfRange {
        index: usize,
        category: usize,
        count: usize,
    },
    #[error("category {0} has no training pairs")]
    EmptyCategory(usize),
    #[error("every category is empty")]
    AllEmpty,
    #[error("pretraining category {category} aborted: {reason}")]
    Aborted { category: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Architecture and optimizer of the per-category models; the gold
    /// coefficient is forced to 0.
    pub train: TrainConfig,
    pub epochs: usize,
    /// pairs drawn per category (all when `None` or larger than the category)
    pub sample_size: Option<usize>,
    pub aggregation: Aggregation,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            epochs: 10,
            sample_size: None,
            aggregation: Aggregation::MeanOfMoments,
        }
    }
}

/// Groups pairs by their category under `label`. All `num_categories` ids
/// are present in the result, empty or not.
pub fn split_by_category(
    pairs: &[DialoguePair],
    label: &str,
    num_categories: usize,
) -> Result<BTreeMap<usize, Vec<DialoguePair>>, PretrainError> {
    let mut out: BTreeMap<usize, Vec<DialoguePair>> = (0..num_categories).map(|k| (k, Vec::new())).collect();
    for (index, p) in pairs.iter().enumerate() {
        let category = p.label(label).ok_or_else(|| PretrainError::MissingLabel {
            index,
            label: label.to_string(),
        })?;
        out.get_mut(&category)
            .ok_or(PretrainError::CategoryOutOfRange {
                index,
                category,
                count: num_categories,
            })?
            .push(p.clone());
    }
    Ok(out)
}

/// Trains one model per category and aggregates its posteriors over the
/// training sample into that category's gold Gaussian. Categories train in
/// parallel; the result does not depend on scheduling.
pub fn pretrain_gold(
    sub_corpora: &BTreeMap<usize, Vec<DialoguePair>>,
    config: &PretrainConfig,
    vocab_size: usize,
) -> Result<GoldBank, PretrainError> {
    if sub_corpora.values().all(Vec::is_empty) {
        return Err(PretrainError::AllEmpty);
    }
    let ids: Vec<usize> = sub_corpora.keys().copied().collect();
    if let Some(missing) = ids.iter().enumerate().find(|(i, &k)| *i != k) {
        return Err(PretrainError::EmptyCategory(missing.0));
    }
    if let Some((&k, _)) = sub_corpora.iter().find(|(_, v)| v.is_empty()) {
        return Err(PretrainError::EmptyCategory(k));
    }
    let mut tc = config.train.clone();
    tc.model.lambda = 0.0;
    tc.model.epochs = config.epochs;
    tc.model.partition = None;
    let seed = tc.model.seed;
    let gaussians: Result<Vec<_>, PretrainError> = sub_corpora
        .par_iter()
        .map(|(&k, pairs)| {
            let chosen = choose_sample(pairs, config.sample_size, seed, k);
            let report = train(&tc, &chosen, vocab_size, None)?;
            if let TrainStatus::Aborted { reason, .. } = report.status {
                return Err(PretrainError::Aborted { category: k, reason });
            }
            let refs: Vec<&DialoguePair> = chosen.iter().collect();
            let posts = report.model.posteriors(&refs)?;
            Ok(aggregate_posteriors(&posts, config.aggregation)?)
        })
        .collect();
    Ok(GoldBank::new(gaussians?, None)?)
}

fn choose_sample(pairs: &[DialoguePair], size: Option<usize>, seed: u64, category: usize) -> Vec<DialoguePair> {
    match size {
        Some(n) if n < pairs.len() => {
            let mut rng = indexed_stream(seed, "gold-sample", category as u64);
            let mut idx = sample(&mut rng, pairs.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pairs[i].clone()).collect()
        }
        _ => pairs.to_vec(),
    }
}

pub fn save_bank(bank: &GoldBank, path: &Path) -> Result<(), GaussianError> {
    bank.save(path)
}

/// Loads a bank and checks it against the configured latent size.
pub fn load_bank(path: &Path, latent_dim: usize) -> Result<GoldBank, GaussianError> {
    GoldBank::load(path, Some(latent_dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn pair(topic: usize, w: usize) -> DialoguePair {
        DialoguePair {
            context: vec![4 + topic, 5],
            response: vec![7 + topic, w],
            labels: [("topic".to_string(), topic)].into_iter().collect(),
        }
    }

    fn small_config() -> PretrainConfig {
        PretrainConfig {
            train: TrainConfig {
                model: ModelConfig {
                    embedding_dim: 4,
                    hidden_dim: 4,
                    latent_dim: 3,
                    mlp_hidden: 4,
                    batch_size: 4,
                    max_len: 6,
                    seed: 3,
                    ..Default::default()
                },
                ..Default::default()
            },
            epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn split_is_a_partition() {
        let pairs: Vec<_> = (0..300).map(|i| pair(i % 3, 4 + i % 5)).collect();
        let parts = split_by_category(&pairs, "topic", 4).unwrap();
        assert_eq!(parts.len(), 4);
        assert_eq!(parts[&0].len(), 100);
        assert!(parts[&3].is_empty());
        assert_eq!(parts.values().map(Vec::len).sum::<usize>(), 300);
        assert!(split_by_category(&pairs, "mood", 3).is_err());
        assert!(split_by_category(&pairs, "topic", 2).is_err());
    }

    #[test]
    fn one_pair_category_gives_its_posterior() {
        let pairs = vec![pair(0, 4), pair(0, 5), pair(1, 6)];
        let parts = split_by_category(&pairs, "topic", 2).unwrap();
        let cfg = small_config();
        let bank = pretrain_gold(&parts, &cfg, 12).unwrap();
        assert_eq!((bank.len(), bank.dim()), (2, 3));
        let mut tc = cfg.train.clone();
        tc.model.lambda = 0.0;
        tc.model.epochs = cfg.epochs;
        let single = train(&tc, &parts[&1], 12, None).unwrap();
        let post = single.model.posteriors(&[&parts[&1][0]]).unwrap();
        assert_eq!(bank.get(1).unwrap(), &post[0]);
        // byte-identical on a rerun
        assert_eq!(pretrain_gold(&parts, &cfg, 12).unwrap().to_json(), bank.to_json());
    }

    #[test]
    fn empty_categories_are_rejected() {
        let pairs = vec![pair(0, 4), pair(2, 5)];
        let parts = split_by_category(&pairs, "topic", 3).unwrap();
        let err = pretrain_gold(&parts, &small_config(), 12).unwrap_err();
        assert!(matches!(err, PretrainError::EmptyCategory(1)));
        let none = split_by_category(&[], "topic", 3).unwrap();
        assert!(matches!(pretrain_gold(&none, &small_config(), 12), Err(PretrainError::AllEmpty)));
    }

    #[test]
    fn sampling_respects_size_and_is_seeded() {
        let pairs: Vec<_> = (0..20).map(|i| pair(0, i)).collect();
        let a = choose_sample(&pairs, Some(5), 1, 0);
        assert_eq!(a.len(), 5);
        assert_eq!(a, choose_sample(&pairs, Some(5), 1, 0));
        assert_eq!(choose_sample(&pairs, Some(50), 1, 0).len(), 20);
    }

    #[test]
    fn bank_round_trip_and_dim_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let bank = crate::gaussian::math_gold_bank(3, 4).unwrap();
        save_bank(&bank, &path).unwrap();
        assert_eq!(load_bank(&path, 4).unwrap(), bank);
        assert!(load_bank(&path, 200).is_err());
    }
}

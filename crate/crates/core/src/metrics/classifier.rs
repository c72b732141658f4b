use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_holdout, DialoguePair, SOS};
use crate::model::{train, Cvae, ModelConfig, TrainConfig, TrainStatus};
use crate::neural::OptimizerConfig;

use super::MetricsError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    /// Multinomial logistic regression on token presence.
    #[default]
    BagOfWords,
    /// A CVAE that reads the response as its context and decodes a label token.
    CvaeLabel,
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bag-of-words" | "bow" => Ok(Self::BagOfWords),
            "cvae-label" => Ok(Self::CvaeLabel),
            _ => Err(format!("unknown classifier kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub seed: u64,
    pub held_out_fraction: f64,
    /// full-batch gradient steps of the logistic model
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// training run of the CVAE kind
    pub cvae: TrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::BagOfWords,
            seed: 0,
            held_out_fraction: 0.2,
            iterations: 300,
            learning_rate: 1.0,
            l2: 1e-4,
            cvae: TrainConfig {
                model: ModelConfig {
                    embedding_dim: 64,
                    hidden_dim: 64,
                    latent_dim: 16,
                    mlp_hidden: 64,
                    // full KL weight from the start keeps the label signal
                    // out of the posterior shortcut
                    beta_ramp: 1,
                    lambda: 0.0,
                    epochs: 10,
                    ..Default::default()
                },
                optimizer: OptimizerConfig {
                    learning_rate: 1e-3,
                    ..Default::default()
                },
            },
        }
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Logistic {
        vocab: usize,
        /// `categories x (vocab + 1)`, bias last
        weights: Vec<f64>,
    },
    Cvae {
        model: Box<Cvae>,
        /// token id of each category's label token
        label_tokens: Vec<usize>,
    },
}

/// Maps token sequences to category ids.
#[derive(Debug, Clone)]
pub struct Classifier {
    inner: Inner,
    categories: usize,
    /// accuracy on the held-out split
    pub accuracy: f64,
}

fn presence(tokens: &[usize], vocab: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens.iter().map(|&t| t.min(vocab - 1)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self.inner {
            Inner::Logistic { .. } => ClassifierKind::BagOfWords,
            Inner::Cvae { .. } => ClassifierKind::CvaeLabel,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.categories
    }

    /// Predicted category id in `0..num_categories`; ties go to the lower id.
    pub fn classify(&self, tokens: &[usize]) -> usize {
        match &self.inner {
            Inner::Logistic { vocab, weights } => {
                argmax(&logistic_scores(weights, *vocab, self.categories, &presence(tokens, *vocab)))
            }
            Inner::Cvae { model, label_tokens } => {
                let ctx: Vec<usize> = tokens.iter().map(|&t| t.min(model.vocab_size() - 1)).collect();
                let noise = vec![0.0; model.latent_dim()];
                let logits = model
                    .first_token_logits(&[&ctx], &noise)
                    .expect("classifier inputs are clamped to the vocabulary");
                let scores: Vec<f64> = label_tokens.iter().map(|&t| logits.row(0)[t]).collect();
                argmax(&scores)
            }
        }
    }

    pub fn classify_all(&self, seqs: &[&[usize]]) -> Vec<usize> {
        seqs.par_iter().map(|s| self.classify(s)).collect()
    }

    /// Logistic weights (empty for the CVAE kind).
    pub fn logistic_weights(&self) -> &[f64] {
        match &self.inner {
            Inner::Logistic { weights, .. } => weights,
            Inner::Cvae { .. } => &[],
        }
    }
}

fn logistic_scores(weights: &[f64], vocab: usize, k: usize, feats: &[usize]) -> Vec<f64> {
    let stride = vocab + 1;
    (0..k)
        .map(|c| {
            let w = &weights[c * stride..(c + 1) * stride];
            w[vocab] + feats.iter().map(|&f| w[f]).sum::<f64>()
        })
        .collect()
}

fn train_logistic(
    examples: &[(Vec<usize>, usize)],
    vocab: usize,
    k: usize,
    cfg: &ClassifierConfig,
) -> Vec<f64> {
    let stride = vocab + 1;
    let mut w = vec![0.0; k * stride];
    let feats: Vec<Vec<usize>> = examples.iter().map(|(t, _)| presence(t, vocab)).collect();
    let n = examples.len() as f64;
    for _ in 0..cfg.iterations {
        let mut grad = vec![0.0; k * stride];
        for ((_, y), f) in examples.iter().zip(&feats) {
            let s = logistic_scores(&w, vocab, k, f);
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..k {
                let g = e[c] / z - if c == *y { 1.0 } else { 0.0 };
                let row = &mut grad[c * stride..(c + 1) * stride];
                row[vocab] += g;
                for &fi in f {
                    row[fi] += g;
                }
            }
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= cfg.learning_rate * (gi / n + cfg.l2 * *wi);
        }
    }
    w
}

/// Trains a response classifier for `label` on the responses of `pairs` and
/// measures its accuracy on a seeded held-out split.
pub fn train_classifier(
    pairs: &[DialoguePair],
    label: &str,
    num_categories: usize,
    vocab_size: usize,
    config: &ClassifierConfig,
) -> Result<Classifier, MetricsError> {
    let mut examples = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let y = p
            .label(label)
            .ok_or_else(|| MetricsError::Classifier(format!("pair {i} has no {label:?} label")))?;
        if y >= num_categories {
            return Err(MetricsError::Classifier(format!(
                "pair {i} has category {y} of {num_categories}"
            )));
        }
        examples.push((p.response.clone(), y));
    }
    let mut present: Vec<usize> = examples.iter().map(|e| e.1).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(MetricsError::Classifier(format!(
            "need at least 2 categories, found {}",
            present.len()
        )));
    }
    let (fit, held) = split_holdout(&examples, config.held_out_fraction, config.seed);
    let inner = match config.kind {
        ClassifierKind::BagOfWords => Inner::Logistic {
            vocab: vocab_size,
            weights: train_logistic(&fit, vocab_size, num_categories, config),
        },
        ClassifierKind::CvaeLabel => train_label_cvae(&fit, vocab_size, num_categories, config)?,
    };
    let mut clf = Classifier {
        inner,
        categories: num_categories,
        accuracy: 0.0,
    };
    let eval = if held.is_empty() { &fit } else { &held };
    let seqs: Vec<&[usize]> = eval.iter().map(|(t, _)| t.as_slice()).collect();
    let predicted = clf.classify_all(&seqs);
    let correct = predicted.iter().zip(eval).filter(|(p, (_, y))| *p == y).count();
    clf.accuracy = correct as f64 / eval.len() as f64;
    Ok(clf)
}

fn train_label_cvae(
    fit: &[(Vec<usize>, usize)],
    vocab: usize,
    k: usize,
    config: &ClassifierConfig,
) -> Result<Inner, MetricsError> {
    // label tokens are appended after the text vocabulary
    let label_tokens: Vec<usize> = (vocab..vocab + k).collect();
    let pairs: Vec<DialoguePair> = fit
        .iter()
        .map(|(t, y)| DialoguePair {
            context: if t.is_empty() { vec![SOS] } else { t.clone() },
            response: vec![label_tokens[*y]],
            labels: Default::default(),
        })
        .collect();
    let mut tc = config.cvae.clone();
    tc.model.lambda = 0.0;
    tc.model.partition = None;
    tc.model.seed = config.seed;
    let report = train(&tc, &pairs, vocab + k, None)?;
    if let TrainStatus::Aborted { reason, .. } = report.status {
        return Err(MetricsError::Classifier(format!("training aborted: {reason}")));
    }
    Ok(Inner::Cvae {
        model: Box::new(report.model),
        label_tokens,
    })
}

//! Automatic evaluation: n-gram overlap scores, diversity, bootstrap
//! intervals, and the classifier-agreement index (IEID).

mod classifier;
mod overlap;

pub use classifier::{train_classifier, Classifier, ClassifierConfig, ClassifierKind};
pub use overlap::{bleu, distinct_n, meteor_lite, rouge_l, stem};

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Vocabulary, UNK};
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no {0}-grams in the outputs")]
    NoNgrams(usize),
    #[error("no evaluation pairs")]
    Empty,
    #[error("classifier: {0}")]
    Classifier(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default)]
    pub context: String,
    pub reference: String,
    pub generated: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// A tokenized reference/generated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub reference: Vec<String>,
    pub generated: Vec<String>,
    pub label: Option<usize>,
}

impl From<&PredictionRecord> for EvalPair {
    fn from(r: &PredictionRecord) -> Self {
        Self {
            reference: tokenize(&r.reference),
            generated: tokenize(&r.generated),
            label: r.label,
        }
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_predictions(&text)
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| MetricsError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if tokenize(&rec.reference).is_empty() {
            return Err(MetricsError::Malformed {
                line: i + 1,
                message: "empty reference".into(),
            });
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(out)
}

/// Fraction of `(reference, generated)` pairs the classifier puts in the
/// same category.
pub fn ieid(pairs: &[(Vec<usize>, Vec<usize>)], clf: &Classifier) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let agree: usize = pairs
        .par_iter()
        .map(|(t, g)| usize::from(clf.classify(t) == clf.classify(g)))
        .sum();
    Ok(agree as f64 / pairs.len() as f64)
}

/// IEID from precomputed label pairs.
pub fn ieid_from_labels(labels: &[(usize, usize)]) -> Result<f64, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(labels.iter().filter(|(t, g)| t == g).count() as f64 / labels.len() as f64)
}

/// Mean with a 95% percentile-bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub ci: [f64; 2],
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn bootstrap(scores: &[f64], resamples: usize, seed: u64) -> Result<Interval, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    if resamples == 0 {
        return Ok(Interval { mean, ci: [mean, mean] });
    }
    let mut rng = crate::rng::stream(seed, crate::rng::BOOTSTRAP);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| scores[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(Interval {
        mean,
        ci: [quantile(&means, 0.025), quantile(&means, 0.975)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Value {
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IeidReport {
    pub value: f64,
    pub classifier_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub bleu: Interval,
    pub rouge_l: Interval,
    pub meteor_lite: Interval,
    pub distinct2: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ieid: Option<IeidReport>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct");
        s.push('\n');
        s
    }
}

/// Scores every pair and summarises with bootstrap intervals. When a
/// classifier is given, responses are re-encoded with `vocab` for IEID.
pub fn evaluate(
    pairs: &[EvalPair],
    classifier: Option<(&Classifier, &Vocabulary)>,
    resamples: usize,
    seed: u64,
) -> Result<MetricReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let scores: Vec<[f64; 3]> = pairs
        .par_iter()
        .map(|p| {
            [
                bleu(&p.generated, &[&p.reference], 4),
                rouge_l(&p.generated, &p.reference),
                meteor_lite(&p.generated, &p.reference),
            ]
        })
        .collect();
    let column = |i: usize| scores.iter().map(|s| s[i]).collect::<Vec<f64>>();
    let outputs: Vec<&[String]> = pairs.iter().map(|p| p.generated.as_slice()).collect();
    let distinct = match distinct_n(&outputs, 2) {
        Ok(v) => v,
        Err(MetricsError::NoNgrams(_)) => 0.0,
        Err(e) => return Err(e),
    };
    let ieid = match classifier {
        Some((clf, vocab)) => {
            let encode = |toks: &[String]| -> Vec<usize> { toks.iter().map(|t| vocab.id(t).unwrap_or(UNK)).collect() };
            let ids: Vec<(Vec<usize>, Vec<usize>)> =
                pairs.iter().map(|p| (encode(&p.reference), encode(&p.generated))).collect();
            Some(IeidReport {
                value: ieid(&ids, clf)?,
                classifier_accuracy: clf.accuracy,
            })
        }
        None => None,
    };
    Ok(MetricReport {
        count: pairs.len(),
        bleu: bootstrap(&column(0), resamples, seed)?,
        rouge_l: bootstrap(&column(1), resamples, seed)?,
        meteor_lite: bootstrap(&column(2), resamples, seed)?,
        distinct2: Value { value: distinct },
        ieid,
    })
}

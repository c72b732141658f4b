//! Dialogue corpora: loading labeled exchanges, label aggregation,
//! vocabulary construction, and padded batching.

mod batch;
mod synth;
mod taxonomy;
mod vocab;

pub use batch::{make_batches, Batch};
pub use synth::{synth_corpus, SynthCorpus, CONTENT_POOLS, FUNCTION_WORDS, SYNTH_CATEGORY_NAMES, SYNTH_LABEL};
pub use taxonomy::LabelTaxonomy;
pub use vocab::{Vocabulary, EOS, PAD, SOS, UNK};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown raw tag {tag:?} for label {label:?}")]
    UnknownTag {
        line: usize,
        label: String,
        tag: String,
    },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("corpus is empty")]
    Empty,
}

/// One single-turn exchange in text form with aggregated category ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExchange {
    pub context: String,
    pub response: String,
    /// label name -> category id under that label's taxonomy
    pub labels: BTreeMap<String, usize>,
}

/// An encoded exchange (`C`, `X`) with its category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub context: Vec<usize>,
    pub response: Vec<usize>,
    pub labels: BTreeMap<String, usize>,
}

impl DialoguePair {
    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }
}

/// Lowercases, splits on whitespace, and splits punctuation into its own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

#[derive(Deserialize)]
struct CorpusRecord {
    context: Option<String>,
    response: Option<String>,
    turns: Option<Vec<String>>,
    #[serde(default)]
    labels: BTreeMap<String, Value>,
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a JSON-lines corpus, expanding multi-turn records into adjacent
/// pairs. Each pair takes the labels of its response turn. Every record must
/// carry a tag for every taxonomy given.
pub fn load_corpus(
    path: &Path,
    taxonomies: &[LabelTaxonomy],
) -> Result<Vec<RawExchange>, CorpusError> {
    parse_corpus(&read_to_string(path)?, taxonomies)
}

pub fn parse_corpus(
    text: &str,
    taxonomies: &[LabelTaxonomy],
) -> Result<Vec<RawExchange>, CorpusError> {
    let mut out = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(raw_line).map_err(|e| CorpusError::Malformed {
                line,
                message: e.to_string(),
            })?;
        let turns: Vec<String> = match (record.turns, record.context, record.response) {
            (Some(turns), None, None) => {
                if turns.len() < 2 {
                    return Err(CorpusError::Malformed {
                        line,
                        message: "\"turns\" needs at least two utterances".into(),
                    });
                }
                turns
            }
            (None, Some(c), Some(r)) => vec![c, r],
            (None, Some(_), None) => {
                return Err(CorpusError::Malformed {
                    line,
                    message: "missing \"response\" field".into(),
                })
            }
            (None, None, Some(_)) => {
                return Err(CorpusError::Malformed {
                    line,
                    message: "missing \"context\" field".into(),
                })
            }
            (None, None, None) => {
                return Err(CorpusError::Malformed {
                    line,
                    message: "record needs \"context\"/\"response\" or \"turns\"".into(),
                })
            }
            (Some(_), _, _) => {
                return Err(CorpusError::Malformed {
                    line,
                    message: "\"turns\" cannot be combined with \"context\"/\"response\"".into(),
                })
            }
        };
        for i in 1..turns.len() {
            let mut labels = BTreeMap::new();
            for tax in taxonomies {
                let value = record.labels.get(&tax.label).ok_or_else(|| CorpusError::Malformed {
                    line,
                    message: format!("missing label {:?}", tax.label),
                })?;
                let tag = turn_tag(value, i, turns.len()).ok_or_else(|| CorpusError::Malformed {
                    line,
                    message: format!(
                        "label {:?} must be a string or an array with one tag per turn",
                        tax.label
                    ),
                })?;
                let category = tax.category_of(tag).ok_or_else(|| CorpusError::UnknownTag {
                    line,
                    label: tax.label.clone(),
                    tag: tag.to_string(),
                })?;
                labels.insert(tax.label.clone(), category);
            }
            out.push(RawExchange {
                context: turns[i - 1].clone(),
                response: turns[i].clone(),
                labels,
            });
        }
    }
    Ok(out)
}

fn turn_tag(value: &Value, turn: usize, num_turns: usize) -> Option<&str> {
    match value {
        Value::String(s) => Some(s),
        Value::Array(tags) if tags.len() == num_turns => tags[turn].as_str(),
        _ => None,
    }
}

/// Writes exchanges back out in the two-field corpus format, with category
/// names as raw tags (loadable through the same taxonomies).
pub fn write_corpus(
    path: &Path,
    exchanges: &[RawExchange],
    taxonomies: &[LabelTaxonomy],
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for ex in exchanges {
        let mut labels = serde_json::Map::new();
        for tax in taxonomies {
            if let Some(&id) = ex.labels.get(&tax.label) {
                labels.insert(tax.label.clone(), Value::String(tax.categories[id].clone()));
            }
        }
        let record = serde_json::json!({
            "context": ex.context,
            "response": ex.response,
            "labels": labels,
        });
        serde_json::to_writer(&mut buf, &record)?;
        buf.push(b'\n');
    }
    fs::File::create(path)?.write_all(&buf)
}

/// Encodes every exchange. Pairs whose context or response encodes to no
/// tokens are dropped.
pub fn encode_pairs(exchanges: &[RawExchange], vocab: &Vocabulary) -> Vec<DialoguePair> {
    exchanges
        .iter()
        .filter_map(|ex| {
            let context = vocab.encode(&ex.context);
            let response = vocab.encode(&ex.response);
            (!context.is_empty() && !response.is_empty()).then(|| DialoguePair {
                context,
                response,
                labels: ex.labels.clone(),
            })
        })
        .collect()
}

/// Seeded train/held-out split; returns (train, held_out).
pub fn split_holdout<T: Clone>(items: &[T], held_out_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, "holdout-split"));
    let n_held = ((items.len() as f64) * held_out_fraction).round() as usize;
    let (held, train) = order.split_at(n_held.min(items.len()));
    let mut train: Vec<usize> = train.to_vec();
    let mut held: Vec<usize> = held.to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (
        train.into_iter().map(|i| items[i].clone()).collect(),
        held.into_iter().map(|i| items[i].clone()).collect(),
    )
}

/// Encoded cache: one JSON object per line, same fields as [`DialoguePair`].
pub fn write_encoded(path: &Path, pairs: &[DialoguePair]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    fs::File::create(path)?.write_all(&buf)
}

pub fn read_encoded(path: &Path, vocab: &Vocabulary) -> Result<Vec<DialoguePair>, CorpusError> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: DialoguePair = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if pair.context.is_empty() || pair.response.is_empty() {
            return Err(CorpusError::Malformed {
                line: idx + 1,
                message: "empty token sequence".into(),
            });
        }
        if let Some(&bad) = pair.context.iter().chain(&pair.response).find(|&&t| t >= vocab.len()) {
            return Err(CorpusError::Malformed {
                line: idx + 1,
                message: format!("token id {bad} outside vocabulary of size {}", vocab.len()),
            });
        }
        out.push(pair);
    }
    Ok(out)
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::LabelTaxonomy;
use crate::gaussian::{Aggregation, LatentPartition};
use crate::metrics::ClassifierKind;
use crate::model::{ModelConfig, TrainConfig};
use crate::neural::OptimizerConfig;

use super::CliError;

/// Where gold Gaussians come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldSource {
    /// One plain CVAE per category.
    #[default]
    Pretrained,
    /// The constructed grid of means `0, 1, -1, ...` and variances `k + 1`.
    Math,
}

/// Every setting of a pipeline run. Model and optimizer fields sit at the
/// top level; paths default to fixed names under `work_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    pub work_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    /// built-in taxonomy names or taxonomy file paths
    pub taxonomies: Vec<String>,
    pub vocab_cap: usize,
    pub held_out_fraction: f64,
    /// e.g. "50:50:100", applied to `partition_labels`
    pub partition_ratios: Option<String>,
    pub partition_labels: Vec<String>,
    pub gold: GoldSource,
    pub pretrain_epochs: usize,
    pub sample_size: Option<usize>,
    pub aggregation: Aggregation,
    pub classifier: ClassifierKind,
    pub bootstrap_resamples: usize,
    pub generate_max_len: usize,
    /// "test" or "train"
    pub latent_split: String,
    pub vocab: Option<PathBuf>,
    pub train_pairs: Option<PathBuf>,
    pub test_pairs: Option<PathBuf>,
    pub taxonomy_file: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub contexts: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub latent_csv: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            work_dir: PathBuf::from("acvae-run"),
            corpus: None,
            taxonomies: Vec::new(),
            vocab_cap: 20_000,
            held_out_fraction: 0.1,
            partition_ratios: None,
            partition_labels: vec!["common".into(), "action".into(), "emotion".into()],
            gold: GoldSource::Pretrained,
            pretrain_epochs: 10,
            sample_size: None,
            aggregation: Aggregation::MeanOfMoments,
            classifier: ClassifierKind::BagOfWords,
            bootstrap_resamples: 1000,
            generate_max_len: 30,
            latent_split: "test".into(),
            vocab: None,
            train_pairs: None,
            test_pairs: None,
            taxonomy_file: None,
            bank: None,
            checkpoint: None,
            train_log: None,
            contexts: None,
            predictions: None,
            report: None,
            latent_csv: None,
        }
    }
}

/// Parses `--set` values as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, overlaid by the config file, overlaid by `key=value` pairs.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let Value::Object(mut merged) = serde_json::to_value(Self::default()).expect("serializable") else {
            unreachable!("config serializes to an object")
        };
        let known: Vec<String> = merged.keys().cloned().collect();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("reading config {}: {e}", path.display())))?;
            let Value::Object(obj): Value = serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("config {}: {e}", path.display())))?
            else {
                return Err(CliError::data(format!("config {} is not a JSON object", path.display())));
            };
            overlay(&mut merged, obj, &known, |k| {
                CliError::data(format!("config {}: unknown field {k:?}", path.display()))
            })?;
        }
        let mut overrides = Map::new();
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {s:?}")))?;
            overrides.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        overlay(&mut merged, overrides, &known, |k| CliError::Usage(format!("unknown setting {k:?}")))?;
        let mut cfg: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::data(format!("invalid configuration: {e}")))?;
        if let Some(ratios) = &cfg.partition_ratios {
            let names: Vec<&str> = cfg.partition_labels.iter().map(String::as_str).collect();
            cfg.model.partition = Some(
                LatentPartition::from_ratio_str(ratios, &names, cfg.model.latent_dim)
                    .map_err(|e| CliError::data(format!("partition: {e}")))?,
            );
        }
        cfg.model
            .validate()
            .and_then(|_| cfg.optimizer.validate().map_err(Into::into))
            .map_err(|e| CliError::data(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            optimizer: self.optimizer,
        }
    }

    fn path_or(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.work_dir.join(name))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.path_or(&self.vocab, "vocab.txt")
    }
    pub fn train_pairs_path(&self) -> PathBuf {
        self.path_or(&self.train_pairs, "train.jsonl")
    }
    pub fn test_pairs_path(&self) -> PathBuf {
        self.path_or(&self.test_pairs, "test.jsonl")
    }
    pub fn taxonomy_path(&self) -> PathBuf {
        self.path_or(&self.taxonomy_file, "taxonomies.json")
    }
    pub fn checkpoint_path(&self) -> PathBuf {
        self.path_or(&self.checkpoint, "model.ckpt")
    }
    pub fn train_log_path(&self) -> PathBuf {
        self.path_or(&self.train_log, "train_log.jsonl")
    }
    pub fn contexts_path(&self) -> PathBuf {
        self.path_or(&self.contexts, "test_contexts.jsonl")
    }
    pub fn predictions_path(&self) -> PathBuf {
        self.path_or(&self.predictions, "generations.jsonl")
    }
    pub fn report_path(&self) -> PathBuf {
        self.path_or(&self.report, "report.json")
    }
    pub fn latent_csv_path(&self) -> PathBuf {
        self.path_or(&self.latent_csv, "latent.csv")
    }

    /// Labels that need a gold bank: the constrained slices of the partition,
    /// or the single training label.
    pub fn gold_labels(&self) -> Vec<String> {
        match &self.model.partition {
            Some(p) => p.constrained().map(|s| s.name.clone()).collect(),
            None => vec![self.model.label.clone()],
        }
    }

    /// Bank file for `label`; partitioned runs keep one file per label.
    pub fn bank_path(&self, label: &str) -> PathBuf {
        let base = self.path_or(&self.bank, "gold_bank.json");
        if self.model.partition.is_none() {
            return base;
        }
        let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        base.with_file_name(format!("{stem}.{label}.json"))
    }
}

fn overlay(
    into: &mut Map<String, Value>,
    from: Map<String, Value>,
    known: &[String],
    unknown: impl Fn(&str) -> CliError,
) -> Result<(), CliError> {
    for (k, v) in from {
        if !known.contains(&k) {
            return Err(unknown(&k));
        }
        into.insert(k, v);
    }
    Ok(())
}

/// Resolves a taxonomy argument: a built-in name or a taxonomy file.
pub fn resolve_taxonomy(name: &str) -> Result<LabelTaxonomy, CliError> {
    match name {
        "daily-dialog-emotion" => Ok(LabelTaxonomy::daily_dialog_emotion()),
        "daily-dialog-action" => Ok(LabelTaxonomy::daily_dialog_action()),
        "empathetic-dialogues-emotion" => Ok(LabelTaxonomy::empathetic_dialogues_emotion()),
        path => LabelTaxonomy::load(Path::new(path)).map_err(|e| CliError::data(format!("taxonomy {path}: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"hidden_dim": 32, "learning_rate": 0.01, "work_dir": "w"}"#).unwrap();
        let cfg = RunConfig::resolve(
            Some(&file),
            &["hidden_dim=16".into(), "label=topic".into(), "corpus=data/x.jsonl".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.hidden_dim, 16);
        assert_eq!(cfg.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.model.label, "topic");
        assert_eq!(cfg.model.latent_dim, 200);
        assert_eq!(cfg.vocab_path(), PathBuf::from("w/vocab.txt"));
        assert_eq!(cfg.corpus, Some(PathBuf::from("data/x.jsonl")));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::resolve(None, &["nope=1".into()]), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::resolve(None, &["hidden_dim".into()]), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::resolve(None, &["hidden_dim=0".into()]), Err(CliError::Data(_))));
        assert!(matches!(RunConfig::resolve(None, &["hidden_dim=abc".into()]), Err(CliError::Data(_))));
    }

    #[test]
    fn partition_ratios_build_slices() {
        let cfg = RunConfig::resolve(None, &["partition_ratios=50:50:100".into()]).unwrap();
        let p = cfg.model.partition.as_ref().unwrap();
        assert_eq!(p.slices().iter().map(|s| s.length).collect::<Vec<_>>(), vec![50, 50, 100]);
        assert_eq!(cfg.gold_labels(), vec!["action".to_string(), "emotion".to_string()]);
        assert_eq!(cfg.bank_path("emotion"), PathBuf::from("acvae-run/gold_bank.emotion.json"));
        assert!(RunConfig::resolve(None, &["partition_ratios=1:1".into()]).is_err());
    }
}

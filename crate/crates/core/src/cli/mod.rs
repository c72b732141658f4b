//! Command-line pipeline: prepare, pretrain-gold, train, generate,
//! evaluate, export-latent, and a synthetic-corpus generator.

mod config;

pub use config::{resolve_taxonomy, GoldSource, RunConfig};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    encode_pairs, load_corpus, read_encoded, split_holdout, synth_corpus, write_corpus, write_encoded,
    DialoguePair, LabelTaxonomy, Vocabulary,
};
use crate::gaussian::{math_gold_bank, GoldBank};
use crate::goldpretrain::{load_bank, pretrain_gold, save_bank, split_by_category, PretrainConfig};
use crate::latentmap::{export_csv, project_records, separation_ratio, LatentRecord};
use crate::metrics::{evaluate, read_predictions, train_classifier, ClassifierConfig, EvalPair, PredictionRecord};
use crate::model::{generation_noise, train, Cvae, GoldGuide, TrainStatus};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Bad input data or a failed model operation; exit code 2.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
        }
    }
}

/// Library errors that already name the offending path.
fn lib_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn data_err<E: std::fmt::Display>(ctx: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{ctx}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "acvae", version, about = "Category-guided conditional VAE for dialogue generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set hidden_dim=64`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the vocabulary, encoded train/test caches, and test contexts
    Prepare(Common),
    /// Distill one gold Gaussian per category into a bank file
    PretrainGold(Common),
    /// Train the model and write a checkpoint and per-epoch log
    Train(Common),
    /// Generate responses for a contexts file
    Generate(Common),
    /// Score generated responses
    Evaluate(Common),
    /// Write posterior means and their 2-D projection as CSV
    ExportLatent(Common),
    /// Write a synthetic labeled corpus and its taxonomy
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    categories: usize,
    #[arg(long, default_value_t = 700)]
    per_category: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// corpus output (JSON lines)
    #[arg(long)]
    out: PathBuf,
    /// taxonomy output (JSON)
    #[arg(long)]
    taxonomy: PathBuf,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("ACVAE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        // a pool already built by an earlier call in this process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let resolve = |c: &Common| RunConfig::resolve(c.config.as_deref(), &c.sets);
    match cmd {
        Command::Prepare(c) => prepare(&resolve(&c)?),
        Command::PretrainGold(c) => pretrain(&resolve(&c)?),
        Command::Train(c) => train_cmd(&resolve(&c)?),
        Command::Generate(c) => generate(&resolve(&c)?),
        Command::Evaluate(c) => evaluate_cmd(&resolve(&c)?),
        Command::ExportLatent(c) => export_latent(&resolve(&c)?),
        Command::Synth(a) => synth(&a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(data_err(dir.display()))?;
    }
    fs::write(path, bytes).map_err(data_err(path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    write_file(path, b"")
}

/// A test-set line handed to `generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContextRecord {
    context: String,
    #[serde(default)]
    reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Usage("prepare needs `corpus` (e.g. --set corpus=data.jsonl)".into()))?;
    let taxonomies = cfg
        .taxonomies
        .iter()
        .map(|s| resolve_taxonomy(s))
        .collect::<Result<Vec<_>, _>>()?;
    let exchanges = load_corpus(corpus, &taxonomies).map_err(lib_err)?;
    if exchanges.is_empty() {
        return Err(CliError::data(format!("{}: no exchanges", corpus.display())));
    }
    let vocab = Vocabulary::build(&exchanges, cfg.vocab_cap).map_err(data_err("vocabulary"))?;
    let (train_raw, test_raw) = split_holdout(&exchanges, cfg.held_out_fraction, cfg.model.seed);
    let train_pairs = encode_pairs(&train_raw, &vocab);
    let test_kept: Vec<_> = test_raw
        .iter()
        .filter(|ex| !vocab.encode(&ex.context).is_empty() && !vocab.encode(&ex.response).is_empty())
        .cloned()
        .collect();
    let test_pairs = encode_pairs(&test_kept, &vocab);

    ensure_parent(&cfg.vocab_path())?;
    vocab.save(&cfg.vocab_path()).map_err(lib_err)?;
    write_encoded(&cfg.train_pairs_path(), &train_pairs).map_err(lib_err)?;
    write_encoded(&cfg.test_pairs_path(), &test_pairs).map_err(lib_err)?;
    let tax_json = serde_json::to_string_pretty(&taxonomies).expect("taxonomies serialize") + "\n";
    write_file(&cfg.taxonomy_path(), tax_json.as_bytes())?;
    let mut lines = String::new();
    for ex in &test_kept {
        let rec = ContextRecord {
            context: ex.context.clone(),
            reference: ex.response.clone(),
            label: ex.labels.get(&cfg.model.label).copied(),
        };
        lines += &(serde_json::to_string(&rec).expect("record serializes") + "\n");
    }
    write_file(&cfg.contexts_path(), lines.as_bytes())?;
    println!(
        "prepared {} train / {} test pairs, vocabulary {} tokens",
        train_pairs.len(),
        test_pairs.len(),
        vocab.len()
    );
    Ok(())
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary, CliError> {
    Vocabulary::load(&cfg.vocab_path()).map_err(lib_err)
}

fn load_taxonomies(cfg: &RunConfig) -> Result<Vec<LabelTaxonomy>, CliError> {
    let path = cfg.taxonomy_path();
    let text = fs::read_to_string(&path).map_err(data_err(path.display()))?;
    serde_json::from_str(&text).map_err(data_err(path.display()))
}

fn num_categories(cfg: &RunConfig, label: &str) -> Result<usize, CliError> {
    load_taxonomies(cfg)?
        .iter()
        .find(|t| t.label == label)
        .map(LabelTaxonomy::num_categories)
        .ok_or_else(|| CliError::data(format!("no taxonomy for label {label:?}")))
}

fn load_pairs(path: &Path, vocab: &Vocabulary) -> Result<Vec<DialoguePair>, CliError> {
    read_encoded(path, vocab).map_err(lib_err)
}

fn pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let pairs = load_pairs(&cfg.train_pairs_path(), &vocab)?;
    for label in cfg.gold_labels() {
        let k = num_categories(cfg, &label)?;
        let bank = match cfg.gold {
            GoldSource::Math => math_gold_bank(k, cfg.model.latent_dim).map_err(data_err("gold bank"))?,
            GoldSource::Pretrained => {
                let parts = split_by_category(&pairs, &label, k).map_err(data_err("split"))?;
                let pc = PretrainConfig {
                    train: cfg.train_config(),
                    epochs: cfg.pretrain_epochs,
                    sample_size: cfg.sample_size,
                    aggregation: cfg.aggregation,
                };
                pretrain_gold(&parts, &pc, vocab.len()).map_err(data_err(format!("pretraining {label:?}")))?
            }
        };
        let path = cfg.bank_path(&label);
        ensure_parent(&path)?;
        save_bank(&bank, &path).map_err(lib_err)?;
        println!("wrote {} gold Gaussians for {label:?} to {}", bank.len(), path.display());
    }
    Ok(())
}

fn gold_guide(cfg: &RunConfig) -> Result<Option<GoldGuide>, CliError> {
    if cfg.model.lambda == 0.0 {
        return Ok(None);
    }
    let mut banks: BTreeMap<String, GoldBank> = BTreeMap::new();
    for label in cfg.gold_labels() {
        let path = cfg.bank_path(&label);
        banks.insert(label, load_bank(&path, cfg.model.latent_dim).map_err(lib_err)?);
    }
    Ok(Some(match &cfg.model.partition {
        Some(p) => GoldGuide::partitioned(p, banks).map_err(data_err("gold Gaussians"))?,
        None => {
            let (label, bank) = banks.into_iter().next().expect("one label");
            GoldGuide::single(label, bank)
        }
    }))
}

fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let pairs = load_pairs(&cfg.train_pairs_path(), &vocab)?;
    let guide = gold_guide(cfg)?;
    let report = train(&cfg.train_config(), &pairs, vocab.len(), guide.as_ref()).map_err(data_err("training"))?;
    let ckpt = cfg.checkpoint_path();
    ensure_parent(&ckpt)?;
    report.model.save(&ckpt).map_err(lib_err)?;
    write_file(&cfg.train_log_path(), report.log_json_lines().as_bytes())?;
    for e in &report.epochs {
        eprintln!(
            "epoch {:>3}  total {:.4}  recon {:.4}  prior_kl {:.4}  gold_kl {:.4}",
            e.epoch, e.total, e.recon, e.prior_kl, e.gold_kl
        );
    }
    if let TrainStatus::Aborted { epoch, step, reason } = &report.status {
        return Err(CliError::data(format!(
            "training aborted in epoch {epoch} at step {step}: {reason}; last good parameters saved to {}",
            ckpt.display()
        )));
    }
    println!("wrote checkpoint {}", ckpt.display());
    Ok(())
}

fn load_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Cvae, CliError> {
    let path = cfg.checkpoint_path();
    Cvae::load(&cfg.model, vocab.len(), &path).map_err(lib_err)
}

fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let model = load_model(cfg, &vocab)?;
    let path = cfg.contexts_path();
    let text = fs::read_to_string(&path).map_err(data_err(path.display()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ContextRecord =
            serde_json::from_str(line).map_err(data_err(format!("{} line {}", path.display(), i + 1)))?;
        records.push(rec);
    }
    let contexts: Vec<Vec<usize>> = records.iter().map(|r| vocab.encode(&r.context)).collect();
    let noise = generation_noise(cfg.model.seed, contexts.len(), model.latent_dim());
    let refs: Vec<&[usize]> = contexts.iter().map(Vec::as_slice).collect();
    let outputs = model
        .generate_many(&refs, &noise, cfg.generate_max_len, 64)
        .map_err(data_err("generation"))?;
    let mut out = String::new();
    for (rec, ids) in records.iter().zip(&outputs) {
        let line = PredictionRecord {
            context: rec.context.clone(),
            reference: rec.reference.clone(),
            generated: vocab.decode(ids),
            label: rec.label,
        };
        out += &(serde_json::to_string(&line).expect("record serializes") + "\n");
    }
    let dest = cfg.predictions_path();
    write_file(&dest, out.as_bytes())?;
    println!("wrote {} generations to {}", outputs.len(), dest.display());
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.predictions_path();
    let records = read_predictions(&path).map_err(lib_err)?;
    let pairs: Vec<EvalPair> = records.iter().map(EvalPair::from).collect();
    let vocab = load_vocab(cfg)?;
    let train_pairs = load_pairs(&cfg.train_pairs_path(), &vocab)?;
    let label = &cfg.model.label;
    let labeled = train_pairs.iter().all(|p| p.label(label).is_some()) && !train_pairs.is_empty();
    let classifier = if labeled {
        let k = num_categories(cfg, label)?;
        let cc = ClassifierConfig {
            kind: cfg.classifier,
            seed: cfg.model.seed,
            ..Default::default()
        };
        Some(train_classifier(&train_pairs, label, k, vocab.len(), &cc).map_err(data_err("classifier"))?)
    } else {
        eprintln!("training pairs carry no {label:?} label; skipping IEID");
        None
    };
    let report = evaluate(
        &pairs,
        classifier.as_ref().map(|c| (c, &vocab)),
        cfg.bootstrap_resamples,
        cfg.model.seed,
    )
    .map_err(data_err("evaluation"))?;
    let json = report.to_json();
    write_file(&cfg.report_path(), json.as_bytes())?;
    std::io::stdout().write_all(json.as_bytes()).map_err(data_err("stdout"))?;
    Ok(())
}

fn export_latent(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let model = load_model(cfg, &vocab)?;
    let path = match cfg.latent_split.as_str() {
        "test" => cfg.test_pairs_path(),
        "train" => cfg.train_pairs_path(),
        other => return Err(CliError::Usage(format!("latent_split must be test or train, got {other:?}"))),
    };
    let pairs = load_pairs(&path, &vocab)?;
    let refs: Vec<&DialoguePair> = pairs.iter().collect();
    let posts = model.posteriors(&refs).map_err(data_err("posteriors"))?;
    let mut records: Vec<LatentRecord> = pairs
        .iter()
        .zip(&posts)
        .enumerate()
        .map(|(id, (p, g))| LatentRecord {
            id,
            label: p.label(&cfg.model.label).unwrap_or(0),
            vector: g.mean().to_vec(),
            projection: None,
        })
        .collect();
    project_records(&mut records).map_err(data_err("projection"))?;
    let dest = cfg.latent_csv_path();
    ensure_parent(&dest)?;
    export_csv(&records, &dest).map_err(lib_err)?;
    let vectors: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    match separation_ratio(&vectors, &labels) {
        Ok(s) => println!("wrote {} latent rows to {}; separation ratio {s:.6}", records.len(), dest.display()),
        Err(e) => println!("wrote {} latent rows to {} ({e})", records.len(), dest.display()),
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let sc = synth_corpus(a.categories, a.per_category, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_parent(&a.out)?;
    write_corpus(&a.out, &sc.exchanges, std::slice::from_ref(&sc.taxonomy)).map_err(lib_err)?;
    ensure_parent(&a.taxonomy)?;
    sc.taxonomy.save(&a.taxonomy).map_err(lib_err)?;
    println!("wrote {} exchanges to {}", sc.exchanges.len(), a.out.display());
    Ok(())
}

//! Shared helpers for the integration tests: gradient probes for each layer
//! and the loss, plus a driver for the command-line pipeline.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use acvae::corpus::{Batch, DialoguePair};
use acvae::gaussian::{kl_parts, kl_parts_backward, math_gold_bank, LatentPartition};
use acvae::model::{generation_noise, Cvae, GoldGuide, ModelConfig};
use acvae::neural::{
    gradient_check, softmax_cross_entropy, tanh_backward, tanh_forward, Differentiable, Embedding,
    GradCheckOptions, GradCheckReport, Linear, LstmCell, LstmState, ParamId, ParamSet, Precision, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn weighted_sum(w: &Tensor, y: &Tensor) -> f64 {
    w.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn add_grad(ps: &mut ParamSet, id: ParamId, g: &Tensor) {
    ps.get_mut(id).grad.add_assign(g);
}

/// A loss built from one layer. `eval` gets a scratch copy of the
/// parameters and accumulates gradients when asked.
pub struct Probe<S> {
    pub ps: ParamSet,
    pub state: S,
    pub eval: fn(&S, &mut ParamSet, bool) -> f64,
}

impl<S> Differentiable for Probe<S> {
    fn params(&self) -> &ParamSet {
        &self.ps
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.ps
    }
    fn loss(&self) -> f64 {
        let mut ps = self.ps.clone();
        (self.eval)(&self.state, &mut ps, false)
    }
    fn loss_and_grad(&mut self) -> f64 {
        (self.eval)(&self.state, &mut self.ps, true)
    }
}

pub struct LinearTanh {
    layer: Linear,
    x: ParamId,
    w: Tensor,
}

/// `sum(w * tanh(x W^T + b))`, with `x` itself a parameter.
pub fn linear_tanh_probe(seed: u64) -> Probe<LinearTanh> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new(Precision::Wide);
    let layer = Linear::new(&mut ps, "lin", 4, 3, &mut r);
    let x = ps.add("x", random_tensor(&mut r, 5, 4));
    // nonzero bias so its gradient is exercised away from the origin
    let b = layer.bias;
    ps.get_mut(b).value = Tensor::from_vec(&[3], vec![0.3, -0.2, 0.1]).unwrap();
    let w = random_tensor(&mut r, 5, 3);
    Probe {
        ps,
        state: LinearTanh { layer, x, w },
        eval: |s, ps, grad| {
            let x = ps.value(s.x).clone();
            let pre = s.layer.forward(ps, &x).unwrap();
            let y = tanh_forward(&pre);
            if grad {
                let d_pre = tanh_backward(&y, &s.w);
                let dx = s.layer.backward(ps, &x, &d_pre);
                add_grad(ps, s.x, &dx);
            }
            weighted_sum(&s.w, &y)
        },
    }
}

pub struct EmbedSoftmax {
    emb: Embedding,
    out: Linear,
    ids: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

/// Embedding lookup (with repeated ids) into an affine map and weighted
/// softmax cross-entropy.
pub fn embedding_softmax_probe(seed: u64) -> Probe<EmbedSoftmax> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new(Precision::Wide);
    let emb = Embedding::new(&mut ps, "emb", 6, 4, &mut r);
    let out = Linear::new(&mut ps, "out", 4, 5, &mut r);
    // scale the table up so the logits are not all near zero
    let t = emb.table;
    let scaled = ps.value(t).map(|v| 10.0 * v);
    ps.get_mut(t).value = scaled;
    Probe {
        ps,
        state: EmbedSoftmax {
            emb,
            out,
            ids: vec![1, 3, 1, 0, 5],
            targets: vec![2, 0, 4, 4, 1],
            weights: vec![1.0, 0.5, 0.0, 2.0, 1.0],
        },
        eval: |s, ps, grad| {
            let e = s.emb.forward(ps, &s.ids).unwrap();
            let logits = s.out.forward(ps, &e).unwrap();
            let (loss, d_logits) = softmax_cross_entropy(&logits, &s.targets, &s.weights).unwrap();
            if grad {
                let de = s.out.backward(ps, &e, &d_logits);
                s.emb.backward(ps, &s.ids, &de);
            }
            loss
        },
    }
}

pub struct LstmProbe {
    cell: LstmCell,
    xs: Vec<ParamId>,
    h0: ParamId,
    c0: ParamId,
    lengths: Vec<usize>,
    w_out: Vec<Tensor>,
    w_h: Tensor,
    w_c: Tensor,
}

/// An LSTM over a ragged batch (lengths 4, 2, 0) whose inputs and initial
/// state are parameters, read out through every step output and the final
/// hidden and cell state.
pub fn lstm_probe(seed: u64) -> Probe<LstmProbe> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new(Precision::Wide);
    let cell = LstmCell::new(&mut ps, "lstm", 3, 4, &mut r);
    let xs = (0..4).map(|t| ps.add(format!("x{t}"), random_tensor(&mut r, 3, 3))).collect();
    let h0 = ps.add("h0", random_tensor(&mut r, 3, 4));
    let c0 = ps.add("c0", random_tensor(&mut r, 3, 4));
    let w_out = (0..4).map(|_| random_tensor(&mut r, 3, 4)).collect();
    let w_h = random_tensor(&mut r, 3, 4);
    let w_c = random_tensor(&mut r, 3, 4);
    Probe {
        ps,
        state: LstmProbe {
            cell,
            xs,
            h0,
            c0,
            lengths: vec![4, 2, 0],
            w_out,
            w_h,
            w_c,
        },
        eval: |s, ps, grad| {
            let inputs: Vec<Tensor> = s.xs.iter().map(|&id| ps.value(id).clone()).collect();
            let init = LstmState {
                h: ps.value(s.h0).clone(),
                c: ps.value(s.c0).clone(),
            };
            let run = s.cell.run(ps, &inputs, &s.lengths, init).unwrap();
            let mut loss = weighted_sum(&s.w_h, &run.last.h) + weighted_sum(&s.w_c, &run.last.c);
            for (w, y) in s.w_out.iter().zip(&run.outputs) {
                loss += weighted_sum(w, y);
            }
            if grad {
                let d_last = LstmState {
                    h: s.w_h.clone(),
                    c: s.w_c.clone(),
                };
                let (dxs, d0) = s.cell.run_backward(ps, &run, Some(&s.w_out), d_last);
                for (&id, dx) in s.xs.iter().zip(&dxs) {
                    add_grad(ps, id, dx);
                }
                add_grad(ps, s.h0, &d0.h);
                add_grad(ps, s.c0, &d0.c);
            }
            loss
        },
    }
}

pub struct KlProbe {
    ids: [ParamId; 4],
    scale: f64,
}

/// `scale * KL(p || q)` with all four moment vectors as parameters.
pub fn kl_probe(seed: u64) -> Probe<KlProbe> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new(Precision::Wide);
    let names = ["p_mean", "p_logvar", "q_mean", "q_logvar"];
    let ids = names.map(|n| {
        let v: Vec<f64> = (0..5).map(|_| r.random_range(-1.5..1.5)).collect();
        ps.add(n, Tensor::from_vec(&[5], v).unwrap())
    });
    Probe {
        ps,
        state: KlProbe { ids, scale: 0.7 },
        eval: |s, ps, grad| {
            let v: Vec<Vec<f64>> = s.ids.iter().map(|&id| ps.value(id).data().to_vec()).collect();
            let loss = s.scale * kl_parts(&v[0], &v[1], &v[2], &v[3]);
            if grad {
                let mut g = vec![vec![0.0; 5]; 4];
                let [a, b, c, d] = &mut g[..] else { unreachable!() };
                kl_parts_backward(&v[0], &v[1], &v[2], &v[3], s.scale, a, b, c, d);
                for (&id, gi) in s.ids.iter().zip(&g) {
                    add_grad(ps, id, &Tensor::from_vec(&[5], gi.clone()).unwrap());
                }
            }
            loss
        },
    }
}

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        hidden_dim: 5,
        latent_dim: 4,
        mlp_hidden: 6,
        seed,
        max_len: 8,
        label: "topic".into(),
        ..Default::default()
    }
}

pub fn pair(context: &[usize], response: &[usize], topic: usize, mood: usize) -> DialoguePair {
    let mut labels = BTreeMap::new();
    labels.insert("topic".to_string(), topic);
    labels.insert("mood".to_string(), mood);
    DialoguePair {
        context: context.to_vec(),
        response: response.to_vec(),
        labels,
    }
}

/// Random pairs over a vocabulary of `vocab` ids (content ids start at 4).
pub fn random_pairs(seed: u64, count: usize, vocab: usize, max_len: usize) -> Vec<DialoguePair> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let mut seq = |min: usize| -> Vec<usize> {
                let n = r.random_range(min..=max_len);
                (0..n).map(|_| r.random_range(4..vocab)).collect()
            };
            let c = seq(1);
            let x = seq(0);
            pair(&c, &x, r.random_range(0..3), r.random_range(0..2))
        })
        .collect()
}

/// The training objective of one fixed batch as a function of the weights.
pub struct Objective {
    pub model: Cvae,
    pub batch: Batch,
    pub gold: GoldGuide,
    pub noise: Vec<f64>,
    pub beta: f64,
    pub lambda: f64,
}

impl Differentiable for Objective {
    fn params(&self) -> &ParamSet {
        self.model.params()
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        self.model.params_mut()
    }
    fn loss(&self) -> f64 {
        self.model
            .evaluate_loss(&self.batch, Some(&self.gold), self.beta, self.lambda, &self.noise)
            .unwrap()
            .total
    }
    fn loss_and_grad(&mut self) -> f64 {
        self.model
            .loss(&self.batch, Some(&self.gold), self.beta, self.lambda, &self.noise)
            .unwrap()
            .total
    }
}

/// Tiny model on a random ragged batch. Odd seeds use a partitioned latent
/// space with two gold labels; even seeds a single bank.
pub fn objective(seed: u64) -> Objective {
    let cfg = tiny_config(seed);
    let vocab = 12;
    let model = Cvae::new(&cfg, vocab, Precision::Wide).unwrap();
    let mut pairs = random_pairs(seed, 3, vocab, 5);
    pairs[2].response.clear();
    let refs: Vec<&DialoguePair> = pairs.iter().collect();
    let gold = if seed % 2 == 1 {
        let part = LatentPartition::from_lengths(&[("common", 1), ("topic", 2), ("mood", 1)], 4).unwrap();
        let mut banks = BTreeMap::new();
        banks.insert("topic".to_string(), math_gold_bank(3, 4).unwrap());
        banks.insert("mood".to_string(), math_gold_bank(2, 4).unwrap());
        GoldGuide::partitioned(&part, banks).unwrap()
    } else {
        GoldGuide::single("topic", math_gold_bank(3, 4).unwrap())
    };
    Objective {
        model,
        batch: Batch::from_pairs(&refs, cfg.max_len),
        gold,
        noise: generation_noise(seed, 3, 4),
        beta: 0.6,
        lambda: 0.8,
    }
}

/// Worst report over every probe at `seed`, labeled by probe.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    vec![
        ("linear+tanh", gradient_check(&mut linear_tanh_probe(seed), opts)),
        ("embedding+softmax-ce", gradient_check(&mut embedding_softmax_probe(seed), opts)),
        ("lstm", gradient_check(&mut lstm_probe(seed), opts)),
        ("kl", gradient_check(&mut kl_probe(seed), opts)),
        ("full loss", gradient_check(&mut objective(seed), opts)),
    ]
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Runs the binary in `dir` and returns (exit code, stdout, stderr).
pub fn acvae(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_acvae"))
        .args(args)
        .current_dir(dir)
        .env("ACVAE_THREADS", "2")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub const PIPELINE: [&str; 6] = ["prepare", "pretrain-gold", "train", "generate", "evaluate", "export-latent"];

/// Runs the whole pipeline on the fixture corpus inside `dir`; the run
/// directory is `dir/run`.
pub fn run_pipeline(dir: &Path) -> Result<(), String> {
    let config = fixture("run.json");
    let corpus = fixture("corpus.jsonl");
    let taxonomy = fixture("taxonomy.json");
    let corpus_set = format!("corpus={}", corpus.display());
    let tax_set = format!("taxonomies=[\"{}\"]", taxonomy.display());
    for step in PIPELINE {
        let (code, _, err) = acvae(
            dir,
            &[step, "--config", config.to_str().unwrap(), "--set", &corpus_set, "--set", &tax_set, "--set", "work_dir=run"],
        );
        if code != 0 {
            return Err(format!("{step} exited {code}: {err}"));
        }
    }
    Ok(())
}

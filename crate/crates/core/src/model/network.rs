use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{Batch, DialoguePair, EOS, SOS};
use crate::gaussian::{kl_parts, kl_parts_backward, DiagonalGaussian, LOGVAR_MAX, LOGVAR_MIN};
use crate::neural::{
    read_checkpoint, softmax_cross_entropy, tanh_backward, tanh_forward, write_checkpoint,
    Embedding, Linear, LstmCell, LstmRun, LstmState, ParamSet, Precision, Tensor,
};

use super::{GoldGuide, ModelConfig, ModelError};

/// Terms of the training objective for one batch, averaged per example.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub prior_kl: f64,
    pub gold_kl: f64,
    pub beta: f64,
    pub lambda: f64,
    pub total: f64,
    /// gold KL per constrained slice; sums to `gold_kl`
    pub gold_by_slice: Vec<(String, f64)>,
}

/// Conditional VAE: context encoder, response encoder, recognition and prior
/// MLPs, and an LSTM decoder initialised from `[z; r_C]`.
#[derive(Debug, Clone)]
pub struct Cvae {
    params: ParamSet,
    vocab: usize,
    hidden: usize,
    latent: usize,
    max_len: usize,
    embed: Embedding,
    enc_in: LstmCell,
    enc_out: LstmCell,
    recog_hidden: Linear,
    recog_out: Linear,
    prior_hidden: Linear,
    prior_out: Linear,
    dec_init: Linear,
    decoder: LstmCell,
    out_proj: Linear,
}

/// Raw MLP head output split into mean and clamped log-variance.
struct Head {
    input: Tensor,
    hidden: Tensor,
    mean: Tensor,
    logvar: Tensor,
    /// pre-clamp values inside the clamp range
    live: Vec<bool>,
}

/// Activations kept from the forward pass for backpropagation.
struct Forward<'g> {
    enc: Encoded,
    post: Head,
    prior: Head,
    sigma: Tensor,
    zc: Tensor,
    h0: Tensor,
    dec_ids: Vec<Vec<usize>>,
    dec_run: LstmRun,
    stacked: Tensor,
    d_logits: Tensor,
    gold_rows: Vec<(usize, std::ops::Range<usize>, &'g DiagonalGaussian)>,
    noise: Vec<f64>,
    beta: f64,
    lambda: f64,
}

struct Encoded {
    ctx_ids: Vec<Vec<usize>>,
    ctx_run: LstmRun,
    resp_ids: Vec<Vec<usize>>,
    resp_run: LstmRun,
}

/// Column `t` of a row-major `rows x width` id matrix.
fn column(ids: &[usize], rows: usize, width: usize, t: usize) -> Vec<usize> {
    (0..rows).map(|r| ids[r * width + t]).collect()
}

fn clamp_logvar(raw: &Tensor) -> (Tensor, Vec<bool>) {
    let live = raw.data().iter().map(|&v| (LOGVAR_MIN..=LOGVAR_MAX).contains(&v)).collect();
    (raw.map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)), live)
}

impl Cvae {
    /// Fresh model; weights are drawn from the seed's `init` stream.
    pub fn new(config: &ModelConfig, vocab: usize, precision: Precision) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab < 5 {
            return Err(ModelError::Config(format!("vocabulary of {vocab} tokens is too small")));
        }
        let mut rng = crate::rng::stream(config.seed, crate::rng::INIT);
        let mut ps = ParamSet::new(precision);
        let (e, h, l, m) = (
            config.embedding_dim,
            config.hidden_dim,
            config.latent_dim,
            config.mlp_hidden,
        );
        let embed = Embedding::new(&mut ps, "embedding", vocab, e, &mut rng);
        let enc_in = LstmCell::new(&mut ps, "enc_in", e, h, &mut rng);
        let enc_out = LstmCell::new(&mut ps, "enc_out", e, h, &mut rng);
        let recog_hidden = Linear::new(&mut ps, "recognition.hidden", 2 * h, m, &mut rng);
        let recog_out = Linear::new(&mut ps, "recognition.out", m, 2 * l, &mut rng);
        let prior_hidden = Linear::new(&mut ps, "prior.hidden", h, m, &mut rng);
        let prior_out = Linear::new(&mut ps, "prior.out", m, 2 * l, &mut rng);
        let dec_init = Linear::new(&mut ps, "decoder.init", l + h, h, &mut rng);
        let decoder = LstmCell::new(&mut ps, "decoder", e, h, &mut rng);
        let out_proj = Linear::new(&mut ps, "decoder.out", h, vocab, &mut rng);
        Ok(Self {
            params: ps,
            vocab,
            hidden: h,
            latent: l,
            max_len: config.max_len,
            embed,
            enc_in,
            enc_out,
            recog_hidden,
            recog_out,
            prior_hidden,
            prior_out,
            dec_init,
            decoder,
            out_proj,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn embed_steps(&self, ids: &[Vec<usize>]) -> Result<Vec<Tensor>, ModelError> {
        ids.iter()
            .map(|col| self.embed.forward(&self.params, col).map_err(ModelError::from))
            .collect()
    }

    fn encode(&self, batch: &Batch) -> Result<Encoded, ModelError> {
        let b = batch.size;
        let ctx_ids: Vec<Vec<usize>> = (0..batch.context_width)
            .map(|t| column(&batch.context, b, batch.context_width, t))
            .collect();
        let ctx_run = self.enc_in.run(
            &self.params,
            &self.embed_steps(&ctx_ids)?,
            &batch.context_lens,
            LstmState::zeros(b, self.hidden),
        )?;
        // response words sit between SOS and EOS
        let words = batch.response_width.saturating_sub(2);
        let resp_ids: Vec<Vec<usize>> = (1..=words)
            .map(|t| column(&batch.response, b, batch.response_width, t))
            .collect();
        let word_lens: Vec<usize> = batch.response_lens.iter().map(|l| l - 2).collect();
        let resp_run = self.enc_out.run(
            &self.params,
            &self.embed_steps(&resp_ids)?,
            &word_lens,
            LstmState::zeros(b, self.hidden),
        )?;
        Ok(Encoded {
            ctx_ids,
            ctx_run,
            resp_ids,
            resp_run,
        })
    }

    /// Final encoder states `(r_C, r_X)`, one row per example.
    pub fn encode_pair(&self, batch: &Batch) -> Result<(Tensor, Tensor), ModelError> {
        let enc = self.encode(batch)?;
        Ok((enc.ctx_run.last.h, enc.resp_run.last.h))
    }

    fn head(&self, hidden: &Linear, out: &Linear, input: Tensor) -> Result<Head, ModelError> {
        let hid = tanh_forward(&hidden.forward(&self.params, &input)?);
        let raw = out.forward(&self.params, &hid)?;
        let (mean, raw_lv) = raw.hsplit(self.latent);
        let (logvar, live) = clamp_logvar(&raw_lv);
        Ok(Head {
            input,
            hidden: hid,
            mean,
            logvar,
            live,
        })
    }

    fn head_backward(
        &mut self,
        which: HeadKind,
        head: &Head,
        d_mean: &Tensor,
        d_logvar: &Tensor,
    ) -> Tensor {
        let mut d_lv = d_logvar.clone();
        for (g, &live) in d_lv.data_mut().iter_mut().zip(&head.live) {
            if !live {
                *g = 0.0;
            }
        }
        let d_raw = Tensor::hcat(d_mean, &d_lv);
        let (hidden, out) = match which {
            HeadKind::Recognition => (&self.recog_hidden, &self.recog_out),
            HeadKind::Prior => (&self.prior_hidden, &self.prior_out),
        };
        let d_hid = out.backward(&mut self.params, &head.hidden, &d_raw);
        let d_pre = tanh_backward(&head.hidden, &d_hid);
        hidden.backward(&mut self.params, &head.input, &d_pre)
    }

    fn recognition_head(&self, r_x: &Tensor, r_c: &Tensor) -> Result<Head, ModelError> {
        self.head(&self.recog_hidden, &self.recog_out, Tensor::hcat(r_x, r_c))
    }

    fn prior_head(&self, r_c: &Tensor) -> Result<Head, ModelError> {
        self.head(&self.prior_hidden, &self.prior_out, r_c.clone())
    }

    /// Posterior `q(z | X, C)` per row.
    pub fn recognition(&self, r_x: &Tensor, r_c: &Tensor) -> Result<Vec<DiagonalGaussian>, ModelError> {
        let h = self.recognition_head(r_x, r_c)?;
        rows_to_gaussians(&h.mean, &h.logvar)
    }

    /// Prior `p(z | C)` per row.
    pub fn prior(&self, r_c: &Tensor) -> Result<Vec<DiagonalGaussian>, ModelError> {
        let h = self.prior_head(r_c)?;
        rows_to_gaussians(&h.mean, &h.logvar)
    }

    fn check_noise(&self, rows: usize, noise: &[f64]) -> Result<(), ModelError> {
        if noise.len() != rows * self.latent {
            return Err(ModelError::Config(format!(
                "noise has {} values, expected {rows} x {}",
                noise.len(),
                self.latent
            )));
        }
        Ok(())
    }

    /// Forward and backward pass of the objective on one batch. Gradients are
    /// accumulated into the parameter set; `noise` is `batch x latent`.
    pub fn loss(
        &mut self,
        batch: &Batch,
        gold: Option<&GoldGuide>,
        beta: f64,
        lambda: f64,
        noise: &[f64],
    ) -> Result<LossBreakdown, ModelError> {
        let (breakdown, cache) = self.forward(batch, gold, beta, lambda, noise)?;
        self.backward(cache);
        Ok(breakdown)
    }

    /// The objective without touching gradients.
    pub fn evaluate_loss(
        &self,
        batch: &Batch,
        gold: Option<&GoldGuide>,
        beta: f64,
        lambda: f64,
        noise: &[f64],
    ) -> Result<LossBreakdown, ModelError> {
        Ok(self.forward(batch, gold, beta, lambda, noise)?.0)
    }

    fn forward<'g>(
        &self,
        batch: &Batch,
        gold: Option<&'g GoldGuide>,
        beta: f64,
        lambda: f64,
        noise: &[f64],
    ) -> Result<(LossBreakdown, Forward<'g>), ModelError> {
        let (b, l, h) = (batch.size, self.latent, self.hidden);
        if b == 0 {
            return Err(ModelError::EmptyCorpus);
        }
        self.check_noise(b, noise)?;
        let gold = if lambda > 0.0 {
            let g = gold.ok_or_else(|| ModelError::Config("lambda > 0 needs gold Gaussians".into()))?;
            g.check_dim(l)?;
            Some(g)
        } else {
            None
        };
        let scale = 1.0 / b as f64;

        // encoders, posterior, prior
        let enc = self.encode(batch)?;
        let r_c = enc.ctx_run.last.h.clone();
        let r_x = enc.resp_run.last.h.clone();
        let post = self.recognition_head(&r_x, &r_c)?;
        let prior = self.prior_head(&r_c)?;

        // z = mu + sigma * eps
        let sigma = post.logvar.map(|v| (0.5 * v).exp());
        let mut z = post.mean.clone();
        for ((zi, si), ei) in z.data_mut().iter_mut().zip(sigma.data()).zip(noise) {
            *zi += si * ei;
        }

        // decoder, teacher forced over [SOS, x_1 .. x_n] predicting [x_1 .. x_n, EOS]
        let zc = Tensor::hcat(&z, &r_c);
        let h0 = tanh_forward(&self.dec_init.forward(&self.params, &zc)?);
        let steps = batch.response_width - 1;
        let dec_ids: Vec<Vec<usize>> = (0..steps)
            .map(|t| column(&batch.response, b, batch.response_width, t))
            .collect();
        let dec_lens: Vec<usize> = batch.response_lens.iter().map(|l| l - 1).collect();
        let init = LstmState {
            h: h0.clone(),
            c: Tensor::zeros(&[b, h]),
        };
        let dec_run = self.decoder.run(&self.params, &self.embed_steps(&dec_ids)?, &dec_lens, init)?;
        let mut stacked = Vec::with_capacity(steps * b * h);
        let mut targets = Vec::with_capacity(steps * b);
        let mut weights = Vec::with_capacity(steps * b);
        for t in 0..steps {
            stacked.extend_from_slice(dec_run.outputs[t].data());
            for (r, &len) in dec_lens.iter().enumerate() {
                targets.push(batch.response[r * batch.response_width + t + 1]);
                weights.push(if t < len { 1.0 } else { 0.0 });
            }
        }
        let stacked = Tensor::matrix(steps * b, h, stacked);
        let logits = self.out_proj.forward(&self.params, &stacked)?;
        let (ce, d_logits) = softmax_cross_entropy(&logits, &targets, &weights)?;
        let reconstruction = ce * scale;

        // KL(posterior || prior)
        let mut prior_kl = 0.0;
        for r in 0..b {
            prior_kl += kl_parts(post.mean.row(r), post.logvar.row(r), prior.mean.row(r), prior.logvar.row(r));
        }
        prior_kl *= scale;

        // KL(gold_k || posterior), per constrained slice
        let mut gold_by_slice = Vec::new();
        let mut gold_rows: Vec<(usize, std::ops::Range<usize>, &DiagonalGaussian)> = Vec::new();
        if let Some(guide) = gold {
            for term in guide.terms() {
                let ids = batch
                    .label_ids(&term.label)
                    .ok_or_else(|| ModelError::MissingLabel(term.label.clone()))?;
                let mut sum = 0.0;
                for (r, &k) in ids.iter().enumerate() {
                    let g = term.bank.get(k).map_err(|_| ModelError::MissingCategory {
                        label: term.label.clone(),
                        category: k,
                    })?;
                    let rg = term.range.clone();
                    sum += kl_parts(
                        &g.mean()[rg.clone()],
                        &g.logvar()[rg.clone()],
                        &post.mean.row(r)[rg.clone()],
                        &post.logvar.row(r)[rg.clone()],
                    );
                    gold_rows.push((r, rg, g));
                }
                gold_by_slice.push((term.slice.clone(), sum * scale));
            }
        }
        let gold_kl: f64 = gold_by_slice.iter().map(|(_, v)| v).sum();
        let total = reconstruction + beta * prior_kl + lambda * gold_kl;
        let breakdown = LossBreakdown {
            reconstruction,
            prior_kl,
            gold_kl,
            beta,
            lambda,
            total,
            gold_by_slice,
        };
        let cache = Forward {
            enc,
            post,
            prior,
            sigma,
            zc,
            h0,
            dec_ids,
            dec_run,
            stacked,
            d_logits,
            gold_rows,
            noise: noise.to_vec(),
            beta,
            lambda,
        };
        Ok((breakdown, cache))
    }

    fn backward(&mut self, f: Forward<'_>) {
        let Forward {
            enc,
            post,
            prior,
            sigma,
            zc,
            h0,
            dec_ids,
            dec_run,
            stacked,
            d_logits,
            gold_rows,
            noise,
            beta,
            lambda,
        } = f;
        let (b, l, h) = (post.mean.rows(), self.latent, self.hidden);
        let scale = 1.0 / b as f64;
        let steps = dec_ids.len();

        // reconstruction gradient back to the decoder
        let d_logits = d_logits.map(|g| g * scale);
        let d_stacked = self.out_proj.backward(&mut self.params, &stacked, &d_logits);
        let d_outputs: Vec<Tensor> = (0..steps)
            .map(|t| Tensor::matrix(b, h, d_stacked.data()[t * b * h..(t + 1) * b * h].to_vec()))
            .collect();
        let (d_emb, d_init) = self.decoder.run_backward(
            &mut self.params,
            &dec_run,
            Some(&d_outputs),
            LstmState::zeros(b, h),
        );
        for (ids, d) in dec_ids.iter().zip(&d_emb) {
            self.embed.backward(&mut self.params, ids, d);
        }
        let d_pre = tanh_backward(&h0, &d_init.h);
        let d_zc = self.dec_init.backward(&mut self.params, &zc, &d_pre);
        let (d_z, mut d_rc) = d_zc.hsplit(l);

        // through the reparameterisation
        let mut d_post_mean = d_z.clone();
        let mut d_post_lv = Tensor::zeros(&[b, l]);
        for (((g, dz), e), sd) in d_post_lv.data_mut().iter_mut().zip(d_z.data()).zip(&noise).zip(sigma.data()) {
            *g = dz * e * 0.5 * sd;
        }

        let mut d_prior_mean = Tensor::zeros(&[b, l]);
        let mut d_prior_lv = Tensor::zeros(&[b, l]);
        if beta != 0.0 {
            for r in 0..b {
                kl_parts_backward(
                    post.mean.row(r),
                    post.logvar.row(r),
                    prior.mean.row(r),
                    prior.logvar.row(r),
                    beta * scale,
                    d_post_mean.row_mut(r),
                    d_post_lv.row_mut(r),
                    d_prior_mean.row_mut(r),
                    d_prior_lv.row_mut(r),
                );
            }
        }
        if lambda != 0.0 {
            let mut sink_m = vec![0.0; l];
            let mut sink_v = vec![0.0; l];
            for (r, rg, g) in &gold_rows {
                let n = rg.len();
                kl_parts_backward(
                    &g.mean()[rg.clone()],
                    &g.logvar()[rg.clone()],
                    &post.mean.row(*r)[rg.clone()],
                    &post.logvar.row(*r)[rg.clone()],
                    lambda * scale,
                    &mut sink_m[..n],
                    &mut sink_v[..n],
                    &mut d_post_mean.row_mut(*r)[rg.clone()],
                    &mut d_post_lv.row_mut(*r)[rg.clone()],
                );
            }
        }

        let d_recog_in = self.head_backward(HeadKind::Recognition, &post, &d_post_mean, &d_post_lv);
        let d_rc_prior = self.head_backward(HeadKind::Prior, &prior, &d_prior_mean, &d_prior_lv);
        let (d_rx, d_rc_recog) = d_recog_in.hsplit(h);
        d_rc.add_assign(&d_rc_recog);
        d_rc.add_assign(&d_rc_prior);

        let (d_emb, _) = self.enc_out.run_backward(
            &mut self.params,
            &enc.resp_run,
            None,
            LstmState {
                h: d_rx,
                c: Tensor::zeros(&[b, h]),
            },
        );
        for (ids, d) in enc.resp_ids.iter().zip(&d_emb) {
            self.embed.backward(&mut self.params, ids, d);
        }
        let (d_emb, _) = self.enc_in.run_backward(
            &mut self.params,
            &enc.ctx_run,
            None,
            LstmState {
                h: d_rc,
                c: Tensor::zeros(&[b, h]),
            },
        );
        for (ids, d) in enc.ctx_ids.iter().zip(&d_emb) {
            self.embed.backward(&mut self.params, ids, d);
        }
    }

    /// Greedy decoding from the prior for a set of contexts, run in
    /// lockstep. `noise` is `contexts x latent`; each output holds at most
    /// `max_len` tokens and excludes EOS.
    pub fn generate_batch(
        &self,
        contexts: &[&[usize]],
        noise: &[f64],
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>, ModelError> {
        let b = contexts.len();
        if b == 0 {
            return Ok(Vec::new());
        }
        self.check_noise(b, noise)?;
        let (r_c, _) = self.encode_pair(&context_batch(contexts, self.max_len))?;
        let mut state = self.prior_decoder_state(&r_c, noise)?;
        let mut prev = vec![SOS; b];
        let mut done = vec![false; b];
        let mut out = vec![Vec::new(); b];
        for _ in 0..max_len {
            let lens: Vec<usize> = done.iter().map(|&d| usize::from(!d)).collect();
            let x = self.embed.forward(&self.params, &prev)?;
            state = self.decoder.run(&self.params, &[x], &lens, state)?.last;
            let logits = self.out_proj.forward(&self.params, &state.h)?;
            for r in 0..b {
                if done[r] {
                    continue;
                }
                let row = logits.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                if best == EOS {
                    done[r] = true;
                } else {
                    out[r].push(best);
                    prev[r] = best;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }

    /// Decoder logits for the first output token given each context, with
    /// `z` drawn from the prior using `noise` (`contexts x latent`).
    pub fn first_token_logits(&self, contexts: &[&[usize]], noise: &[f64]) -> Result<Tensor, ModelError> {
        let b = contexts.len();
        self.check_noise(b, noise)?;
        let (r_c, _) = self.encode_pair(&context_batch(contexts, self.max_len))?;
        let h0 = self.prior_decoder_state(&r_c, noise)?;
        let x = self.embed.forward(&self.params, &vec![SOS; b])?;
        let state = self.decoder.run(&self.params, &[x], &vec![1; b], h0)?.last;
        Ok(self.out_proj.forward(&self.params, &state.h)?)
    }

    fn prior_decoder_state(&self, r_c: &Tensor, noise: &[f64]) -> Result<LstmState, ModelError> {
        let prior = self.prior_head(r_c)?;
        let mut z = prior.mean.clone();
        for ((zi, lv), e) in z.data_mut().iter_mut().zip(prior.logvar.data()).zip(noise) {
            *zi += (0.5 * lv).exp() * e;
        }
        let h0 = tanh_forward(&self.dec_init.forward(&self.params, &Tensor::hcat(&z, r_c))?);
        Ok(LstmState {
            h: h0,
            c: Tensor::zeros(&[r_c.rows(), self.hidden]),
        })
    }

    /// Greedy response for one context with prior noise `noise` (`latent` values).
    pub fn generate(&self, context: &[usize], noise: &[f64], max_len: usize) -> Result<Vec<usize>, ModelError> {
        Ok(self.generate_batch(&[context], noise, max_len)?.remove(0))
    }

    /// Generates in parallel chunks; output order follows `contexts`.
    pub fn generate_many(
        &self,
        contexts: &[&[usize]],
        noise: &[f64],
        max_len: usize,
        chunk: usize,
    ) -> Result<Vec<Vec<usize>>, ModelError> {
        self.check_noise(contexts.len(), noise)?;
        let chunk = chunk.max(1);
        let parts: Result<Vec<Vec<Vec<usize>>>, ModelError> = contexts
            .par_chunks(chunk)
            .zip(noise.par_chunks(chunk * self.latent))
            .map(|(c, n)| self.generate_batch(c, n, max_len))
            .collect();
        Ok(parts?.into_iter().flatten().collect())
    }

    /// Posterior Gaussians for the given pairs, in order.
    pub fn posteriors(&self, pairs: &[&DialoguePair]) -> Result<Vec<DiagonalGaussian>, ModelError> {
        let parts: Result<Vec<Vec<DiagonalGaussian>>, ModelError> = pairs
            .par_chunks(64)
            .map(|chunk| {
                let batch = Batch::from_pairs(chunk, self.max_len);
                let (r_c, r_x) = self.encode_pair(&batch)?;
                self.recognition(&r_x, &r_c)
            })
            .collect();
        Ok(parts?.into_iter().flatten().collect())
    }

    /// Posterior mean for one pair (no sampling).
    pub fn encode_latent(&self, pair: &DialoguePair) -> Result<Vec<f64>, ModelError> {
        let g = self.posteriors(&[pair])?.remove(0);
        Ok(g.mean().to_vec())
    }

    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<(), ModelError> {
        Ok(write_checkpoint(&self.params, out)?)
    }

    /// Loads weights and optimizer state into a model built from `config`.
    pub fn read_checkpoint<R: Read>(
        config: &ModelConfig,
        vocab: usize,
        input: R,
    ) -> Result<Self, ModelError> {
        let entries = read_checkpoint(input)?;
        let mut model = Self::new(config, vocab, Precision::Single)?;
        model.params.restore(&entries)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path).map_err(|e| ModelError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| ModelError::io(path, e))
    }

    pub fn load(config: &ModelConfig, vocab: usize, path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path).map_err(|e| ModelError::io(path, e))?;
        Self::read_checkpoint(config, vocab, std::io::BufReader::new(file))
    }
}

/// A batch holding only contexts (empty responses).
fn context_batch(contexts: &[&[usize]], max_len: usize) -> Batch {
    let pairs: Vec<DialoguePair> = contexts
        .iter()
        .map(|c| DialoguePair {
            context: c.to_vec(),
            response: Vec::new(),
            labels: Default::default(),
        })
        .collect();
    let refs: Vec<&DialoguePair> = pairs.iter().collect();
    Batch::from_pairs(&refs, max_len)
}

#[derive(Clone, Copy)]
enum HeadKind {
    Recognition,
    Prior,
}

fn rows_to_gaussians(mean: &Tensor, logvar: &Tensor) -> Result<Vec<DiagonalGaussian>, ModelError> {
    (0..mean.rows())
        .map(|r| DiagonalGaussian::new(mean.row(r).to_vec(), logvar.row(r).to_vec()).map_err(ModelError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{math_gold_bank, LatentPartition};
    use crate::neural::{gradient_check, Differentiable, GradCheckOptions};
    use std::collections::BTreeMap;

    fn tiny_config(seed: u64) -> ModelConfig {
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

    fn pair(context: &[usize], response: &[usize], topic: usize) -> DialoguePair {
        let mut labels = BTreeMap::new();
        labels.insert("topic".to_string(), topic);
        labels.insert("mood".to_string(), 1 - topic.min(1));
        DialoguePair {
            context: context.to_vec(),
            response: response.to_vec(),
            labels,
        }
    }

    fn sample_pairs() -> Vec<DialoguePair> {
        vec![
            pair(&[4, 5, 6], &[7, 8], 0),
            pair(&[9, 4], &[10, 11, 5], 1),
            pair(&[6], &[], 2),
        ]
    }

    fn noise_for(rows: usize, latent: usize, seed: u64) -> Vec<f64> {
        let mut n = vec![0.0; rows * latent];
        super::super::train::fill_normal(&mut crate::rng::stream(seed, "test-noise"), &mut n);
        n
    }

    struct Objective {
        model: Cvae,
        batch: Batch,
        gold: GoldGuide,
        noise: Vec<f64>,
        beta: f64,
        lambda: f64,
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

    fn objective(seed: u64) -> Objective {
        let cfg = tiny_config(seed);
        let model = Cvae::new(&cfg, 12, Precision::Wide).unwrap();
        let pairs = sample_pairs();
        let refs: Vec<&DialoguePair> = pairs.iter().collect();
        Objective {
            model,
            batch: Batch::from_pairs(&refs, cfg.max_len),
            gold: GoldGuide::single("topic", math_gold_bank(3, 4).unwrap()),
            noise: noise_for(3, 4, seed),
            beta: 0.7,
            lambda: 0.9,
        }
    }

    #[test]
    fn full_objective_gradient_check() {
        let mut obj = objective(3);
        let report = gradient_check(&mut obj, GradCheckOptions::default());
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.coords_checked, obj.model.params().num_values());
    }

    #[test]
    fn bookkeeping_identity_and_term_signs() {
        let mut obj = objective(5);
        let l = obj
            .model
            .loss(&obj.batch, Some(&obj.gold), 0.3, 2.0, &obj.noise)
            .unwrap();
        assert_eq!(l.total, l.reconstruction + l.beta * l.prior_kl + l.lambda * l.gold_kl);
        assert!(l.prior_kl >= 0.0 && l.gold_kl >= 0.0 && l.reconstruction > 0.0);
        let base = obj.model.evaluate_loss(&obj.batch, None, 0.0, 0.0, &obj.noise).unwrap();
        assert_eq!(base.total, base.reconstruction);
        assert_eq!(base.reconstruction, l.reconstruction);
    }

    #[test]
    fn zero_weights_give_zero_features_and_standard_gaussians() {
        let mut obj = objective(1);
        for p in obj.model.params_mut().iter_mut() {
            p.value.fill(0.0);
        }
        let (r_c, r_x) = obj.model.encode_pair(&obj.batch).unwrap();
        assert!(r_c.data().iter().chain(r_x.data()).all(|&v| v == 0.0));
        assert_eq!(r_c.cols(), 5);
        for g in obj.model.recognition(&r_x, &r_c).unwrap().iter().chain(&obj.model.prior(&r_c).unwrap()) {
            assert_eq!(g, &DiagonalGaussian::standard(4));
        }
    }

    #[test]
    fn features_follow_row_permutation() {
        let obj = objective(2);
        let pairs = sample_pairs();
        let rev: Vec<&DialoguePair> = pairs.iter().rev().collect();
        let (c1, x1) = obj.model.encode_pair(&obj.batch).unwrap();
        let (c2, x2) = obj.model.encode_pair(&Batch::from_pairs(&rev, 8)).unwrap();
        for r in 0..3 {
            assert_eq!(c1.row(r), c2.row(2 - r));
            assert_eq!(x1.row(r), x2.row(2 - r));
        }
    }

    #[test]
    fn prior_and_generation_ignore_the_response() {
        let obj = objective(4);
        let a = pair(&[4, 5], &[7], 0);
        let b = pair(&[4, 5], &[10, 11, 9, 8], 0);
        let (ca, _) = obj.model.encode_pair(&Batch::from_pairs(&[&a], 8)).unwrap();
        let (cb, _) = obj.model.encode_pair(&Batch::from_pairs(&[&b], 8)).unwrap();
        assert_eq!(obj.model.prior(&ca).unwrap(), obj.model.prior(&cb).unwrap());
        let eps = noise_for(1, 4, 9);
        let g1 = obj.model.generate(&a.context, &eps, 6).unwrap();
        assert_eq!(g1, obj.model.generate(&b.context, &eps, 6).unwrap());
        assert!(g1.len() <= 6);
    }

    #[test]
    fn eos_first_gives_empty_response() {
        let mut obj = objective(6);
        let bias = obj.model.out_proj.bias;
        let w = obj.model.out_proj.weight;
        obj.model.params_mut().get_mut(w).value.fill(0.0);
        obj.model.params_mut().get_mut(bias).value.data_mut()[EOS] = 5.0;
        assert!(obj.model.generate(&[4, 5], &[0.0; 4], 10).unwrap().is_empty());
    }

    #[test]
    fn batched_generation_matches_single() {
        let obj = objective(7);
        let contexts: Vec<&[usize]> = vec![&[4, 5, 6], &[9], &[6, 6, 6, 6]];
        let eps = noise_for(3, 4, 2);
        let many = obj.model.generate_many(&contexts, &eps, 5, 2).unwrap();
        for (i, c) in contexts.iter().enumerate() {
            assert_eq!(many[i], obj.model.generate(c, &eps[i * 4..(i + 1) * 4], 5).unwrap());
        }
    }

    #[test]
    fn encode_latent_is_recognition_mean() {
        let obj = objective(8);
        let p = sample_pairs();
        let (r_c, r_x) = obj.model.encode_pair(&Batch::from_pairs(&[&p[1]], 8)).unwrap();
        let post = obj.model.recognition(&r_x, &r_c).unwrap();
        assert_eq!(obj.model.encode_latent(&p[1]).unwrap(), post[0].mean());
        assert_eq!(obj.model.encode_latent(&p[1]).unwrap().len(), 4);
    }

    #[test]
    fn partitioned_gold_terms_sum_and_check_gradients() {
        let mut obj = objective(9);
        let part = LatentPartition::from_lengths(&[("common", 1), ("topic", 2), ("mood", 1)], 4).unwrap();
        let mut banks = BTreeMap::new();
        banks.insert("topic".to_string(), math_gold_bank(3, 4).unwrap());
        banks.insert("mood".to_string(), math_gold_bank(2, 4).unwrap());
        obj.gold = GoldGuide::partitioned(&part, banks).unwrap();
        let l = obj.model.evaluate_loss(&obj.batch, Some(&obj.gold), 1.0, 1.0, &obj.noise).unwrap();
        assert_eq!(l.gold_by_slice.len(), 2);
        let sum: f64 = l.gold_by_slice.iter().map(|(_, v)| v).sum();
        assert!((sum - l.gold_kl).abs() < 1e-10);
        let report = gradient_check(&mut obj, GradCheckOptions::default());
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn missing_gold_category_is_named() {
        let mut obj = objective(10);
        obj.gold = GoldGuide::single("topic", math_gold_bank(2, 4).unwrap());
        let err = obj.model.evaluate_loss(&obj.batch, Some(&obj.gold), 1.0, 1.0, &obj.noise).unwrap_err();
        assert!(err.to_string().contains("category 2"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let cfg = tiny_config(11);
        let model = Cvae::new(&cfg, 12, Precision::Single).unwrap();
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf).unwrap();
        let back = Cvae::read_checkpoint(&cfg, 12, buf.as_slice()).unwrap();
        for p in sample_pairs() {
            assert_eq!(model.encode_latent(&p).unwrap(), back.encode_latent(&p).unwrap());
        }
        assert!(Cvae::read_checkpoint(&cfg, 13, buf.as_slice()).is_err());
    }
}

use rand::Rng;

use super::tensor::{accumulate_tn, axpy, matmul_nn, matmul_nt};
use super::{NeuralError, ParamId, ParamSet, Tensor};

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn expect_cols(layer: &str, x: &Tensor, cols: usize) -> Result<(), NeuralError> {
    if x.shape().len() != 2 || x.cols() != cols {
        return Err(NeuralError::shape(
            layer,
            format!("expected rows x {cols}, got {:?}", x.shape()),
        ));
    }
    Ok(())
}

/// Token embedding table `vocab x dim`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let table = ps.add_uniform(format!("{name}.table"), &[vocab, dim], 0.1, rng);
        Self { table, vocab, dim }
    }

    pub fn forward(&self, ps: &ParamSet, ids: &[usize]) -> Result<Tensor, NeuralError> {
        let table = ps.value(self.table);
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id >= self.vocab {
                return Err(NeuralError::shape(
                    "embedding",
                    format!("token id {id} >= vocabulary size {}", self.vocab),
                ));
            }
            out.extend_from_slice(table.row(id));
        }
        Ok(Tensor::matrix(ids.len(), self.dim, out))
    }

    pub fn backward(&self, ps: &mut ParamSet, ids: &[usize], d_out: &Tensor) {
        let grad = &mut ps.get_mut(self.table).grad;
        for (r, &id) in ids.iter().enumerate() {
            axpy(1.0, d_out.row(r), grad.row_mut(id));
        }
    }
}

/// Affine map `y = x W^T + b`, `W: fan_out x fan_in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
    name: String,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let weight = ps.add_uniform(
            format!("{name}.weight"),
            &[fan_out, fan_in],
            glorot(fan_in, fan_out),
            rng,
        );
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> Result<Tensor, NeuralError> {
        expect_cols(&self.name, x, self.fan_in)?;
        let rows = x.rows();
        let mut y = matmul_nt(x.data(), rows, self.fan_in, ps.value(self.weight).data(), self.fan_out);
        let b = ps.value(self.bias).data();
        for r in 0..rows {
            axpy(1.0, b, &mut y[r * self.fan_out..(r + 1) * self.fan_out]);
        }
        Ok(Tensor::matrix(rows, self.fan_out, y))
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, ps: &mut ParamSet, x: &Tensor, dy: &Tensor) -> Tensor {
        let rows = x.rows();
        {
            let g = &mut ps.get_mut(self.weight).grad;
            accumulate_tn(dy.data(), x.data(), rows, self.fan_out, self.fan_in, g.data_mut());
        }
        {
            let gb = ps.get_mut(self.bias).grad.data_mut();
            for r in 0..rows {
                axpy(1.0, dy.row(r), gb);
            }
        }
        let dx = matmul_nn(dy.data(), rows, self.fan_out, ps.value(self.weight).data(), self.fan_in);
        Tensor::matrix(rows, self.fan_in, dx)
    }
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Backward of `y = tanh(x)` given the output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(y, g)| g * (1.0 - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// `sum_r weight_r * -log softmax(logits_r)[target_r]` and its gradient
/// with respect to the logits. Rows with weight 0 are ignored.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor), NeuralError> {
    let (rows, cols) = (logits.rows(), logits.cols());
    if targets.len() != rows || weights.len() != rows {
        return Err(NeuralError::shape(
            "softmax-cross-entropy",
            format!("{rows} logit rows, {} targets, {} weights", targets.len(), weights.len()),
        ));
    }
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for r in 0..rows {
        let w = weights[r];
        let row = grad.row_mut(r);
        if w == 0.0 {
            row.iter_mut().for_each(|x| *x = 0.0);
            continue;
        }
        let t = targets[r];
        if t >= cols {
            return Err(NeuralError::shape(
                "softmax-cross-entropy",
                format!("target {t} >= {cols} classes"),
            ));
        }
        let lrow = logits.row(r);
        let max = lrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lrow.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += w * (lse - lrow[t]);
        row[t] -= 1.0;
        row.iter_mut().for_each(|x| *x *= w);
    }
    Ok((loss, grad))
}

/// Hidden and cell state, each `batch x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }
}

/// Gated recurrent cell with input, forget, and output gates.
///
/// Gate pre-activations are packed `[i, f, g, o]` along the `4 * hidden` axis.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
    name: String,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    /// activated gates, `batch x 4H`
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    active: Vec<bool>,
}

/// Result of running a cell over a padded sequence.
#[derive(Debug, Clone)]
pub struct LstmRun {
    /// hidden state after every step (carried over for finished rows)
    pub outputs: Vec<Tensor>,
    pub last: LstmState,
    caches: Vec<StepCache>,
}

impl LstmCell {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let a = glorot(input + hidden, 4 * hidden);
        let w_ih = ps.add_uniform(format!("{name}.w_ih"), &[4 * hidden, input], a, rng);
        let w_hh = ps.add_uniform(format!("{name}.w_hh"), &[4 * hidden, hidden], a, rng);
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let bias = ps.add(format!("{name}.bias"), Tensor::from_vec(&[4 * hidden], b).unwrap());
        Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
            name: name.to_string(),
        }
    }

    fn step(
        &self,
        ps: &ParamSet,
        x: &Tensor,
        state: &LstmState,
        active: Vec<bool>,
    ) -> Result<(LstmState, StepCache), NeuralError> {
        expect_cols(&self.name, x, self.input)?;
        expect_cols(&self.name, &state.h, self.hidden)?;
        let (b, h) = (x.rows(), self.hidden);
        if state.h.rows() != b || active.len() != b {
            return Err(NeuralError::shape(
                &self.name,
                format!("batch {b} vs state {} / mask {}", state.h.rows(), active.len()),
            ));
        }
        let mut gates = matmul_nt(x.data(), b, self.input, ps.value(self.w_ih).data(), 4 * h);
        let rec = matmul_nt(state.h.data(), b, h, ps.value(self.w_hh).data(), 4 * h);
        let bias = ps.value(self.bias).data();
        let mut h_new = state.h.clone();
        let mut c_new = state.c.clone();
        let mut tanh_c = vec![0.0; b * h];
        for r in 0..b {
            let g = &mut gates[r * 4 * h..(r + 1) * 4 * h];
            let rr = &rec[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..4 * h {
                let pre = g[j] + rr[j] + bias[j];
                g[j] = if (2 * h..3 * h).contains(&j) { pre.tanh() } else { sigmoid(pre) };
            }
            if !active[r] {
                continue;
            }
            let cp = state.c.row(r);
            let cn = c_new.row_mut(r);
            for j in 0..h {
                cn[j] = g[h + j] * cp[j] + g[j] * g[2 * h + j];
            }
            let hn = h_new.row_mut(r);
            for j in 0..h {
                let t = cn[j].tanh();
                tanh_c[r * h + j] = t;
                hn[j] = g[3 * h + j] * t;
            }
        }
        let cache = StepCache {
            x: x.clone(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            tanh_c,
            active,
        };
        Ok((LstmState { h: h_new, c: c_new }, cache))
    }

    /// Returns `(dx, dh_prev, dc_prev)`.
    fn step_backward(
        &self,
        ps: &mut ParamSet,
        cache: &StepCache,
        dh: &Tensor,
        dc: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let (b, h) = (cache.x.rows(), self.hidden);
        let mut d_pre = vec![0.0; b * 4 * h];
        let mut dh_prev = dh.clone();
        let mut dc_prev = dc.clone();
        for r in 0..b {
            if !cache.active[r] {
                continue;
            }
            let g = &cache.gates[r * 4 * h..(r + 1) * 4 * h];
            let dp = &mut d_pre[r * 4 * h..(r + 1) * 4 * h];
            let cp = cache.c_prev.row(r);
            let dhr = dh.row(r);
            let dcr = dc.row(r);
            let dcp = dc_prev.row_mut(r);
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let t = cache.tanh_c[r * h + j];
                let d_o = dhr[j] * t;
                let d_c = dcr[j] + dhr[j] * o * (1.0 - t * t);
                dp[j] = d_c * gg * i * (1.0 - i);
                dp[h + j] = d_c * cp[j] * f * (1.0 - f);
                dp[2 * h + j] = d_c * i * (1.0 - gg * gg);
                dp[3 * h + j] = d_o * o * (1.0 - o);
                dcp[j] = d_c * f;
            }
            dh_prev.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
        }
        accumulate_tn(&d_pre, cache.x.data(), b, 4 * h, self.input, ps.get_mut(self.w_ih).grad.data_mut());
        accumulate_tn(&d_pre, cache.h_prev.data(), b, 4 * h, h, ps.get_mut(self.w_hh).grad.data_mut());
        {
            let gb = ps.get_mut(self.bias).grad.data_mut();
            for r in 0..b {
                axpy(1.0, &d_pre[r * 4 * h..(r + 1) * 4 * h], gb);
            }
        }
        let dx = matmul_nn(&d_pre, b, 4 * h, ps.value(self.w_ih).data(), self.input);
        let dh_rec = matmul_nn(&d_pre, b, 4 * h, ps.value(self.w_hh).data(), h);
        // finished rows pass dh straight through; active rows take the recurrent term
        axpy(1.0, &dh_rec, dh_prev.data_mut());
        (Tensor::matrix(b, self.input, dx), dh_prev, dc_prev)
    }

    /// Runs over `inputs` (one `batch x input` matrix per step). Row `r`
    /// advances only while `t < lengths[r]`; finished rows carry their state.
    pub fn run(
        &self,
        ps: &ParamSet,
        inputs: &[Tensor],
        lengths: &[usize],
        init: LstmState,
    ) -> Result<LstmRun, NeuralError> {
        let mut state = init;
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let active = lengths.iter().map(|&l| t < l).collect();
            let (next, cache) = self.step(ps, x, &state, active)?;
            outputs.push(next.h.clone());
            caches.push(cache);
            state = next;
        }
        Ok(LstmRun {
            outputs,
            last: state,
            caches,
        })
    }

    /// Backpropagates through a run. `d_outputs` (if any) holds one gradient
    /// per step output; `d_last` is the gradient of the final state. Returns
    /// per-step input gradients and the gradient of the initial state.
    pub fn run_backward(
        &self,
        ps: &mut ParamSet,
        run: &LstmRun,
        d_outputs: Option<&[Tensor]>,
        d_last: LstmState,
    ) -> (Vec<Tensor>, LstmState) {
        let mut dh = d_last.h;
        let mut dc = d_last.c;
        let mut dxs = vec![Tensor::zeros(&[0]); run.caches.len()];
        for t in (0..run.caches.len()).rev() {
            if let Some(d) = d_outputs {
                dh.add_assign(&d[t]);
            }
            let (dx, dhp, dcp) = self.step_backward(ps, &run.caches[t], &dh, &dc);
            dxs[t] = dx;
            dh = dhp;
            dc = dcp;
        }
        (dxs, LstmState { h: dh, c: dc })
    }
}

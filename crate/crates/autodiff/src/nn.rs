//! Layers built from graph primitives.

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Lower bound added to the softplus output of a Gaussian head.
pub const SIGMA_FLOOR: f64 = 1e-3;

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(fan_in, fan_out, data).expect("glorot shape")
}

/// `x W + b` for a batch of row vectors.
pub fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row_bias(xw, b)
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = params.add(format!("{name}.w"), glorot(rng, in_dim, out_dim));
        let b = params.add(format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// Rebinds to the parameters named `{name}.w` / `{name}.b` in `params`.
    pub fn lookup(params: &ParamSet, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            let full = format!("{name}.{suffix}");
            params
                .find(&full)
                .ok_or(AutodiffError::UnknownParam(full))
        };
        let (w, b) = (find("w")?, find("b")?);
        let wv = params.value(w);
        Ok(Self {
            w,
            b,
            in_dim: wv.rows(),
            out_dim: wv.cols(),
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.w);
        let b = g.param(params, self.b);
        dense(g, x, w, b)
    }
}

/// Dense layers with ReLU between them (and none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn lookup(params: &ParamSet, name: &str, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Dense::lookup(params, &format!("{name}.{i}")))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, params, x)?;
            if i != last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

/// Weights of one LSTM cell. Gate columns are ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = params.add(format!("{name}.wx"), glorot(rng, input, 4 * hidden));
        let wh = params.add(format!("{name}.wh"), glorot(rng, hidden, 4 * hidden));
        let mut bias = Tensor::zeros(1, 4 * hidden);
        // forget gate starts open
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = params.add(format!("{name}.b"), bias);
        Self {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    pub fn lookup(params: &ParamSet, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            let full = format!("{name}.{suffix}");
            params
                .find(&full)
                .ok_or(AutodiffError::UnknownParam(full))
        };
        let (wx, wh, b) = (find("wx")?, find("wh")?, find("b")?);
        Ok(Self {
            wx,
            wh,
            b,
            input: params.value(wx).rows(),
            hidden: params.value(wh).rows(),
        })
    }
}

/// One LSTM step over a batch: returns `(h', c')`.
pub fn lstm_cell(
    g: &mut Graph,
    params: &ParamSet,
    cell: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let n = cell.hidden;
    let wx = g.param(params, cell.wx);
    let wh = g.param(params, cell.wh);
    let b = g.param(params, cell.b);
    let xw = g.matmul(x, wx)?;
    let hw = g.matmul(h, wh)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add_row_bias(pre, b)?;

    let i = g.slice_cols(pre, 0, n)?;
    let f = g.slice_cols(pre, n, n)?;
    let cand = g.slice_cols(pre, 2 * n, n)?;
    let o = g.slice_cols(pre, 3 * n, n)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);

    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Single-head scaled dot-product attention projections.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub dim: usize,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            wq: params.add(format!("{name}.wq"), glorot(rng, dim, dim)),
            wk: params.add(format!("{name}.wk"), glorot(rng, dim, dim)),
            wv: params.add(format!("{name}.wv"), glorot(rng, dim, dim)),
            dim,
        }
    }

    pub fn lookup(params: &ParamSet, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            let full = format!("{name}.{suffix}");
            params
                .find(&full)
                .ok_or(AutodiffError::UnknownParam(full))
        };
        let wq = find("wq")?;
        Ok(Self {
            wq,
            wk: find("wk")?,
            wv: find("wv")?,
            dim: params.value(wq).rows(),
        })
    }

    pub fn project(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<(Var, Var, Var)> {
        let wq = g.param(params, self.wq);
        let wk = g.param(params, self.wk);
        let wv = g.param(params, self.wv);
        Ok((g.matmul(x, wq)?, g.matmul(x, wk)?, g.matmul(x, wv)?))
    }
}

/// `softmax(q k^T / sqrt(d)) v`, with an optional additive mask constant.
pub fn attend(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<Var>) -> Result<(Var, Var)> {
    let d = g.value(q).cols() as f64;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, 1.0 / d.sqrt());
    if let Some(mask) = mask {
        scores = g.add(scores, mask)?;
    }
    let weights = g.softmax_rows(scores);
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Self-attention over the rows of `x`. With `causal`, row `t` only sees rows `<= t`.
pub fn attention_block(
    g: &mut Graph,
    params: &ParamSet,
    attn: &AttentionParams,
    x: Var,
    causal: bool,
) -> Result<Var> {
    let (q, k, v) = attn.project(g, params, x)?;
    let mask = causal.then(|| {
        let n = g.value(x).rows();
        let mut m = Tensor::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                m.data_mut()[i * n + j] = -1e30;
            }
        }
        g.constant(m)
    });
    attend(g, q, k, v, mask).map(|(out, _)| out)
}

/// Splits a `1 x 2` raw output into `(mu, sigma)` with `sigma = softplus(raw) + floor`.
pub fn gaussian_head(g: &mut Graph, raw: Var) -> Result<(Var, Var)> {
    let cols = g.value(raw).cols();
    if cols != 2 {
        return Err(AutodiffError::Shape(format!(
            "gaussian head expects 2 columns, got {cols}"
        )));
    }
    let mu = g.slice_cols(raw, 0, 1)?;
    let s = g.slice_cols(raw, 1, 1)?;
    let s = g.softplus(s);
    let sigma = g.add_scalar(s, SIGMA_FLOOR);
    Ok((mu, sigma))
}

pub fn normal_logprob(g: &mut Graph, mu: Var, sigma: Var, a: Var) -> Result<Var> {
    g.normal_log_prob(mu, sigma, a)
}

/// Log-density of `tanh(u)` where `u ~ N(mu, sigma)`, evaluated at pre-squash `u`.
pub fn squashed_normal_logprob(g: &mut Graph, mu: Var, sigma: Var, u: Var) -> Result<Var> {
    let base = g.normal_log_prob(mu, sigma, u)?;
    let log_det = g.tanh_log_det(u);
    g.sub(base, log_det)
}

/// Log-probability of `actions[r]` under row-wise categorical logits.
pub fn categorical_logprob(g: &mut Graph, logits: Var, actions: &[usize]) -> Result<Var> {
    let logp = g.log_softmax_rows(logits);
    g.gather(logp, actions)
}

//! Frozen pre-norm transformer stack, feature pooling and the output head.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ModelParams};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

/// Standard deviation of embedding-like tables at initialization.
pub const EMBED_INIT_STD: f64 = 0.02;

pub const POS_EMBEDDING: &str = "backbone.pos_embedding";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ffn_mult: usize,
    pub max_tokens: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 4, width: 64, ffn_mult: 4, max_tokens: 256 }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return Err(Error::Config(format!("width {}, heads {}, ffn_mult {} must be >= 1", self.width, self.heads, self.ffn_mult)));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!("width {} is not divisible by {} heads", self.width, self.heads)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

pub(crate) fn normal_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches")
}

/// `rows x cols` matrix scaled by `1 / sqrt(rows)`.
pub(crate) fn dense<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
    normal_tensor(rng, &[rows, cols], 1.0 / libm::sqrt(rows.max(1) as f64))
}

fn layer_name(i: usize, leaf: &str) -> alloc::string::String {
    format!("backbone.layer{}.{}", i, leaf)
}

/// Appends the positional table (trainable) and the frozen layer stack.
pub fn push_backbone_arrays<T: Real>(params: &mut ModelParams<T>, config: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    config.validate()?;
    let d = config.width;
    let hidden = d * config.ffn_mult;
    params.push(POS_EMBEDDING, normal_tensor(rng, &[config.max_tokens, d], EMBED_INIT_STD), true);
    for i in 0..config.layers {
        params.push(&layer_name(i, "ln1.gamma"), Tensor::full(&[d], T::one()), false);
        params.push(&layer_name(i, "ln1.beta"), Tensor::zeros(&[d]), false);
        params.push(&layer_name(i, "attn.w_qkv"), dense(rng, d, 3 * d), false);
        params.push(&layer_name(i, "attn.b_qkv"), Tensor::zeros(&[3 * d]), false);
        params.push(&layer_name(i, "attn.w_out"), dense(rng, d, d), false);
        params.push(&layer_name(i, "attn.b_out"), Tensor::zeros(&[d]), false);
        params.push(&layer_name(i, "ln2.gamma"), Tensor::full(&[d], T::one()), false);
        params.push(&layer_name(i, "ln2.beta"), Tensor::zeros(&[d]), false);
        params.push(&layer_name(i, "mlp.w_fc"), dense(rng, d, hidden), false);
        params.push(&layer_name(i, "mlp.b_fc"), Tensor::zeros(&[hidden]), false);
        params.push(&layer_name(i, "mlp.w_proj"), dense(rng, hidden, d), false);
        params.push(&layer_name(i, "mlp.b_proj"), Tensor::zeros(&[d]), false);
    }
    if config.layers > 0 {
        params.push("backbone.ln_f.gamma", Tensor::full(&[d], T::one()), false);
        params.push("backbone.ln_f.beta", Tensor::zeros(&[d]), false);
    }
    Ok(())
}

/// Runs every `(f, m)` fiber of `H_input` (`I x F x M x D`) through the
/// stack independently; output has the input's shape.
pub fn backbone_forward<T: Real>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    config: &BackboneConfig,
    h_input: Var,
) -> Result<Var> {
    let shape = g.shape(h_input).to_vec();
    if shape.len() != 4 || shape[3] != config.width {
        return Err(shape_err("backbone_forward", format!("input {:?} is not I x F x M x {}", shape, config.width)));
    }
    let (tokens, f, m, d) = (shape[0], shape[1], shape[2], shape[3]);
    if tokens > config.max_tokens {
        return Err(Error::Capacity(format!("{} tokens exceed max_tokens {}", tokens, config.max_tokens)));
    }
    let fibers = f * m;
    let x = g.permute(h_input, &[1, 2, 0, 3])?;
    let x = g.reshape(x, &[fibers, tokens, d])?;
    let pos = g.slice(bound.var(params, POS_EMBEDDING), 0, 0, tokens)?;
    let mut x = g.add_broadcast(x, pos)?;

    let dh = config.head_width();
    let inv_sqrt = T::one() / T::of(dh as f64).sqrt();
    for i in 0..config.layers {
        let p = |leaf: &str| bound.var(params, &layer_name(i, leaf));
        let h = g.layer_norm(x, p("ln1.gamma"), p("ln1.beta"))?;
        let qkv = g.linear(h, p("attn.w_qkv"), p("attn.b_qkv"))?;
        let qkv = g.split(qkv, 2, &[d, d, d])?;
        let mut heads = Vec::with_capacity(config.heads);
        for hd in 0..config.heads {
            let q = g.slice(qkv[0], 2, hd * dh, dh)?;
            let k = g.slice(qkv[1], 2, hd * dh, dh)?;
            let v = g.slice(qkv[2], 2, hd * dh, dh)?;
            let scores = g.bmm_nt(q, k)?;
            let scores = g.scale(scores, inv_sqrt);
            let weights = g.softmax(scores);
            heads.push(g.bmm(weights, v)?);
        }
        let attn = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 2)? };
        let attn = g.linear(attn, p("attn.w_out"), p("attn.b_out"))?;
        x = g.add(x, attn)?;

        let h = g.layer_norm(x, p("ln2.gamma"), p("ln2.beta"))?;
        let h = g.linear(h, p("mlp.w_fc"), p("mlp.b_fc"))?;
        let h = g.gelu(h);
        let h = g.linear(h, p("mlp.w_proj"), p("mlp.b_proj"))?;
        x = g.add(x, h)?;
    }
    if config.layers > 0 {
        x = g.layer_norm(x, bound.var(params, "backbone.ln_f.gamma"), bound.var(params, "backbone.ln_f.beta"))?;
    }
    let x = g.reshape(x, &[f, m, tokens, d])?;
    g.permute(x, &[2, 0, 1, 3])
}

/// Mean over the feature axis, flatten in `(token, buoy, width)` order, then
/// `w5 flat + b5` reshaped to `rows x cols x steps`.
pub fn pool_and_project<T: Real>(
    g: &mut Graph<T>,
    h_llm: Var,
    w5: Var,
    b5: Var,
    rows: usize,
    cols: usize,
    steps: usize,
) -> Result<Var> {
    let shape = g.shape(h_llm).to_vec();
    if shape.len() != 4 {
        return Err(shape_err("pool_and_project", format!("H_LLM must be I x F x M x D, got {:?}", shape)));
    }
    let flat_len = shape[0] * shape[2] * shape[3];
    let out_len = rows * cols * steps;
    if g.shape(w5) != [flat_len, out_len] || g.shape(b5) != [out_len] {
        return Err(shape_err(
            "pool_and_project",
            format!(
                "w5 {:?}, b5 {:?} cannot map {} pooled values to {}x{}x{}",
                g.shape(w5),
                g.shape(b5),
                flat_len,
                rows,
                cols,
                steps
            ),
        ));
    }
    let pooled = g.mean(h_llm, 1)?;
    let flat = g.reshape(pooled, &[1, flat_len])?;
    let y = g.linear(flat, w5, b5)?;
    g.reshape(y, &[rows, cols, steps])
}

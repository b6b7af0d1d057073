//! Multi-head scaled dot-product attention and a pre-norm Transformer block.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::linear_weight;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// Additive score for masked keys; `exp` of it underflows to exactly zero.
const MASKED_SCORE: f64 = -1e30;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub d_model: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

pub struct AttentionOutput {
    pub out: Var,
    /// Per-head `Lq×Lk` weight matrices.
    pub weights: Vec<Var>,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} attention heads"
            )));
        }
        let mut lin = |name: &str, store: &mut ParamStore| {
            let w = store.add(format!("{prefix}.{name}.w"), linear_weight(rng, d_model, d_model));
            let b = store.add(format!("{prefix}.{name}.b"), Tensor::zeros([d_model]));
            (w, b)
        };
        let (wq, bq) = lin("q", store);
        let (wk, bk) = lin("k", store);
        let (wv, bv) = lin("v", store);
        let (wo, bo) = lin("o", store);
        Ok(Self {
            d_model,
            heads,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Attends from `query: Lq×D` over `kv: Lk×D`. `key_mask[j] == false`
    /// removes key `j` from every softmax.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        kv: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<AttentionOutput> {
        let p = |tape: &mut Tape, id| tape.param(store, id);
        let (wq, bq, wk, bk) = (p(tape, self.wq)?, p(tape, self.bq)?, p(tape, self.wk)?, p(tape, self.bk)?);
        let (wv, bv, wo, bo) = (p(tape, self.wv)?, p(tape, self.bv)?, p(tape, self.wo)?, p(tape, self.bo)?);
        let q = tape.linear(query, wq, Some(bq))?;
        let k = tape.linear(kv, wk, Some(bk))?;
        let v = tape.linear(kv, wv, Some(bv))?;
        let (mixed, weights) = attend(tape, q, k, v, self.heads, key_mask)?;
        let out = tape.linear(mixed, wo, Some(bo))?;
        Ok(AttentionOutput { out, weights })
    }

    pub fn param_count(d_model: usize) -> usize {
        4 * (d_model * d_model + d_model)
    }

    /// Projection MACs for `lq` queries and `lk` keys.
    pub fn projection_macs(d_model: usize, lq: usize, lk: usize) -> u64 {
        let d = d_model as u64;
        2 * (lq as u64) * d * d + 2 * (lk as u64) * d * d
    }

    /// Score and mixing MACs (`QKᵀ` and `AV`) for `lq` queries and `lk` keys.
    pub fn core_macs(d_model: usize, lq: usize, lk: usize) -> u64 {
        2 * (lq as u64) * (lk as u64) * d_model as u64
    }
}

/// Multi-head `softmax(Q Kᵀ / √d_h) V` on already projected inputs.
pub fn attend(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let d = tape.value(q).cols();
    let lk = tape.value(k).rows();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
    }
    let mask_row = match key_mask {
        Some(mask) => {
            if mask.len() != lk {
                return Err(Error::shape("attention mask", &[mask.len()], &[lk]));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::invalid("attention mask removes every key"));
            }
            let row = mask.iter().map(|&m| if m { 0.0 } else { MASKED_SCORE }).collect();
            Some(tape.constant(Tensor::vector(row))?)
        }
        None => None,
    };
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
        };
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let mut scores = tape.scale(scores, scale)?;
        if let Some(m) = mask_row {
            scores = tape.add_row(scores, m)?;
        }
        let w = tape.softmax_lastdim(scores)?;
        outs.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let mixed = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((mixed, weights))
}

/// Learned per-feature scale and shift after standardization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full([d], 1.0)),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros([d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma)?;
        let b = tape.param(store, self.beta)?;
        let xn = tape.layer_norm(x)?;
        let xn = tape.mul_row(xn, g)?;
        tape.add_row(xn, b)
    }
}

/// Pre-norm self-attention + ReLU feed-forward block with residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub d_model: usize,
    pub d_ff: usize,
    pub norm1: NormParams,
    pub attn: AttentionParams,
    pub norm2: NormParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

pub const FFN_MULT: usize = 4;

impl TransformerBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d_ff = FFN_MULT * d_model;
        let norm1 = NormParams::init(store, &format!("{prefix}.norm1"), d_model);
        let attn = AttentionParams::init(store, &format!("{prefix}.attn"), d_model, heads, rng)?;
        let norm2 = NormParams::init(store, &format!("{prefix}.norm2"), d_model);
        let w1 = store.add(format!("{prefix}.ffn.w1"), linear_weight(rng, d_model, d_ff));
        let b1 = store.add(format!("{prefix}.ffn.b1"), Tensor::zeros([d_ff]));
        let w2 = store.add(format!("{prefix}.ffn.w2"), linear_weight(rng, d_ff, d_model));
        let b2 = store.add(format!("{prefix}.ffn.b2"), Tensor::zeros([d_model]));
        Ok(Self {
            d_model,
            d_ff,
            norm1,
            attn,
            norm2,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm1.forward(tape, store, x)?;
        let a = self.attn.forward(tape, store, h, h, None)?.out;
        let x = tape.add(x, a)?;
        let h = self.norm2.forward(tape, store, x)?;
        let w1 = tape.param(store, self.w1)?;
        let b1 = tape.param(store, self.b1)?;
        let w2 = tape.param(store, self.w2)?;
        let b2 = tape.param(store, self.b2)?;
        let f = tape.linear(h, w1, Some(b1))?;
        let f = tape.relu(f)?;
        let f = tape.linear(f, w2, Some(b2))?;
        tape.add(x, f)
    }

    pub fn param_count(d_model: usize) -> usize {
        let d_ff = FFN_MULT * d_model;
        4 * d_model + AttentionParams::param_count(d_model) + 2 * d_model * d_ff + d_ff + d_model
    }

    pub fn macs(d_model: usize, len: usize) -> u64 {
        let ffn = 2 * (len * d_model * FFN_MULT * d_model) as u64;
        AttentionParams::projection_macs(d_model, len, len)
            + AttentionParams::core_macs(d_model, len, len)
            + ffn
    }
}

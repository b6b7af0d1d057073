//! Text-guided cross-attention, latent fusion blocks and the regression head.

use rand::Rng;

use crate::attention::{AttentionOutput, AttentionParams, NormParams};
use crate::backbone::{Backbone, SeqBlock};
use crate::error::{Error, Result};
use crate::init::linear_weight;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::ssm::{BlockConfig, ScanMode};

#[derive(Clone, Debug, PartialEq)]
pub struct TqMamba {
    pub norm_q: NormParams,
    pub norm_kv: NormParams,
    pub attn: AttentionParams,
    pub latent: Vec<SeqBlock>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl TqMamba {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: BlockConfig,
        (backbone, heads, depth): (Backbone, usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let norm_q = NormParams::init(store, &format!("{prefix}.norm_q"), d);
        let norm_kv = NormParams::init(store, &format!("{prefix}.norm_kv"), d);
        let attn = AttentionParams::init(store, &format!("{prefix}.cross"), d, heads, rng)?;
        let latent = (0..depth)
            .map(|i| SeqBlock::init(backbone, store, &format!("{prefix}.latent.{i}"), cfg, heads, rng, None))
            .collect::<Result<_>>()?;
        let head_w = store.add(format!("{prefix}.head.w"), linear_weight(rng, d, 1));
        let head_b = store.add(format!("{prefix}.head.b"), Tensor::zeros([1]));
        Ok(Self {
            norm_q,
            norm_kv,
            attn,
            latent,
            head_w,
            head_b,
        })
    }

    /// `Q_f = C_t + Attn(LN(C_t), LN([C_v; C_a]))`.
    pub fn text_query(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        (ct, cv, ca): (Var, Var, Var),
    ) -> Result<(Var, AttentionOutput)> {
        let st = tape.value(ct).shape().to_vec();
        for v in [cv, ca] {
            let s = tape.value(v).shape();
            if s != st.as_slice() {
                return Err(Error::shape("text_query", s, &st));
            }
        }
        let kv = tape.concat_time(&[cv, ca])?;
        let q = self.norm_q.forward(tape, store, ct)?;
        let kv = self.norm_kv.forward(tape, store, kv)?;
        let att = self.attn.forward(tape, store, q, kv, None)?;
        let qf = tape.add(ct, att.out)?;
        Ok((qf, att))
    }

    pub fn latent_fuse(&self, tape: &mut Tape, store: &ParamStore, qf: Var, mode: ScanMode) -> Result<Var> {
        let mut x = qf;
        for b in &self.latent {
            x = b.forward(tape, store, x, mode)?;
        }
        Ok(x)
    }

    /// Max over time, then a scalar linear head. Returns a `1×1` value.
    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, fz: Var) -> Result<Var> {
        let pooled = tape.max_over_time(fz)?;
        let w = tape.param(store, self.head_w)?;
        let b = tape.param(store, self.head_b)?;
        tape.linear(pooled, w, Some(b))
    }

    pub fn macs(&self, len: usize) -> u64 {
        let d = self.attn.d_model;
        AttentionParams::projection_macs(d, len, 2 * len)
            + AttentionParams::core_macs(d, len, 2 * len)
            + self.latent.iter().map(|b| b.macs(len)).sum::<u64>()
            + d as u64
    }

    pub fn param_count(d: usize) -> usize {
        4 * d + AttentionParams::param_count(d) + d + 1
    }
}

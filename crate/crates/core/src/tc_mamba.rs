//! Paired text/non-text sequence streams with shared state transitions.

use rand::Rng;

use crate::backbone::{Backbone, SeqBlock};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};
use crate::ssm::{BiMambaParams, BlockConfig, ScanMode, SharedTransitions};

/// A text stream and a non-text stream that reference one `A` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TcPair {
    pub text: SeqBlock,
    pub other: SeqBlock,
    pub shared: Option<SharedTransitions>,
}

impl TcPair {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: BlockConfig,
        (backbone, heads, share): (Backbone, usize, bool),
        rng: &mut R,
    ) -> Result<Self> {
        let shared = (share && backbone == Backbone::Mamba)
            .then(|| SharedTransitions::init(store, &format!("{prefix}.shared"), &cfg));
        let text = SeqBlock::init(backbone, store, &format!("{prefix}.text"), cfg, heads, rng, shared)?;
        let other = SeqBlock::init(backbone, store, &format!("{prefix}.other"), cfg, heads, rng, shared)?;
        Ok(Self { text, other, shared })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcBlock {
    pub tv: TcPair,
    pub ta: TcPair,
}

pub struct TcOutput {
    pub text: Var,
    pub visual: Var,
    pub audio: Var,
}

impl TcBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: BlockConfig,
        opts: (Backbone, usize, bool),
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            tv: TcPair::init(store, &format!("{prefix}.tv"), cfg, opts, rng)?,
            ta: TcPair::init(store, &format!("{prefix}.ta"), cfg, opts, rng)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        (ct, ev, ea): (Var, Var, Var),
        mode: ScanMode,
    ) -> Result<TcOutput> {
        let st = tape.value(ct).shape().to_vec();
        for v in [ev, ea] {
            let s = tape.value(v).shape();
            if s != st.as_slice() {
                return Err(Error::shape("tc_block", s, &st));
            }
        }
        let ct1 = self.tv.text.forward(tape, store, ct, mode)?;
        let visual = self.tv.other.forward(tape, store, ev, mode)?;
        let ct2 = self.ta.text.forward(tape, store, ct, mode)?;
        let audio = self.ta.other.forward(tape, store, ea, mode)?;
        let sum = tape.add(ct1, ct2)?;
        let text = tape.scale(sum, 0.5)?;
        Ok(TcOutput { text, visual, audio })
    }

    pub fn macs(&self, len: usize) -> u64 {
        [&self.tv.text, &self.tv.other, &self.ta.text, &self.ta.other]
            .iter()
            .map(|b| b.macs(len))
            .sum()
    }
}

/// Depth-stacked TC blocks, each with its own parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TcStack {
    pub blocks: Vec<TcBlock>,
}

impl TcStack {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        depth: usize,
        cfg: BlockConfig,
        opts: (Backbone, usize, bool),
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("context stage depth must be at least 1".into()));
        }
        let blocks = (0..depth)
            .map(|i| TcBlock::init(store, &format!("{prefix}.{i}"), cfg, opts, rng))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: (Var, Var, Var),
        mode: ScanMode,
    ) -> Result<TcOutput> {
        let (mut ct, mut cv, mut ca) = inputs;
        for b in &self.blocks {
            let o = b.forward(tape, store, (ct, cv, ca), mode)?;
            (ct, cv, ca) = (o.text, o.visual, o.audio);
        }
        Ok(TcOutput { text: ct, visual: cv, audio: ca })
    }

    pub fn macs(&self, len: usize) -> u64 {
        self.blocks.iter().map(|b| b.macs(len)).sum()
    }
}

/// Scalar parameters of a Bi-Mamba TC stack. With sharing, each pair holds
/// one forward and one backward `A` instead of two of each.
pub fn shared_param_count(cfg: &BlockConfig, depth: usize, shared: bool) -> usize {
    let a = cfg.inner() * cfg.d_state;
    let pair = if shared {
        2 * BiMambaParams::param_count(cfg, true) + 2 * a
    } else {
        2 * BiMambaParams::param_count(cfg, false)
    };
    depth * 2 * pair
}

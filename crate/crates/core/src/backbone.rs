//! Sequence blocks interchangeable inside the fusion stages.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::TransformerBlock;
use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};
use crate::ssm::{BiMambaParams, BlockConfig, ScanMode, SharedTransitions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Mamba,
    /// Self-attention blocks in place of every Bi-Mamba block.
    Transformer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SeqBlock {
    Mamba(BiMambaParams),
    Transformer(TransformerBlock),
}

impl SeqBlock {
    pub fn init<R: Rng + ?Sized>(
        backbone: Backbone,
        store: &mut ParamStore,
        prefix: &str,
        cfg: BlockConfig,
        heads: usize,
        rng: &mut R,
        shared: Option<SharedTransitions>,
    ) -> Result<Self> {
        Ok(match backbone {
            Backbone::Mamba => Self::Mamba(BiMambaParams::init(store, prefix, cfg, rng, shared)?),
            Backbone::Transformer => {
                Self::Transformer(TransformerBlock::init(store, prefix, cfg.d_model, heads, rng)?)
            }
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: ScanMode) -> Result<Var> {
        match self {
            Self::Mamba(b) => b.forward(tape, store, x, mode),
            Self::Transformer(b) => b.forward(tape, store, x),
        }
    }

    pub fn macs(&self, len: usize) -> u64 {
        match self {
            Self::Mamba(b) => BiMambaParams::macs(&b.cfg, len),
            Self::Transformer(b) => TransformerBlock::macs(b.d_model, len),
        }
    }

    pub fn as_mamba(&self) -> Option<&BiMambaParams> {
        match self {
            Self::Mamba(b) => Some(b),
            Self::Transformer(_) => None,
        }
    }
}

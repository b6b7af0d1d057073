//! The assembled network: alignment and enhancement, context stage, query
//! stage and regression head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, TransformerBlock};
use crate::backbone::{Backbone, SeqBlock};
use crate::error::{Error, Result};
use crate::harness::{task_loss, total_loss};
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::ssm::{BiMambaParams, BlockConfig, ScanMode};
use crate::tc_mamba::{shared_param_count, TcStack};
use crate::tme::{self, Aligner, RecTarget, Reconstructor};
use crate::tq_mamba::TqMamba;

/// Switches that remove one mechanism each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Skip similarity enhancement; aligned features pass through unchanged.
    pub disable_tme: bool,
    pub disable_reconstruction: bool,
    /// Give every stream its own `A` parameters.
    pub disable_sharing: bool,
    /// Transformer blocks in place of every Bi-Mamba block.
    pub replace_scans_with_attention: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Common length `L`; must equal the text length.
    pub seq_len: usize,
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub tc_depth: usize,
    pub tq_depth: usize,
    pub heads: usize,
    pub tau: f64,
    pub scan_mode: ScanMode,
    pub rec_target: RecTarget,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset("mosi").expect("built-in preset")
    }
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 4] = ["mosi", "mosei", "sims", "desk"];

    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            seq_len: 50,
            d_model: 128,
            d_state: 12,
            expand: 4,
            tc_depth: 1,
            tq_depth: 1,
            heads: 8,
            tau: tme::DEFAULT_TAU,
            scan_mode: ScanMode::Recurrent,
            rec_target: RecTarget::Missing,
            ablation: Ablation::default(),
        };
        Ok(match name {
            "mosi" => base,
            "mosei" => Self {
                tc_depth: 2,
                tq_depth: 2,
                ..base
            },
            "sims" => Self {
                seq_len: 39,
                d_state: 16,
                expand: 2,
                tq_depth: 2,
                ..base
            },
            "desk" => Self {
                seq_len: 16,
                d_model: 32,
                d_state: 8,
                expand: 2,
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}`; expected one of {}",
                    Self::PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig::new(self.d_model, self.expand, self.d_state)
    }

    pub fn backbone(&self) -> Backbone {
        if self.ablation.replace_scans_with_attention {
            Backbone::Transformer
        } else {
            Backbone::Mamba
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block().validate()?;
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be positive".into()));
        }
        if self.tc_depth == 0 {
            return Err(Error::Config("tc_depth must be at least 1".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// `(length, feature dim)` of each raw modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalShapes {
    pub text: (usize, usize),
    pub visual: (usize, usize),
    pub audio: (usize, usize),
}

impl ModalShapes {
    /// Raw feature shapes of the benchmark corpora.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "mosi" => Self {
                text: (50, 768),
                visual: (500, 20),
                audio: (375, 5),
            },
            "mosei" => Self {
                text: (50, 768),
                visual: (500, 35),
                audio: (500, 74),
            },
            "sims" => Self {
                text: (39, 768),
                visual: (55, 709),
                audio: (400, 33),
            },
            "desk" => Self::desk(),
            other => return Err(Error::Config(format!("unknown shape preset `{other}`"))),
        })
    }

    pub fn desk() -> Self {
        Self {
            text: (16, 32),
            visual: (24, 16),
            audio: (32, 8),
        }
    }
}

/// One model input after corruption. Presence vectors are indexed
/// text, visual, audio.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedSample {
    pub text: Tensor,
    pub visual: Tensor,
    pub audio: Tensor,
    pub clean_text: Tensor,
    pub presence: [Vec<f64>; 3],
    pub label: f64,
}

/// Threshold masks for visual and audio enhancement.
pub type EnhanceMasks = [Tensor; 2];

pub struct SampleForward {
    pub pred: Var,
    pub recon: Option<(Var, usize)>,
    pub masks: Option<EnhanceMasks>,
}

pub struct BatchOutput {
    pub loss: Var,
    pub task: Var,
    pub rec: Option<Var>,
    pub preds: Vec<f64>,
    pub masks: Vec<Option<EnhanceMasks>>,
}

/// Parameter layout; values live in a separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub cfg: ModelConfig,
    pub shapes: ModalShapes,
    pub align_t: Aligner,
    pub align_v: Aligner,
    pub align_a: Aligner,
    pub reconstructor: Option<Reconstructor>,
    pub tc: TcStack,
    pub tq: TqMamba,
}

#[derive(Clone, Debug)]
pub struct TfMamba {
    pub net: Network,
    pub store: ParamStore,
}

impl TfMamba {
    pub fn new(cfg: &ModelConfig, shapes: ModalShapes, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if shapes.text.0 != cfg.seq_len {
            return Err(Error::Config(format!(
                "seq_len {} must equal the text length {}",
                cfg.seq_len, shapes.text.0
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let target = (cfg.seq_len, cfg.d_model);
        let align_t = Aligner::init(&mut store, "align.text", shapes.text, target, &mut rng)?;
        let align_v = Aligner::init(&mut store, "align.visual", shapes.visual, target, &mut rng)?;
        let align_a = Aligner::init(&mut store, "align.audio", shapes.audio, target, &mut rng)?;
        let reconstructor = (!cfg.ablation.disable_reconstruction).then(|| {
            Reconstructor::init(&mut store, "recon", cfg.d_model, shapes.text.1, &mut rng)
        });
        let block = cfg.block();
        let backbone = cfg.backbone();
        let share = !cfg.ablation.disable_sharing;
        let tc = TcStack::init(&mut store, "tc", cfg.tc_depth, block, (backbone, cfg.heads, share), &mut rng)?;
        let tq = TqMamba::init(&mut store, "tq", block, (backbone, cfg.heads, cfg.tq_depth), &mut rng)?;
        Ok(Self {
            net: Network {
                cfg: cfg.clone(),
                shapes,
                align_t,
                align_v,
                align_a,
                reconstructor,
                tc,
                tq,
            },
            store,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }
}

impl Network {
    /// Runs one sample. `train` adds the reconstruction branch; `frozen`
    /// replaces the threshold masks computed from the current values.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &CorruptedSample,
        train: bool,
        frozen: Option<&EnhanceMasks>,
    ) -> Result<SampleForward> {
        let mode = self.cfg.scan_mode;
        let xt = tape.constant(x.text.clone())?;
        let xv = tape.constant(x.visual.clone())?;
        let xa = tape.constant(x.audio.clone())?;
        let ht = self.align_t.forward(tape, store, xt)?;
        let hv = self.align_v.forward(tape, store, xv)?;
        let ha = self.align_a.forward(tape, store, xa)?;

        let (ev, ea, masks) = if self.cfg.ablation.disable_tme {
            (hv, ha, None)
        } else {
            let sv = tme::token_similarity(tape, hv, ht, self.cfg.tau)?;
            let sa = tme::token_similarity(tape, ha, ht, self.cfg.tau)?;
            let masks = match frozen {
                Some(m) => m.clone(),
                None => [
                    tme::threshold_mask(tape.value(sv), None)?,
                    tme::threshold_mask(tape.value(sa), None)?,
                ],
            };
            let ev = tme::enhance(tape, hv, sv, &masks[0], ht)?;
            let ea = tme::enhance(tape, ha, sa, &masks[1], ht)?;
            (ev, ea, Some(masks))
        };

        let recon = match (&self.reconstructor, train) {
            (Some(r), true) => {
                let rt = r.forward(tape, store, ht)?;
                let clean = tape.constant(x.clean_text.clone())?;
                tme::recon_loss_sum(tape, clean, rt, &x.presence[0], self.cfg.rec_target)?
            }
            _ => None,
        };

        let c = self.tc.forward(tape, store, (ht, ev, ea), mode)?;
        let (qf, _) = self.tq.text_query(tape, store, (c.text, c.visual, c.audio))?;
        let fz = self.tq.latent_fuse(tape, store, qf, mode)?;
        let pred = self.tq.predict(tape, store, fz)?;
        Ok(SampleForward { pred, recon, masks })
    }

    /// `L_task + λ·L_rec` over a batch, with the reconstruction term averaged
    /// over every selected text cell in the batch.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[CorruptedSample],
        lambda: f64,
        frozen: Option<&[Option<EnhanceMasks>]>,
    ) -> Result<BatchOutput> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut preds = Vec::with_capacity(batch.len());
        let mut rec_sums = Vec::new();
        let mut cells = 0usize;
        let mut masks = Vec::with_capacity(batch.len());
        for (i, x) in batch.iter().enumerate() {
            let fm = frozen.and_then(|f| f.get(i)).and_then(|m| m.as_ref());
            let out = self.forward_sample(tape, store, x, true, fm)?;
            preds.push(out.pred);
            if let Some((s, n)) = out.recon {
                rec_sums.push(s);
                cells += n;
            }
            masks.push(out.masks);
        }
        let pred_col = tape.concat_time(&preds)?;
        let labels: Vec<f64> = batch.iter().map(|x| x.label).collect();
        let task = task_loss(tape, pred_col, &labels)?;
        let rec = if rec_sums.is_empty() {
            None
        } else {
            let mut total = rec_sums[0];
            for &s in &rec_sums[1..] {
                total = tape.add(total, s)?;
            }
            Some(tape.scale(total, 1.0 / cells as f64)?)
        };
        let loss = match rec {
            Some(r) => total_loss(tape, task, r, lambda)?,
            None => task,
        };
        let pred_values = tape.value(pred_col).data().to_vec();
        Ok(BatchOutput {
            loss,
            task,
            rec,
            preds: pred_values,
            masks,
        })
    }

    /// Inference predictions, one tape per sample.
    pub fn predict(&self, store: &ParamStore, batch: &[CorruptedSample]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|x| {
                let mut tape = Tape::new();
                let out = self.forward_sample(&mut tape, store, x, false, None)?;
                tape.scalar(out.pred)
            })
            .collect()
    }
}

/// Closed-form parameter count for a configuration.
pub fn analytic_param_count(cfg: &ModelConfig, shapes: &ModalShapes) -> usize {
    let d = cfg.d_model;
    let block = cfg.block();
    let align = Aligner::param_count(shapes.text.1, d)
        + Aligner::param_count(shapes.visual.1, d)
        + Aligner::param_count(shapes.audio.1, d);
    let recon = if cfg.ablation.disable_reconstruction {
        0
    } else {
        Reconstructor::param_count(d, shapes.text.1)
    };
    let (tc, latent) = match cfg.backbone() {
        Backbone::Mamba => (
            shared_param_count(&block, cfg.tc_depth, !cfg.ablation.disable_sharing),
            BiMambaParams::param_count(&block, false),
        ),
        Backbone::Transformer => (
            cfg.tc_depth * 4 * TransformerBlock::param_count(d),
            TransformerBlock::param_count(d),
        ),
    };
    align + recon + tc + TqMamba::param_count(d) + cfg.tq_depth * latent
}

/// Inference multiply-accumulates per module, in forward order.
pub fn analytic_macs(cfg: &ModelConfig, shapes: &ModalShapes) -> Vec<(&'static str, u64)> {
    let (l, d) = (cfg.seq_len as u64, cfg.d_model as u64);
    let align_one = |(t, dm): (usize, usize)| {
        let resample = if t == cfg.seq_len { 0 } else { l * t as u64 * dm as u64 };
        resample + l * dm as u64 * d
    };
    let align = align_one(shapes.text) + align_one(shapes.visual) + align_one(shapes.audio);
    let enhance = if cfg.ablation.disable_tme { 0 } else { 2 * 2 * l * l * d };
    let block = cfg.block();
    let seq_block = |len: usize| match cfg.backbone() {
        Backbone::Mamba => BiMambaParams::macs(&block, len),
        Backbone::Transformer => TransformerBlock::macs(cfg.d_model, len),
    };
    let tc = cfg.tc_depth as u64 * 4 * seq_block(cfg.seq_len);
    let cross_proj = AttentionParams::projection_macs(cfg.d_model, cfg.seq_len, 2 * cfg.seq_len);
    let cross_core = AttentionParams::core_macs(cfg.d_model, cfg.seq_len, 2 * cfg.seq_len);
    let latent = cfg.tq_depth as u64 * seq_block(cfg.seq_len);
    vec![
        ("align", align),
        ("tme_enhance", enhance),
        ("tc_stack", tc),
        ("cross_attention_proj", cross_proj),
        ("cross_attention", cross_core),
        ("tq_latent", latent),
        ("head", d),
    ]
}

/// Every sequence block in forward order.
pub fn seq_blocks(net: &Network) -> Vec<&SeqBlock> {
    let mut v = Vec::new();
    for b in &net.tc.blocks {
        v.extend([&b.tv.text, &b.tv.other, &b.ta.text, &b.ta.other]);
    }
    v.extend(net.tq.latent.iter());
    v
}

/// Central-difference check of the full training loss over every trainable
/// parameter. Threshold masks are taken at the current values and held fixed
/// so that perturbations cannot flip them.
pub fn gradcheck(
    model: &mut TfMamba,
    batch: &[CorruptedSample],
    lambda: f64,
    eps: f64,
) -> Result<crate::numerics::GradCheckReport> {
    let net = &model.net;
    let masks = {
        let mut tape = Tape::new();
        net.batch_loss(&mut tape, &model.store, batch, lambda, None)?.masks
    };
    crate::numerics::finite_difference_check(
        &mut model.store,
        |tape, store| Ok(net.batch_loss(tape, store, batch, lambda, Some(&masks))?.loss),
        eps,
    )
}

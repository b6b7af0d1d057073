//! Parameter and multiply-accumulate accounting, checked against the tape
//! counter, plus forward-pass timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{attend, AttentionParams, TransformerBlock};
use crate::error::{Error, Result};
use crate::model::{analytic_macs, CorruptedSample, ModalShapes, ModelConfig, TfMamba};
use crate::numerics::{Tape, Tensor};
use crate::ssm::BiMambaParams;

pub const CONVENTION: &str = "MACs: one multiply-accumulate = 2 FLOPs";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleCost {
    pub module: String,
    pub macs: u64,
}

pub fn count_params(model: &TfMamba) -> usize {
    model.store.num_scalars()
}

/// Per-module inference MACs for one sample.
pub fn count_macs(cfg: &ModelConfig, shapes: &ModalShapes) -> Vec<ModuleCost> {
    analytic_macs(cfg, shapes)
        .into_iter()
        .map(|(m, macs)| ModuleCost {
            module: m.to_string(),
            macs,
        })
        .collect()
}

pub fn total_macs(cfg: &ModelConfig, shapes: &ModalShapes) -> u64 {
    analytic_macs(cfg, shapes).iter().map(|(_, m)| m).sum()
}

/// MACs recorded by the tape for one inference forward pass.
pub fn instrumented_macs(model: &TfMamba, sample: &CorruptedSample) -> Result<u64> {
    let mut tape = Tape::new();
    model.net.forward_sample(&mut tape, &model.store, sample, false, None)?;
    Ok(tape.macs())
}

/// `cfg` and `shapes` with the common length set to `len`; visual and audio
/// keep their length ratio to text.
pub fn at_length(cfg: &ModelConfig, shapes: &ModalShapes, len: usize) -> (ModelConfig, ModalShapes) {
    let scale = |t: usize| ((t as f64) * len as f64 / shapes.text.0 as f64).round().max(1.0) as usize;
    let s = ModalShapes {
        text: (len, shapes.text.1),
        visual: (scale(shapes.visual.0), shapes.visual.1),
        audio: (scale(shapes.audio.0), shapes.audio.1),
    };
    (
        ModelConfig {
            seq_len: len,
            ..cfg.clone()
        },
        s,
    )
}

/// The same configuration with every Bi-Mamba block replaced by attention.
pub fn transformer_variant(cfg: &ModelConfig) -> ModelConfig {
    let mut c = cfg.clone();
    c.ablation.replace_scans_with_attention = true;
    c
}

/// One Bi-Mamba block against one Transformer block at `len`.
pub fn block_macs(cfg: &ModelConfig, len: usize) -> (u64, u64) {
    (
        BiMambaParams::macs(&cfg.block(), len),
        TransformerBlock::macs(cfg.d_model, len),
    )
}

pub fn cross_attention_macs(cfg: &ModelConfig, len: usize) -> u64 {
    AttentionParams::core_macs(cfg.d_model, len, 2 * len)
}

/// Smallest `L ≤ max_len` from which the Transformer variant costs strictly
/// more than the scan model.
pub fn crossover_length(cfg: &ModelConfig, shapes: &ModalShapes, max_len: usize) -> Option<usize> {
    let trans = transformer_variant(cfg);
    let exceeds = |l: usize| {
        let (c, s) = at_length(cfg, shapes, l);
        let (t, _) = at_length(&trans, shapes, l);
        total_macs(&t, &s) > total_macs(&c, &s)
    };
    let mut first = None;
    for l in (1..=max_len).rev() {
        if exceeds(l) {
            first = Some(l);
        } else {
            break;
        }
    }
    first
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub reps: usize,
    pub warmup: usize,
    pub median_s: f64,
    pub q1_s: f64,
    pub q3_s: f64,
    pub iqr_s: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times `f` `reps` times after discarding `warmup` calls.
pub fn time_it(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<TimingStats> {
    if reps == 0 {
        return Err(Error::invalid("timing needs at least one rep"));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&times, 0.25), quantile(&times, 0.75));
    Ok(TimingStats {
        reps,
        warmup,
        median_s: quantile(&times, 0.5),
        q1_s: q1,
        q3_s: q3,
        iqr_s: q3 - q1,
    })
}

/// Forward-only inference time for one sample.
pub fn wallclock(model: &TfMamba, sample: &CorruptedSample, warmup: usize, reps: usize) -> Result<TimingStats> {
    time_it(warmup, reps, || {
        let mut tape = Tape::new();
        model.net.forward_sample(&mut tape, &model.store, sample, false, None)?;
        Ok(())
    })
}

/// Bare scaled dot-product attention of `len` queries over `len` keys.
pub fn attention_wallclock(len: usize, d: usize, heads: usize, warmup: usize, reps: usize) -> Result<TimingStats> {
    let x = Tensor::new([len, d], (0..len * d).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect())?;
    time_it(warmup, reps, || {
        let mut tape = Tape::new();
        let q = tape.constant(x.clone())?;
        attend(&mut tape, q, q, q, heads, None)?;
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthCost {
    pub seq_len: usize,
    pub tf_mamba_macs: u64,
    pub tf_trans_macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub convention: String,
    pub workers: usize,
    pub params: usize,
    pub seq_len: usize,
    pub total_macs: u64,
    pub modules: Vec<ModuleCost>,
    /// MACs recorded by the tape; equals `total_macs`.
    pub instrumented_macs: u64,
    pub by_length: Vec<LengthCost>,
    pub crossover_len: Option<usize>,
    pub timing: Option<TimingStats>,
}

impl CostReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("json: {e}")))
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("# {}; workers = {}\n", self.convention, self.workers);
        s += &format!("params {:>14}\n", self.params);
        s += &format!("\nL = {}\n{:<22}{:>16}\n", self.seq_len, "module", "MACs");
        for m in &self.modules {
            s += &format!("{:<22}{:>16}\n", m.module, m.macs);
        }
        s += &format!("{:<22}{:>16}\n{:<22}{:>16}\n", "total", self.total_macs, "instrumented", self.instrumented_macs);
        s += &format!("\n{:>8}{:>18}{:>18}\n", "L", "TF-Mamba", "TF-Trans");
        for r in &self.by_length {
            s += &format!("{:>8}{:>18}{:>18}\n", r.seq_len, r.tf_mamba_macs, r.tf_trans_macs);
        }
        match self.crossover_len {
            Some(l) => s += &format!("TF-Trans exceeds TF-Mamba from L = {l}\n"),
            None => s += "no crossover in range\n",
        }
        if let Some(t) = &self.timing {
            s += &format!(
                "\nforward: median {:.3} ms, IQR {:.3} ms over {} reps ({} warmup)\n",
                t.median_s * 1e3,
                t.iqr_s * 1e3,
                t.reps,
                t.warmup
            );
        }
        s
    }
}

/// Assembles the full report. `sample` drives the instrumented count and,
/// when `timing` is `Some((warmup, reps))`, the wall-clock measurement.
pub fn cost_report(
    model: &TfMamba,
    sample: &CorruptedSample,
    lengths: &[usize],
    timing: Option<(usize, usize)>,
) -> Result<CostReport> {
    let (cfg, shapes) = (&model.net.cfg, &model.net.shapes);
    let trans = transformer_variant(cfg);
    let by_length = lengths
        .iter()
        .map(|&l| {
            let (c, s) = at_length(cfg, shapes, l);
            let (t, _) = at_length(&trans, shapes, l);
            LengthCost {
                seq_len: l,
                tf_mamba_macs: total_macs(&c, &s),
                tf_trans_macs: total_macs(&t, &s),
            }
        })
        .collect();
    let max_len = lengths.iter().copied().max().unwrap_or(cfg.seq_len).max(cfg.seq_len);
    Ok(CostReport {
        convention: CONVENTION.to_string(),
        workers: 1,
        params: count_params(model),
        seq_len: cfg.seq_len,
        total_macs: total_macs(cfg, shapes),
        modules: count_macs(cfg, shapes),
        instrumented_macs: instrumented_macs(model, sample)?,
        by_length,
        crossover_len: crossover_length(cfg, shapes, max_len),
        timing: timing.map(|(w, r)| wallclock(model, sample, w, r)).transpose()?,
    })
}

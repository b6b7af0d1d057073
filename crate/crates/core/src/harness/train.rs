use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt_sample, stream_rng, CorruptionMode};
use super::optim::{AdamW, AdamWConfig, LrSchedule};
use crate::data::{csv_err, Sample};
use crate::error::{Error, Result};
use crate::model::TfMamba;
use crate::numerics::{ParamStore, Tape};

/// Stream id reserved for corrupting the validation split.
const VALID_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_frac: f64,
    /// Weight of the reconstruction term.
    pub lambda: f64,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 200,
            batch_size: 64,
            warmup_frac: 0.05,
            lambda: 0.7,
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("warmup_frac must lie in [0, 1], got {}", self.warmup_frac)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub task: f64,
    pub rec: f64,
    pub valid_mae: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<EpochLog>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub best_valid_mae: Option<f64>,
    /// Parameters at the best validation MAE.
    pub best: Option<ParamStore>,
}

impl TrainReport {
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["epoch", "step", "lr", "loss", "task", "rec", "valid_mae"])
            .map_err(csv_err)?;
        for e in &self.curve {
            w.write_record([
                e.epoch.to_string(),
                e.step.to_string(),
                format!("{:?}", e.lr),
                format!("{:?}", e.loss),
                format!("{:?}", e.task),
                format!("{:?}", e.rec),
                e.valid_mae.map(|m| format!("{m:?}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_abs_error(model: &TfMamba, samples: &[Sample], unknown: &[f64], seed: u64) -> Result<f64> {
    let batch = samples
        .iter()
        .enumerate()
        .map(|(i, s)| corrupt_sample(s, unknown, &CorruptionMode::TrainUncertain, (seed, VALID_STREAM, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let preds = model.net.predict(&model.store, &batch)?;
    Ok(preds.iter().zip(samples).map(|(p, s)| (p - s.label).abs()).sum::<f64>() / samples.len() as f64)
}

/// Minibatch training with per-step random corruption. `on_epoch` sees each
/// epoch summary as it completes.
pub fn train(
    model: &mut TfMamba,
    train: &[Sample],
    valid: &[Sample],
    unknown_text: &[f64],
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let per_epoch = cfg.steps_per_epoch(train.len());
    let schedule = LrSchedule::new(cfg.lr, per_epoch * cfg.epochs, cfg.warmup_frac);
    let mut opt = AdamW::new(cfg.adamw, &model.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        curve: Vec::with_capacity(cfg.epochs),
        steps: 0,
        best_epoch: None,
        best_valid_mae: None,
        best: None,
    };
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(&[seed, 0x5348_5546, epoch as u64]));
        let (mut loss_sum, mut task_sum, mut rec_sum) = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    corrupt_sample(
                        &train[i],
                        unknown_text,
                        &CorruptionMode::TrainUncertain,
                        (seed, step as u64, i as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut tape = Tape::new();
            let out = model
                .net
                .batch_loss(&mut tape, &model.store, &batch, cfg.lambda, None)
                .map_err(|e| match e {
                    Error::NonFinite { .. } | Error::NonFiniteState { .. } => Error::NonFiniteLoss { step },
                    other => other,
                })?;
            let loss = tape.scalar(out.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let task = tape.scalar(out.task)?;
            let rec = match out.rec {
                Some(r) => tape.scalar(r)?,
                None => 0.0,
            };
            model.store.zero_grad();
            tape.backward(out.loss, &mut model.store)?;
            lr = schedule.at(step);
            opt.step(&mut model.store, lr);
            let w = chunk.len() as f64;
            loss_sum += loss * w;
            task_sum += task * w;
            rec_sum += rec * w;
            step += 1;
        }
        let n = train.len() as f64;
        let valid_mae = if valid.is_empty() {
            None
        } else {
            Some(mean_abs_error(model, valid, unknown_text, seed)?)
        };
        if let Some(m) = valid_mae {
            if report.best_valid_mae.is_none_or(|b| m < b) {
                report.best_valid_mae = Some(m);
                report.best_epoch = Some(epoch);
                report.best = Some(model.store.clone());
            }
        }
        let log = EpochLog {
            epoch,
            step,
            lr,
            loss: loss_sum / n,
            task: task_sum / n,
            rec: rec_sum / n,
            valid_mae,
        };
        on_epoch(&log);
        report.curve.push(log);
    }
    report.steps = step;
    Ok(report)
}

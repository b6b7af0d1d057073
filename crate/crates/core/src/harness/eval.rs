use super::corrupt::{corrupt, CorruptionMode};
use super::metrics::{metrics, Metrics, MetricsReport, RateRow};
use crate::data::{LabelRange, Sample};
use crate::error::Result;
use crate::model::Network;
use crate::numerics::ParamStore;

/// Missing rates of the robustness sweep, `0.0, 0.1, …, 0.9`.
pub fn sweep_rates() -> [f64; 10] {
    std::array::from_fn(|i| i as f64 / 10.0)
}

/// Base stream id for evaluation corruption, far above any training step.
const EVAL_STREAM: u64 = 1 << 48;

pub struct Evaluation {
    pub metrics: Metrics,
    pub preds: Vec<f64>,
}

pub fn evaluate(
    net: &Network,
    store: &ParamStore,
    samples: &[Sample],
    unknown_text: &[f64],
    mode: &CorruptionMode,
    (seed, stream): (u64, u64),
    scheme: LabelRange,
) -> Result<Evaluation> {
    let batch = corrupt(samples, unknown_text, mode, seed, EVAL_STREAM + stream)?;
    let preds = net.predict(store, &batch)?;
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        metrics: metrics(&labels, &preds, scheme)?,
        preds,
    })
}

/// Metrics at every sweep rate plus their mean.
pub fn evaluate_sweep(
    net: &Network,
    store: &ParamStore,
    samples: &[Sample],
    unknown_text: &[f64],
    seed: u64,
    scheme: LabelRange,
) -> Result<MetricsReport> {
    let rows = sweep_rates()
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let mode = CorruptionMode::TestFixed(rate);
            let e = evaluate(net, store, samples, unknown_text, &mode, (seed, i as u64), scheme)?;
            Ok(RateRow {
                rate,
                metrics: e.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_rows(rows))
}

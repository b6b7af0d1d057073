//! Short training run on the synthetic corpus with a loss curve.

use tf_mamba::data::{generate, GenerateConfig, LabelRange, Split};
use tf_mamba::harness::{evaluate, train, CorruptionMode, TrainConfig};
use tf_mamba::{ModelConfig, TfMamba};

fn main() -> tf_mamba::Result<()> {
    let ds = generate(&GenerateConfig::desk(0))?;
    let cfg = ModelConfig::preset("desk")?;
    let mut model = TfMamba::new(&cfg, ds.manifest.shapes, 0)?;
    let tc = TrainConfig {
        epochs: 20,
        batch_size: 16,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let rep = train(&mut model, ds.split(Split::Train), ds.split(Split::Valid), &ds.unknown_text, &tc, 0, |e| {
        println!(
            "epoch {:>2}  loss {:.4}  task {:.4}  rec {:.4}  valid MAE {:.4}",
            e.epoch,
            e.loss,
            e.task,
            e.rec,
            e.valid_mae.unwrap_or(f64::NAN)
        )
    })?;
    println!("{} optimizer steps, best epoch {:?}", rep.steps, rep.best_epoch);

    let test = ds.split(Split::Test);
    for r in [0.0, 0.5, 0.9] {
        let e = evaluate(&model.net, &model.store, test, &ds.unknown_text, &CorruptionMode::TestFixed(r), (0, 0), LabelRange::English)?;
        println!("test r={r}: MAE {:.3}  Acc-2 {:.3}  Corr {:.3}", e.metrics.mae, e.metrics.acc2_pos, e.metrics.corr);
    }
    Ok(())
}

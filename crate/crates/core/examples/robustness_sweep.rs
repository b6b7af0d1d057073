//! Missing-rate sweep and complete-modality-missing evaluation of a briefly
//! trained model.

use tf_mamba::data::{generate, GenerateConfig, LabelRange, Split};
use tf_mamba::harness::{evaluate, evaluate_sweep, train, CorruptionMode, Modality, TrainConfig};
use tf_mamba::{ModelConfig, TfMamba};

fn main() -> tf_mamba::Result<()> {
    let ds = generate(&GenerateConfig::desk(0))?;
    let mut model = TfMamba::new(&ModelConfig::preset("desk")?, ds.manifest.shapes, 1)?;
    let tc = TrainConfig { epochs: 10, batch_size: 16, lr: 1e-3, ..TrainConfig::default() };
    train(&mut model, ds.split(Split::Train), &[], &ds.unknown_text, &tc, 1, |_| {})?;

    let test = ds.split(Split::Test);
    let report = evaluate_sweep(&model.net, &model.store, test, &ds.unknown_text, 1, LabelRange::English)?;
    print!("{}", report.to_csv()?);

    println!("\ncomplete missing:");
    for set in ["t", "v", "a", "va", "ta"] {
        let mode = CorruptionMode::CompleteMissing(Modality::parse_set(set)?);
        let e = evaluate(&model.net, &model.store, test, &ds.unknown_text, &mode, (1, 0), LabelRange::English)?;
        println!("  without {set:<2}  MAE {:.3}  Acc-2 {:.3}", e.metrics.mae, e.metrics.acc2_pos);
    }
    Ok(())
}

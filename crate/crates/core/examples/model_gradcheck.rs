//! Central-difference check of every parameter of a small full model.

use tf_mamba::data::{generate, GenerateConfig};
use tf_mamba::harness::{corrupt, CorruptionMode};
use tf_mamba::model::gradcheck;
use tf_mamba::numerics::DEFAULT_EPS;
use tf_mamba::{ModalShapes, ModelConfig, TfMamba};

fn main() -> tf_mamba::Result<()> {
    let shapes = ModalShapes { text: (6, 5), visual: (8, 4), audio: (9, 3) };
    let cfg = ModelConfig { seq_len: 6, d_model: 8, d_state: 3, heads: 2, ..ModelConfig::preset("desk")? };
    let mut g = GenerateConfig::desk(2);
    g.samples = 2;
    g.shapes = shapes;
    let ds = generate(&g)?;
    let batch = corrupt(&ds.samples, &ds.unknown_text, &CorruptionMode::TestFixed(0.3), 2, 0)?;
    let mut model = TfMamba::new(&cfg, shapes, 2)?;
    let rep = gradcheck(&mut model, &batch, 0.7, DEFAULT_EPS)?;
    println!("{} coordinates, max rel err {:.2e}", rep.coordinates, rep.max_rel_error);
    let mut worst = rep.per_param.clone();
    worst.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (name, err) in worst.iter().take(5) {
        println!("  {name:<28} {err:.2e}");
    }
    Ok(())
}

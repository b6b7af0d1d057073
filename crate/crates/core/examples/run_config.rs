//! Layered run configuration: preset, then an optional file, then overrides.

use tf_mamba::config::RunConfig;

fn main() -> tf_mamba::Result<()> {
    let overrides = ["train.epochs=50".to_string(), "model.d_state=4".to_string(), "eval.missing_rate=0.3".to_string()];
    let cfg = RunConfig::resolve(Some("sims"), None, &overrides)?;
    print!("{}", cfg.to_toml()?);

    match RunConfig::resolve(Some("desk"), None, &["train.epoch=3".to_string()]) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("\nrejected: {e}"),
    }
    Ok(())
}

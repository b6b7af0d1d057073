//! Parameter and MAC accounting for the paper-scale presets, and where the
//! attention variant overtakes the scan model as length grows.

use tf_mamba::bench::{at_length, count_macs, crossover_length, total_macs, transformer_variant};
use tf_mamba::model::analytic_param_count;
use tf_mamba::{ModalShapes, ModelConfig};

fn main() -> tf_mamba::Result<()> {
    for name in ["mosi", "mosei", "sims"] {
        let (cfg, shapes) = (ModelConfig::preset(name)?, ModalShapes::preset(name)?);
        println!("{name}: {} params, {} MACs per sample", analytic_param_count(&cfg, &shapes), total_macs(&cfg, &shapes));
        for m in count_macs(&cfg, &shapes) {
            println!("    {:<22} {:>12}", m.module, m.macs);
        }
    }

    let (cfg, shapes) = (ModelConfig::preset("mosi")?, ModalShapes::preset("mosi")?);
    println!("\n{:>6} {:>14} {:>14}", "L", "TF-Mamba", "TF-Trans");
    for l in [16, 64, 256, 512, 1024] {
        let (c, s) = at_length(&cfg, &shapes, l);
        let (t, _) = at_length(&transformer_variant(&cfg), &shapes, l);
        println!("{l:>6} {:>14} {:>14}", total_macs(&c, &s), total_macs(&t, &s));
    }
    match crossover_length(&cfg, &shapes, 4096) {
        Some(x) => println!("attention variant costs more from L = {x}"),
        None => println!("no crossover below 4096"),
    }
    Ok(())
}

//! A single bidirectional Mamba block: forward pass, MAC count and a
//! finite-difference check of its parameter gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tf_mamba::numerics::{finite_difference_check, ParamStore, Tape, Tensor, DEFAULT_EPS};
use tf_mamba::ssm::{BiMambaParams, BlockConfig, ScanMode};

fn main() -> tf_mamba::Result<()> {
    let cfg = BlockConfig::new(8, 2, 4);
    let mut store = ParamStore::new();
    let block = BiMambaParams::init(&mut store, "blk", cfg, &mut ChaCha8Rng::seed_from_u64(0), None)?;
    let x = Tensor::new([10, 8], (0..80).map(|i| (i as f64 * 0.37).sin()).collect())?;

    for mode in [ScanMode::Recurrent, ScanMode::ParallelScan] {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone())?;
        let y = block.forward(&mut tape, &store, v, mode)?;
        println!("{mode:?}: output row 0 = {:.4?}  ({} MACs)", tape.value(y).row(0), tape.macs());
    }
    println!("analytic MACs at L=10: {}", BiMambaParams::macs(&cfg, 10));
    println!("parameters: {}", store.num_scalars());

    let rep = finite_difference_check(
        &mut store,
        |tape, store| {
            let v = tape.constant(x.clone())?;
            let y = block.forward(tape, store, v, ScanMode::Recurrent)?;
            let sq = tape.mul(y, y)?;
            tape.mean(sq)
        },
        DEFAULT_EPS,
    )?;
    println!("gradcheck over {} coordinates: max rel err {:.2e}", rep.coordinates, rep.max_rel_error);
    Ok(())
}

//! Parameter savings from sharing the state transitions inside each
//! text/other stream pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tf_mamba::backbone::Backbone;
use tf_mamba::numerics::ParamStore;
use tf_mamba::ssm::BlockConfig;
use tf_mamba::tc_mamba::{shared_param_count, TcBlock};
use tf_mamba::{ModalShapes, ModelConfig, TfMamba};

fn main() -> tf_mamba::Result<()> {
    let cfg = BlockConfig::new(32, 2, 8);
    for sharing in [false, true] {
        let mut store = ParamStore::new();
        TcBlock::init(&mut store, "tc", cfg, (Backbone::Mamba, 4, sharing), &mut ChaCha8Rng::seed_from_u64(0))?;
        println!(
            "sharing={sharing:<5} TC block params {} (formula {})",
            store.num_scalars(),
            shared_param_count(&cfg, 1, sharing)
        );
    }

    let shapes = ModalShapes::desk();
    let base = ModelConfig::preset("desk")?;
    let mut unshared = base.clone();
    unshared.ablation.disable_sharing = true;
    let (a, b) = (TfMamba::new(&base, shapes, 0)?, TfMamba::new(&unshared, shapes, 0)?);
    println!("desk model: shared {} vs unshared {} parameters", a.num_params(), b.num_params());
    Ok(())
}

//! Text-aware enhancement on toy features: similarity, strict threshold
//! mask, enhanced features and the masked reconstruction loss.

use tf_mamba::numerics::{Tape, Tensor};
use tf_mamba::tme::{self, RecTarget};

fn main() -> tf_mamba::Result<()> {
    let text = Tensor::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.7, 0.7, 0.0],
    ])?;
    let audio = Tensor::from_rows(&[
        vec![0.9, 0.1, 0.0],
        vec![-0.3, 0.1, -0.2],
        vec![0.1, 0.2, 0.9],
        vec![0.5, 0.5, 0.1],
    ])?;
    let mut tape = Tape::new();
    let (a, t) = (tape.constant(audio)?, tape.constant(text.clone())?);
    let s = tme::token_similarity(&mut tape, a, t, tme::DEFAULT_TAU)?;
    let mask = tme::threshold_mask(tape.value(s), None)?;
    let e = tme::enhance(&mut tape, a, s, &mask, t)?;
    for i in 0..4 {
        println!("S[{i}] = {:.3?}   mask = {:?}", tape.value(s).row(i), mask.row(i));
    }
    for i in 0..4 {
        println!("E[{i}] = {:.3?}", tape.value(e).row(i));
    }

    // rows 1 and 3 of the text were erased; only they enter the loss
    let recon = Tensor::from_rows(&[vec![0.0; 3], vec![0.2, 0.6, 0.1], vec![5.0; 3], vec![0.7, 0.2, 0.0]])?;
    let (c, r) = (tape.constant(text)?, tape.constant(recon)?);
    let loss = tme::recon_loss(&mut tape, c, r, &[1.0, 0.0, 1.0, 0.0], RecTarget::Missing)?;
    println!("masked Smooth-L1 over the two missing rows: {:.5}", tape.scalar(loss)?);
    Ok(())
}

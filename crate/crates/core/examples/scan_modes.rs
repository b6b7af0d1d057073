//! The three scan strategies on one random selective system, plus the
//! discretized transition for a few step sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tf_mamba::ssm::{discretize, scan_kernel, scan_parallel, scan_recurrent, ScanInputs};

fn main() -> tf_mamba::Result<()> {
    let (l, k, n) = (32, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draw = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
    let x = draw(l * k, -1.0, 1.0);
    let a = draw(k * n, -2.0, -0.1);
    let d = draw(k, -1.0, 1.0);
    // time-invariant Δ, B, C so the convolution kernel view applies too
    let delta = draw(k, 0.01, 0.3).repeat(l);
    let b = draw(n, -1.0, 1.0).repeat(l);
    let c = draw(n, -1.0, 1.0).repeat(l);
    let inp = ScanInputs { len: l, channels: k, state: n, x: &x, delta: &delta, a: &a, b: &b, c: &c, d_skip: &d };

    let rec = scan_recurrent(&inp)?.y;
    let par = scan_parallel(&inp)?.y;
    let ker = scan_kernel(&inp)?;
    let gap = |u: &[f64]| rec.iter().zip(u).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("L={l} K={k} N={n}");
    println!("  recurrent vs parallel  max |diff| {:.2e}", gap(&par));
    println!("  recurrent vs kernel    max |diff| {:.2e}", gap(&ker));
    println!("  y[last] = {:?}", &rec[(l - 1) * k..]);

    println!("\nZOH of A = -1, B = 1:");
    for step in [1e-6, 0.01, 0.1, 1.0, 5.0] {
        let (ab, bb) = discretize(&[-1.0], &[1.0], step)?;
        println!("  Δ = {step:<6}  Ā = {:.12}  B̄ = {:.12}", ab[0], bb[0]);
    }
    Ok(())
}

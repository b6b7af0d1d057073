//! End-to-end acceptance suite. Every criterion runs inside one test so the
//! expensive ones never share the CPU, and each prints a PASS/FAIL line.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tf_mamba::backbone::{Backbone, SeqBlock};
use tf_mamba::bench::{block_macs, cross_attention_macs, instrumented_macs, total_macs, transformer_variant};
use tf_mamba::checkpoint::{file_sha256, save_checkpoint};
use tf_mamba::data::{generate, Dataset, GenerateConfig, LabelRange, Split};
use tf_mamba::harness::{
    corrupt, evaluate_sweep, sweep_rates, train, CorruptionMode, Metrics, Modality, TrainConfig,
};
use tf_mamba::model::{analytic_param_count, gradcheck, CorruptedSample};
use tf_mamba::numerics::{ParamStore, Tape, Tensor, Var, DEFAULT_EPS};
use tf_mamba::ssm::{discretize, scan_kernel, scan_parallel, scan_recurrent, zoh, BlockConfig, ScanInputs, ScanMode};
use tf_mamba::tc_mamba::{shared_param_count, TcBlock, TcPair};
use tf_mamba::tme::{self, RecTarget};
use tf_mamba::{ModalShapes, ModelConfig, TfMamba};

const SCAN_RTOL: f64 = 1e-9;
const SCAN_BUDGET_S: f64 = 10.0;
const ZOH_RTOL: f64 = 1e-12;
const ZOH_LIMIT_TOL: f64 = 1e-8;
const GRAD_RTOL: f64 = 1e-4;
const GRAD_BUDGET_S: f64 = 300.0;
const SHARED_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-9;
const OVERFIT_MAE: f64 = 0.1;
const OVERFIT_EPOCHS: usize = 500;
const MEAN_TOL: f64 = 1e-12;
const SEEDS: [u64; 3] = [0, 1, 2];

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn scan_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (l, k, n) = (rng.gen_range(1..=64), rng.gen_range(1..=4), rng.gen_range(1..=16));
        let mut v = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
        let x = v(l * k, -1.0, 1.0);
        let a = v(k * n, -3.0, -0.05);
        let d = v(k, -1.0, 1.0);
        let delta = v(k, 0.01, 0.5).repeat(l);
        let b = v(n, -1.0, 1.0).repeat(l);
        let c = v(n, -1.0, 1.0).repeat(l);
        let inp = ScanInputs {
            len: l,
            channels: k,
            state: n,
            x: &x,
            delta: &delta,
            a: &a,
            b: &b,
            c: &c,
            d_skip: &d,
        };
        let rec = scan_recurrent(&inp).map_err(|e| e.to_string())?.y;
        let ker = scan_kernel(&inp).map_err(|e| e.to_string())?;
        let par = scan_parallel(&inp).map_err(|e| e.to_string())?.y;
        for i in 0..rec.len() {
            let scale = rec[i].abs().max(1.0);
            worst = worst.max((rec[i] - ker[i]).abs() / scale).max((rec[i] - par[i]).abs() / scale);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        worst <= SCAN_RTOL && secs < SCAN_BUDGET_S,
        format!("50 LTI instances, max rel diff {worst:.2e} (tol {SCAN_RTOL:.0e}), {secs:.2}s (budget {SCAN_BUDGET_S:.0}s)"),
    )
}

/// Fixed-point big-integer arithmetic with `FRAC` fractional bits, used as
/// a high-precision reference for `exp` and `expm1`.
const FRAC: u64 = 320;

fn to_fixed(x: f64) -> BigInt {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    assert!(exp > 0, "subnormal input");
    let shift = exp - 1075 + FRAC as i64;
    let m = BigInt::from(mant);
    let v = if shift >= 0 { m << shift as u64 } else { m >> (-shift) as u64 };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

fn from_fixed(v: &BigInt) -> f64 {
    v.to_f64().unwrap() / 2f64.powi(FRAC as i32)
}

fn fixed_expm1(x: &BigInt) -> BigInt {
    let mut term = x.clone();
    let mut sum = BigInt::zero();
    let mut k = 1u32;
    while !term.is_zero() {
        sum += &term;
        k += 1;
        term = (term * x >> FRAC) / k;
    }
    sum
}

fn discretization_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let one = BigInt::from(1) << FRAC;
    let (mut wa, mut wb) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let a = -10f64.powf(rng.gen_range(-3.0..1.0));
        let delta = 10f64.powf(rng.gen_range(-4.0..0.0));
        let b = rng.gen_range(-2.0..2.0);
        let (ab, bb) = discretize(&[a], &[b], delta).map_err(|e| e.to_string())?;
        let x = (to_fixed(delta) * to_fixed(a)) >> FRAC;
        let em1 = fixed_expm1(&x);
        let want_a = from_fixed(&(&one + &em1));
        let want_b = from_fixed(&(((em1 << FRAC) / to_fixed(a)) * to_fixed(b) >> FRAC));
        wa = wa.max(rel_err(ab[0], want_a));
        wb = wb.max(rel_err(bb[0], want_b));
    }
    let mut limit = 0.0f64;
    for a in [-0.5, -1.0, -4.0, -16.0] {
        for delta in [1e-10, 1e-12, 1e-14] {
            let (ab, f) = zoh(a, delta);
            limit = limit.max((ab - 1.0).abs()).max((f / delta - 1.0).abs());
        }
    }
    ensure(
        wa <= ZOH_RTOL && wb <= ZOH_RTOL && limit <= ZOH_LIMIT_TOL,
        format!("1000 triples, max rel err A {wa:.2e} B {wb:.2e} (tol {ZOH_RTOL:.0e}); limit dev {limit:.2e}"),
    )
}

fn desk_batch(n: usize, seed: u64) -> (Dataset, Vec<CorruptedSample>) {
    let ds = generate(&GenerateConfig::desk(seed)).unwrap();
    let xs = corrupt(&ds.split(Split::Train)[..n], &ds.unknown_text, &CorruptionMode::TestFixed(0.3), seed, 0).unwrap();
    (ds, xs)
}

fn full_model_gradcheck() -> Outcome {
    let cfg = ModelConfig::preset("desk").unwrap();
    let (ds, batch) = desk_batch(1, 0);
    let mut model = TfMamba::new(&cfg, ds.manifest.shapes, 0).unwrap();
    let t0 = Instant::now();
    let rep = gradcheck(&mut model, &batch, 0.7, DEFAULT_EPS).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let tensors = model.store.len();
    ensure(
        rep.passes(GRAD_RTOL) && secs < GRAD_BUDGET_S && rep.coordinates == model.num_params(),
        format!(
            "{} coordinates over {tensors} tensors, max rel err {:.2e} at {}[{}] (tol {GRAD_RTOL:.0e}), {secs:.0}s (budget {GRAD_BUDGET_S:.0}s)",
            rep.coordinates,
            rep.max_rel_error,
            rep.worst_param.as_deref().unwrap_or("-"),
            rep.worst_index
        ),
    )
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new([r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn probe_loss(tape: &mut Tape, y: Var, probe: &Tensor) -> Var {
    let p = tape.constant(probe.clone()).unwrap();
    let m = tape.mul(y, p).unwrap();
    tape.sum(m).unwrap()
}

fn shared_transitions() -> Outcome {
    let cfg = BlockConfig::new(8, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let pair = TcPair::init(&mut store, "p", cfg, (Backbone::Mamba, 2, true), &mut rng).unwrap();
    let shared = pair.shared.unwrap();
    let (xt, xo, pt, po) = (
        rand_tensor(&mut rng, 7, 8),
        rand_tensor(&mut rng, 7, 8),
        rand_tensor(&mut rng, 7, 8),
        rand_tensor(&mut rng, 7, 8),
    );
    let isolated = |store: &mut ParamStore, block: &SeqBlock, x: &Tensor, probe: &Tensor| {
        store.zero_grad();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone()).unwrap();
        let y = block.forward(&mut tape, store, v, ScanMode::Recurrent).unwrap();
        let l = probe_loss(&mut tape, y, probe);
        tape.backward(l, store).unwrap();
        [store.grad(shared.forward).clone(), store.grad(shared.backward).clone()]
    };
    let gt = isolated(&mut store, &pair.text, &xt, &pt);
    let go = isolated(&mut store, &pair.other, &xo, &po);
    store.zero_grad();
    let mut tape = Tape::new();
    let (vt, vo) = (tape.constant(xt).unwrap(), tape.constant(xo).unwrap());
    let yt = pair.text.forward(&mut tape, &store, vt, ScanMode::Recurrent).unwrap();
    let yo = pair.other.forward(&mut tape, &store, vo, ScanMode::Recurrent).unwrap();
    let (lt, lo) = (probe_loss(&mut tape, yt, &pt), probe_loss(&mut tape, yo, &po));
    let l = tape.add(lt, lo).unwrap();
    tape.backward(l, &mut store).unwrap();
    let mut worst = 0.0f64;
    for (k, id) in [shared.forward, shared.backward].into_iter().enumerate() {
        for (i, g) in store.grad(id).data().iter().enumerate() {
            worst = worst.max((g - gt[k].data()[i] - go[k].data()[i]).abs());
        }
    }

    let mut counts_ok = true;
    for sharing in [true, false] {
        let mut s = ParamStore::new();
        TcBlock::init(&mut s, "tc", cfg, (Backbone::Mamba, 2, sharing), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        counts_ok &= s.num_scalars() == shared_param_count(&cfg, 1, sharing);
    }
    let shapes = ModalShapes::desk();
    let base = ModelConfig::preset("desk").unwrap();
    let mut unshared = base.clone();
    unshared.ablation.disable_sharing = true;
    for c in [&base, &unshared] {
        counts_ok &= TfMamba::new(c, shapes, 0).unwrap().num_params() == analytic_param_count(c, &shapes);
    }
    let b = base.block();
    counts_ok &= analytic_param_count(&unshared, &shapes) - analytic_param_count(&base, &shapes)
        == base.tc_depth * 2 * 2 * b.inner() * b.d_state;
    ensure(
        worst <= SHARED_TOL && counts_ok,
        format!("joint minus summed gradient {worst:.2e} (tol {SHARED_TOL:.0e}); parameter counts exact: {counts_ok}"),
    )
}

fn tme_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_row = 0.0f64;
    for _ in 0..20 {
        let (l, d) = (rng.gen_range(1..16), rng.gen_range(1..9));
        let (hx, ht) = (rand_tensor(&mut rng, l, d), rand_tensor(&mut rng, l, d));
        let mut tape = Tape::new();
        let (x, t) = (tape.constant(hx).unwrap(), tape.constant(ht).unwrap());
        let s = tme::token_similarity(&mut tape, x, t, tme::DEFAULT_TAU).unwrap();
        let s = tape.value(s);
        for i in 0..l {
            worst_row = worst_row.max((s.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }

    let hx = rand_tensor(&mut rng, 6, 4);
    let ht = Tensor::from_rows(&vec![vec![0.3, -0.2, 0.9, 0.1]; 6]).unwrap();
    let mut tape = Tape::new();
    let (x, t) = (tape.constant(hx.clone()).unwrap(), tape.constant(ht).unwrap());
    let s = tme::token_similarity(&mut tape, x, t, tme::DEFAULT_TAU).unwrap();
    let mask = tme::threshold_mask(tape.value(s), None).unwrap();
    let mask_zero = mask.data().iter().all(|&m| m == 0.0);
    let e = tme::enhance(&mut tape, x, s, &mask, t).unwrap();
    let unchanged = tape.value(e) == &hx;

    let mut store = ParamStore::new();
    let rid = store.add("recon", rand_tensor(&mut rng, 5, 3));
    let clean = rand_tensor(&mut rng, 5, 3);
    let presence = [1.0, 0.0, 1.0, 0.0, 0.0];
    let mut tape = Tape::new();
    let c = tape.constant(clean).unwrap();
    let r = tape.param(&store, rid).unwrap();
    let loss = tme::recon_loss(&mut tape, c, r, &presence, RecTarget::Missing).unwrap();
    tape.backward(loss, &mut store).unwrap();
    let g = store.grad(rid);
    let observed_zero = [0, 2].iter().all(|&i| g.row(i).iter().all(|&v| v == 0.0));

    let mut tape = Tape::new();
    let c = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap()).unwrap();
    let r = tape.constant(Tensor::from_rows(&[vec![7.0], vec![1.5]]).unwrap()).unwrap();
    let loss = tme::recon_loss(&mut tape, c, r, &[1.0, 0.0], RecTarget::Missing).unwrap();
    let half = tape.scalar(loss).unwrap();

    ensure(
        worst_row <= ROW_SUM_TOL && mask_zero && unchanged && observed_zero && half == 0.125,
        format!(
            "row sum dev {worst_row:.1e}; uniform mask zero {mask_zero}, E == H {unchanged}; observed grad zero {observed_zero}; half-unit loss {half}"
        ),
    )
}

fn bits(xs: &[CorruptedSample]) -> Vec<u64> {
    xs.iter()
        .flat_map(|x| {
            x.text
                .data()
                .iter()
                .chain(x.visual.data())
                .chain(x.audio.data())
                .chain(x.presence.iter().flatten())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn corruption_protocol() -> Outcome {
    let mut g = GenerateConfig::desk(1);
    g.samples = 40;
    let ds = generate(&g).unwrap();
    let s = ds.manifest.shapes;
    let run = |mode: &CorruptionMode, seed| corrupt(&ds.samples, &ds.unknown_text, mode, seed, 0).unwrap();

    let clean = run(&CorruptionMode::TestFixed(0.0), 3);
    let identity = clean.iter().zip(&ds.samples).all(|(x, o)| {
        (&x.text, &x.visual, &x.audio) == (&o.text, &o.visual, &o.audio)
            && x.presence.iter().flatten().all(|&p| p == 1.0)
    });

    let mut counts = true;
    let mut replaced = true;
    for r in sweep_rates() {
        for (x, o) in run(&CorruptionMode::TestFixed(r), 9).iter().zip(&ds.samples) {
            for (m, t) in [(0, s.text.0), (1, s.visual.0), (2, s.audio.0)] {
                counts &= x.presence[m].iter().filter(|&&p| p == 0.0).count() == (r * t as f64).round() as usize;
            }
            for i in 0..s.text.0 {
                let want = if x.presence[0][i] == 0.0 { ds.unknown_text.as_slice() } else { o.text.row(i) };
                replaced &= x.text.row(i) == want;
            }
            for (m, feat, orig) in [(1, &x.visual, &o.visual), (2, &x.audio, &o.audio)] {
                for i in 0..feat.rows() {
                    replaced &= if x.presence[m][i] == 0.0 {
                        feat.row(i).iter().all(|&v| v == 0.0)
                    } else {
                        feat.row(i) == orig.row(i)
                    };
                }
            }
        }
    }

    let rejected = corrupt(&ds.samples, &ds.unknown_text, &CorruptionMode::TestFixed(1.0), 0, 0).is_err();

    let cm = run(&CorruptionMode::CompleteMissing(vec![Modality::Text]), 0);
    let complete = cm.iter().zip(&ds.samples).all(|(x, o)| {
        x.presence[0].iter().all(|&p| p == 0.0)
            && x.presence[1].iter().chain(&x.presence[2]).all(|&p| p == 1.0)
            && (&x.visual, &x.audio) == (&o.visual, &o.audio)
    });

    let mut repro = true;
    for mode in [CorruptionMode::TrainUncertain, CorruptionMode::TestFixed(0.5)] {
        repro &= bits(&run(&mode, 7)) == bits(&run(&mode, 7));
    }
    ensure(
        identity && counts && replaced && rejected && complete && repro,
        format!(
            "identity {identity}; rounded counts {counts}; placeholders {replaced}; r=1.0 rejected {rejected}; complete-missing {complete}; reproducible {repro}"
        ),
    )
}

/// Clean-input MAE on the first 32 training samples after 500 epochs of
/// the default recipe, using the paper's 128-wide model.
fn overfit_mae() -> tf_mamba::Result<f64> {
    let ds = generate(&GenerateConfig::desk(0))?;
    let cfg = ModelConfig {
        d_model: 128,
        d_state: 12,
        expand: 4,
        ..ModelConfig::preset("desk")?
    };
    let subset = &ds.split(Split::Train)[..32];
    let mut model = TfMamba::new(&cfg, ds.manifest.shapes, 0)?;
    let tc = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        ..TrainConfig::default()
    };
    train(&mut model, subset, &[], &ds.unknown_text, &tc, 0, |_| {})?;
    let xs = corrupt(subset, &ds.unknown_text, &CorruptionMode::TestFixed(0.0), 0, 0)?;
    let preds = model.net.predict(&model.store, &xs)?;
    Ok(preds.iter().zip(subset).map(|(p, s)| (p - s.label).abs()).sum::<f64>() / subset.len() as f64)
}

struct DeskRun {
    sweep_mae: f64,
    acc2_clean: f64,
    acc2_r09: f64,
}

/// Default-recipe training of the desk model on the full training split,
/// scored on the test split with the best-validation parameters.
fn desk_run(ds: &Dataset, variant: &str, seed: u64) -> tf_mamba::Result<DeskRun> {
    let mut cfg = ModelConfig::preset("desk")?;
    cfg.ablation.disable_tme = variant == "no-tme";
    cfg.ablation.disable_reconstruction = variant == "no-rec";
    let mut model = TfMamba::new(&cfg, ds.manifest.shapes, seed)?;
    let rep = train(
        &mut model,
        ds.split(Split::Train),
        ds.split(Split::Valid),
        &ds.unknown_text,
        &TrainConfig::default(),
        seed,
        |_| {},
    )?;
    let store = rep.best.as_ref().unwrap_or(&model.store);
    let sweep = evaluate_sweep(&model.net, store, ds.split(Split::Test), &ds.unknown_text, seed, LabelRange::English)?;
    Ok(DeskRun {
        sweep_mae: sweep.average.mae,
        acc2_clean: sweep.rows[0].metrics.acc2_pos,
        acc2_r09: sweep.rows[9].metrics.acc2_pos,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

static DESK_RUNS: OnceLock<Result<Vec<(&'static str, Vec<DeskRun>)>, String>> = OnceLock::new();

fn desk_runs() -> Result<&'static [(&'static str, Vec<DeskRun>)], String> {
    DESK_RUNS
        .get_or_init(|| {
            let ds = generate(&GenerateConfig::desk(0)).map_err(|e| e.to_string())?;
            ["full", "no-tme", "no-rec"]
                .into_iter()
                .map(|v| {
                    let runs = SEEDS.iter().map(|&s| desk_run(&ds, v, s)).collect::<tf_mamba::Result<Vec<_>>>();
                    runs.map(|r| (v, r)).map_err(|e| e.to_string())
                })
                .collect()
        })
        .as_deref()
        .map_err(Clone::clone)
}

fn toy_task_learning() -> Outcome {
    let overfit = overfit_mae().map_err(|e| e.to_string())?;
    let full = &desk_runs()?[0].1;
    let clean = mean(full.iter().map(|r| r.acc2_clean));
    let heavy = mean(full.iter().map(|r| r.acc2_r09));
    ensure(
        overfit < OVERFIT_MAE && clean > heavy,
        format!(
            "32-sample train MAE {overfit:.4} after {OVERFIT_EPOCHS} epochs (need < {OVERFIT_MAE}); held-out Acc-2 over {} seeds: r=0 {clean:.3} vs r=0.9 {heavy:.3}",
            SEEDS.len()
        ),
    )
}

fn ablation_direction() -> Outcome {
    let runs = desk_runs()?;
    let maes: Vec<(&str, f64)> = runs.iter().map(|(v, r)| (*v, mean(r.iter().map(|x| x.sweep_mae)))).collect();
    let full = maes[0].1;
    let worse = maes[1..].iter().all(|(_, m)| *m > full);
    let listing: Vec<String> = maes.iter().map(|(v, m)| format!("{v} {m:.4}")).collect();
    ensure(
        worse,
        format!("held-out sweep MAE over {} seeds: {}", SEEDS.len(), listing.join(", ")),
    )
}

fn complexity() -> Outcome {
    let cfg = ModelConfig::preset("mosi").unwrap();
    let shapes = ModalShapes::preset("mosi").unwrap();
    let l = cfg.seq_len;
    let scan = block_macs(&cfg, 2 * l).0 as f64 / block_macs(&cfg, l).0 as f64;
    let att = cross_attention_macs(&cfg, 2 * l) as f64 / cross_attention_macs(&cfg, l) as f64;
    let (c, s) = tf_mamba::bench::at_length(&cfg, &shapes, 512);
    let (t, _) = tf_mamba::bench::at_length(&transformer_variant(&cfg), &shapes, 512);
    let (fm, ft) = (total_macs(&c, &s), total_macs(&t, &s));

    let mut instrumented = true;
    for (len, trans, depth) in [(5, false, 1), (7, true, 1), (6, false, 2), (4, true, 2)] {
        let mut small = ModelConfig {
            seq_len: len,
            d_model: 8,
            d_state: 3,
            expand: 2,
            heads: 2,
            tc_depth: depth,
            tq_depth: depth,
            ..ModelConfig::preset("desk").unwrap()
        };
        small.ablation.replace_scans_with_attention = trans;
        let sh = ModalShapes {
            text: (len, 6),
            visual: (len + 3, 5),
            audio: (2 * len, 4),
        };
        let mut g = GenerateConfig::desk(3);
        g.samples = 1;
        g.shapes = sh;
        let d = generate(&g).unwrap();
        let x = corrupt(&d.samples, &d.unknown_text, &CorruptionMode::TestFixed(0.3), 3, 0).unwrap();
        let m = TfMamba::new(&small, sh, 1).unwrap();
        instrumented &= instrumented_macs(&m, &x[0]).unwrap() == total_macs(&small, &sh);
    }
    ensure(
        (1.9..=2.1).contains(&scan) && (3.8..=4.2).contains(&att) && ft > fm && instrumented,
        format!(
            "scan 2L/L {scan:.3}; cross-attention 2L/L {att:.3}; at L=512 TF-Trans {ft} vs TF-Mamba {fm} MACs; instrumented counts match {instrumented}"
        ),
    )
}

fn metric_fields(m: &Metrics) -> Vec<(String, f64)> {
    let v = serde_json::to_value(m).unwrap();
    v.as_object()
        .unwrap()
        .iter()
        .filter_map(|(k, x)| x.as_f64().map(|f| (k.clone(), f)))
        .collect()
}

fn sweep_shape() -> Outcome {
    let mut g = GenerateConfig::desk(1);
    g.samples = 60;
    let ds = generate(&g).unwrap();
    let m = TfMamba::new(&ModelConfig::preset("desk").unwrap(), ds.manifest.shapes, 0).unwrap();
    let rep = evaluate_sweep(&m.net, &m.store, ds.split(Split::Test), &ds.unknown_text, 0, LabelRange::English)
        .map_err(|e| e.to_string())?;
    let rates: Vec<f64> = rep.rows.iter().map(|r| r.rate).collect();
    let rates_ok = rates == sweep_rates();
    let mut worst = 0.0f64;
    for (i, (name, avg)) in metric_fields(&rep.average).into_iter().enumerate() {
        let mean = rep.rows.iter().map(|r| metric_fields(&r.metrics)[i].1).sum::<f64>() / rep.rows.len() as f64;
        assert_eq!(name, metric_fields(&rep.rows[0].metrics)[i].0);
        worst = worst.max((avg - mean).abs());
    }
    let csv = rep.to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let csv_ok = lines.len() == 12 && lines[11].starts_with("avg,");
    ensure(
        rep.rows.len() == 10 && rates_ok && worst <= MEAN_TOL && csv_ok,
        format!("{} rate rows, rates 0.0..0.9 {rates_ok}; avg row off by {worst:.1e} (tol {MEAN_TOL:.0e}); csv rows {}", rep.rows.len(), lines.len()),
    )
}

fn run_artifacts(dir: &Path) -> Vec<String> {
    let mut g = GenerateConfig::desk(5);
    g.samples = 48;
    let ds = generate(&g).unwrap();
    let cfg = ModelConfig::preset("desk").unwrap();
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 16,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut m = TfMamba::new(&cfg, ds.manifest.shapes, 9).unwrap();
    let rep = train(&mut m, ds.split(Split::Train), ds.split(Split::Valid), &ds.unknown_text, &tc, 9, |_| {}).unwrap();
    save_checkpoint(&dir.join("checkpoint.tfck"), &m.store).unwrap();
    rep.write_curve_csv(&dir.join("loss.csv")).unwrap();
    evaluate_sweep(&m.net, &m.store, ds.split(Split::Test), &ds.unknown_text, 9, LabelRange::English)
        .unwrap()
        .write(dir, "sweep")
        .unwrap();
    ["checkpoint.tfck", "loss.csv", "sweep.csv", "sweep.json"]
        .iter()
        .map(|f| file_sha256(&dir.join(f)).unwrap())
        .collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ha, hb) = (run_artifacts(a.path()), run_artifacts(b.path()));
    ensure(ha == hb, format!("checkpoint sha256 {}…; {} files identical: {}", &ha[0][..12], ha.len(), ha == hb))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("scan equivalence", scan_equivalence),
        ("discretization exactness", discretization_exactness),
        ("full-model gradient check", full_model_gradcheck),
        ("shared-transition correctness", shared_transitions),
        ("TME invariants", tme_invariants),
        ("corruption protocol", corruption_protocol),
        ("toy-task learning", toy_task_learning),
        ("ablation direction", ablation_direction),
        ("complexity", complexity),
        ("sweep output shape", sweep_shape),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().parse().unwrap()).collect());
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let out = f();
        let secs = t0.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("criterion {n:>2} {name}: PASS  {d}  [{secs:.1}s]"),
            Err(d) => {
                println!("criterion {n:>2} {name}: FAIL  {d}  [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

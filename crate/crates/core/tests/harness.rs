use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tf_mamba::data::{generate, GenerateConfig, LabelRange, Split};
use tf_mamba::harness::{
    corrupt, erased_positions, evaluate_sweep, metrics, sweep_rates, task_loss, total_loss, train, AdamW,
    AdamWConfig, CorruptionMode, LrSchedule, Modality, TrainConfig,
};
use tf_mamba::numerics::{ParamStore, Tape, Tensor};
use tf_mamba::{ModelConfig, TfMamba};

fn desk() -> tf_mamba::data::Dataset {
    let mut g = GenerateConfig::desk(1);
    g.samples = 40;
    generate(&g).unwrap()
}

#[test]
fn zero_rate_is_identity() {
    let ds = desk();
    let xs = corrupt(&ds.samples, &ds.unknown_text, &CorruptionMode::TestFixed(0.0), 3, 0).unwrap();
    for (x, s) in xs.iter().zip(&ds.samples) {
        assert_eq!((&x.text, &x.visual, &x.audio), (&s.text, &s.visual, &s.audio));
        assert!(x.presence.iter().all(|p| p.iter().all(|&v| v == 1.0)));
    }
}

#[test]
fn fixed_rate_erases_rounded_count() {
    let ds = desk();
    let s = ds.manifest.shapes;
    for r in sweep_rates() {
        let xs = corrupt(&ds.samples, &ds.unknown_text, &CorruptionMode::TestFixed(r), 9, 0).unwrap();
        for (x, orig) in xs.iter().zip(&ds.samples) {
            for (m, t) in [(0, s.text.0), (1, s.visual.0), (2, s.audio.0)] {
                let missing = x.presence[m].iter().filter(|&&p| p == 0.0).count();
                assert_eq!(missing, (r * t as f64).round() as usize, "r={r} m={m}");
            }
            for i in 0..s.text.0 {
                let row = x.text.row(i);
                if x.presence[0][i] == 0.0 {
                    assert_eq!(row, ds.unknown_text.as_slice());
                } else {
                    assert_eq!(row, orig.text.row(i));
                }
            }
            for i in 0..s.audio.0 {
                if x.presence[2][i] == 0.0 {
                    assert!(x.audio.row(i).iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}

#[test]
fn off_grid_and_full_rates_rejected() {
    let ds = desk();
    for r in [1.0, 0.25, -0.1, 0.95] {
        assert!(corrupt(&ds.samples, &ds.unknown_text, &CorruptionMode::TestFixed(r), 0, 0).is_err(), "{r}");
    }
}

#[test]
fn complete_missing_touches_only_named_modalities() {
    let ds = desk();
    let mode = CorruptionMode::CompleteMissing(vec![Modality::Text]);
    let xs = corrupt(&ds.samples, &ds.unknown_text, &mode, 0, 0).unwrap();
    for (x, s) in xs.iter().zip(&ds.samples) {
        assert!(x.presence[0].iter().all(|&p| p == 0.0));
        assert!(x.presence[1].iter().chain(&x.presence[2]).all(|&p| p == 1.0));
        assert_eq!((&x.visual, &x.audio), (&s.visual, &s.audio));
        assert_eq!(x.clean_text, s.text);
    }
}

#[test]
fn corruption_is_reproducible_and_seed_sensitive() {
    let ds = desk();
    let run = |seed| corrupt(&ds.samples, &ds.unknown_text, &CorruptionMode::TrainUncertain, seed, 4).unwrap();
    let (a, b, c) = (run(7), run(7), run(8));
    let bits = |xs: &[tf_mamba::model::CorruptedSample]| {
        xs.iter()
            .flat_map(|x| x.text.data().iter().chain(x.visual.data()).chain(x.audio.data()).map(|v| v.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

proptest! {
    #[test]
    fn erased_positions_are_distinct_and_exact(seed in any::<u64>(), t in 1usize..80, tenths in 0usize..10) {
        let r = tenths as f64 / 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = erased_positions(&mut rng, t, r);
        prop_assert_eq!(p.len(), (r * t as f64).round() as usize);
        prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(p.iter().all(|&i| i < t));
    }

    #[test]
    fn metrics_ignore_sample_order(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (ys, ps): (Vec<f64>, Vec<f64>) = idx.iter().map(|&i| (y[i], p[i])).unzip();
        let a = metrics(&y, &p, LabelRange::English).unwrap();
        let b = metrics(&ys, &ps, LabelRange::English).unwrap();
        prop_assert_eq!((a.acc7, a.acc5, a.acc2_pos, a.f1_nonneg), (b.acc7, b.acc5, b.acc2_pos, b.f1_nonneg));
        prop_assert!((a.mae - b.mae).abs() < 1e-12 && (a.corr - b.corr).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_linear_in_lambda(task in -5.0f64..5.0, rec in 0.0f64..5.0, lambda in 0.0f64..3.0) {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::scalar(task)).unwrap();
        let r = tape.constant(Tensor::scalar(rec)).unwrap();
        let l = total_loss(&mut tape, t, r, lambda).unwrap();
        prop_assert!((tape.scalar(l).unwrap() - (task + lambda * rec)).abs() < 1e-12);
    }
}

#[test]
fn accuracy_rounds_then_compares() {
    let m = metrics(&[1.0, -3.0], &[1.4, -2.6], LabelRange::English).unwrap();
    assert_eq!(m.acc7, 1.0);
    let m = metrics(&[-1.0, 1.0], &[1.0, -1.0], LabelRange::English).unwrap();
    assert_eq!((m.acc2_pos, m.mae), (0.0, 2.0));
    let m = metrics(&[0.5, -2.0, 2.9], &[0.5, -2.0, 2.9], LabelRange::English).unwrap();
    assert_eq!((m.mae, m.acc7), (0.0, 1.0));
    assert!((m.corr - 1.0).abs() < 1e-12);
}

#[test]
fn zero_labels_split_the_two_binary_conventions() {
    let m = metrics(&[0.0, 1.0, -1.0], &[0.5, 2.0, -0.3], LabelRange::English).unwrap();
    assert_eq!(m.acc2_pos, 1.0);
    assert_eq!(m.acc2_nonneg, 1.0);
    let m = metrics(&[0.0, 1.0, -1.0], &[-0.5, 2.0, -0.3], LabelRange::English).unwrap();
    assert_eq!(m.acc2_pos, 1.0);
    assert!((m.acc2_nonneg - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn sims_bins_use_toolkit_cut_points() {
    let m = metrics(&[0.65, 0.15, -0.3], &[0.61, 0.19, -0.59], LabelRange::Sims).unwrap();
    assert_eq!(m.acc5, 1.0);
    let m = metrics(&[0.05, 0.15], &[0.11, 0.09], LabelRange::Sims).unwrap();
    assert_eq!(m.acc3, 0.0);
}

#[test]
fn constant_predictor_reports_flagged_zero_correlation() {
    let m = metrics(&[1.0, -1.0, 2.0], &[0.3, 0.3, 0.3], LabelRange::English).unwrap();
    assert_eq!(m.corr, 0.0);
    assert!(m.corr_degenerate);
    assert!(metrics(&[], &[], LabelRange::English).is_err());
}

#[test]
fn losses_by_hand() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::new([2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
    let task = task_loss(&mut tape, p, &[3.0, 1.0]).unwrap();
    assert_eq!(tape.scalar(task).unwrap(), 2.5);
    let rec = tape.constant(Tensor::scalar(0.125)).unwrap();
    let total = total_loss(&mut tape, task, rec, 1.0).unwrap();
    assert_eq!(tape.scalar(total).unwrap(), 2.625);
    assert!(total_loss(&mut tape, task, rec, -0.1).is_err());
}

#[test]
fn schedule_warms_up_then_anneals_to_zero() {
    let s = LrSchedule::new(1e-3, 100, 0.05);
    assert_eq!(s.warmup, 5);
    assert!((s.at(0) - 2e-4).abs() < 1e-18);
    assert!((s.at(4) - 1e-3).abs() < 1e-18);
    let cosine = |i: usize| 0.5e-3 * (1.0 + (std::f64::consts::PI * (i - 4) as f64 / 95.0).cos());
    for i in 5..100 {
        assert!((s.at(i) - cosine(i)).abs() < 1e-18);
    }
    assert!(s.at(99).abs() < 1e-18);
    assert!((1..100).skip(5).all(|i| s.at(i) <= s.at(i - 1)));
}

#[test]
fn adamw_first_step_moves_by_lr_and_decays() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![1.0, -2.0]));
    store.get_mut(id).grad = Tensor::vector(vec![0.5, -3.0]);
    let mut opt = AdamW::new(AdamWConfig::default(), &store);
    opt.step(&mut store, 0.1);
    let w = store.value(id).data();
    let want = |x: f64, g: f64| x * (1.0 - 0.1 * 0.01) - 0.1 * g / (g.abs() + 1e-8);
    assert!((w[0] - want(1.0, 0.5)).abs() < 1e-15, "{}", w[0]);
    assert!((w[1] - want(-2.0, -3.0)).abs() < 1e-15, "{}", w[1]);
}

#[test]
fn sweep_reports_ten_rates_and_their_mean() {
    let ds = desk();
    let cfg = ModelConfig::preset("desk").unwrap();
    let m = TfMamba::new(&cfg, ds.manifest.shapes, 0).unwrap();
    let rep = evaluate_sweep(&m.net, &m.store, ds.split(Split::Test), &ds.unknown_text, 0, LabelRange::English).unwrap();
    assert_eq!(rep.rows.len(), 10);
    assert!(rep.rows.windows(2).all(|w| w[0].rate < w[1].rate));
    let mean = rep.rows.iter().map(|r| r.metrics.mae).sum::<f64>() / 10.0;
    assert!((rep.average.mae - mean).abs() < 1e-12);
    let csv = rep.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert!(csv.lines().last().unwrap().starts_with("avg,"));
}

#[test]
fn short_training_reduces_loss_and_is_deterministic() {
    let ds = desk();
    let cfg = ModelConfig::preset("desk").unwrap();
    let tc = TrainConfig {
        lr: 1e-3,
        epochs: 6,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = TfMamba::new(&cfg, ds.manifest.shapes, 2).unwrap();
        let rep = train(&mut m, ds.split(Split::Train), ds.split(Split::Valid), &ds.unknown_text, &tc, 2, |_| {}).unwrap();
        (m, rep)
    };
    let (a, ra) = run();
    let (b, _) = run();
    assert!(ra.curve.last().unwrap().task < ra.curve[0].task);
    assert_eq!(ra.steps, 6 * ds.split(Split::Train).len().div_ceil(16));
    for ((_, p), (_, q)) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(p.value, q.value);
    }
}

use std::fs;

use tf_mamba::data::io::{read_tensor, write_tensor};
use tf_mamba::data::{generate, Dataset, GenerateConfig, LabelRange, Sample, Split};
use tf_mamba::numerics::Tensor;
use tf_mamba::{Error, ModalShapes};

fn bits(ds: &Dataset) -> Vec<u64> {
    ds.samples
        .iter()
        .flat_map(|s| {
            s.text
                .data()
                .iter()
                .chain(s.visual.data())
                .chain(s.audio.data())
                .chain(std::iter::once(&s.label))
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .chain(ds.unknown_text.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn same_seed_same_bits() {
    let a = generate(&GenerateConfig::desk(42)).unwrap();
    let b = generate(&GenerateConfig::desk(42)).unwrap();
    let c = generate(&GenerateConfig::desk(43)).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
    let s = a.manifest.shapes;
    assert_eq!((s.text, s.visual, s.audio), ((16, 32), (24, 16), (32, 8)));
    assert_eq!(a.samples.len(), 256);
    assert_eq!(a.manifest.splits.total(), 256);
}

#[test]
fn labels_stay_in_range() {
    let mut g = GenerateConfig::desk(0);
    g.label_range = LabelRange::Sims;
    let ds = generate(&g).unwrap();
    assert!(ds.samples.iter().all(|s| (-1.0..=1.0).contains(&s.label)));
    let ds = generate(&GenerateConfig::desk(0)).unwrap();
    assert!(ds.samples.iter().all(|s| (-3.0..=3.0).contains(&s.label)));
}

#[test]
fn invalid_generation_requests_fail() {
    let mut g = GenerateConfig::desk(0);
    g.samples = 0;
    assert!(generate(&g).is_err());
    let mut g = GenerateConfig::desk(0);
    g.shapes = ModalShapes {
        visual: (0, 16),
        ..ModalShapes::desk()
    };
    assert!(generate(&g).is_err());
}

/// Least squares on time-averaged features with an intercept, solved by
/// Gaussian elimination on the (lightly ridged) normal equations.
fn fit_predict(train: &[Sample], test: &[Sample], pick: fn(&Sample) -> &Tensor) -> Vec<f64> {
    let feats = |s: &Sample| {
        let x = pick(s);
        let mut f: Vec<f64> = (0..x.cols()).map(|c| (0..x.rows()).map(|r| x.at(r, c)).sum::<f64>() / x.rows() as f64).collect();
        f.push(1.0);
        f
    };
    let p = feats(&train[0]).len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for s in train {
        let f = feats(s);
        for i in 0..p {
            for j in 0..p {
                a[i][j] += f[i] * f[j];
            }
            a[i][p] += f[i] * s.label;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-8;
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let k = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= k * a[col][c];
                }
            }
        }
    }
    let w: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    test.iter().map(|s| feats(s).iter().zip(&w).map(|(x, w)| x * w).sum()).collect()
}

fn mae(test: &[Sample], pred: &[f64]) -> f64 {
    test.iter().zip(pred).map(|(s, p)| (s.label - p).abs()).sum::<f64>() / test.len() as f64
}

#[test]
fn text_carries_more_signal_than_audio() {
    let ds = generate(&GenerateConfig::desk(5)).unwrap();
    let (train, test) = (ds.split(Split::Train), ds.split(Split::Test));
    let text = fit_predict(train, test, |s| &s.text);
    let audio = fit_predict(train, test, |s| &s.audio);
    let (mt, ma) = (mae(test, &text), mae(test, &audio));
    assert!(mt < ma, "text {mt} audio {ma}");
    let sign_hits = test.iter().zip(&text).filter(|(s, p)| (s.label > 0.0) == (**p > 0.0)).count();
    assert!(sign_hits as f64 / test.len() as f64 > 0.7);
}

#[test]
fn save_load_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = GenerateConfig::desk(9);
    g.samples = 20;
    let ds = generate(&g).unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(bits(&back), bits(&ds));
    assert_eq!(back.manifest, ds.manifest);
    ds.export_labels_csv(&dir.path().join("labels.csv")).unwrap();
    let csv = fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

fn saved(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut g = GenerateConfig::desk(1);
    g.samples = n;
    generate(&g).unwrap().save(dir.path()).unwrap();
    dir
}

#[test]
fn bad_magic_is_a_header_error() {
    let dir = saved(4);
    let p = dir.path().join("audio.bin");
    let mut b = fs::read(&p).unwrap();
    b[..4].copy_from_slice(b"NOPE");
    fs::write(&p, b).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Header(_))));
}

#[test]
fn manifest_shape_edit_is_a_shape_error() {
    let dir = saved(4);
    let p = dir.path().join("manifest.toml");
    let text = fs::read_to_string(&p).unwrap();
    let edited = text.replacen("visual = [24, 16]", "visual = [24, 17]", 1);
    assert_ne!(text, edited, "{text}");
    fs::write(&p, edited).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::PayloadShape(_))));
}

#[test]
fn truncated_payload_is_its_own_error() {
    let dir = saved(4);
    let p = dir.path().join("text.bin");
    let b = fs::read(&p).unwrap();
    fs::write(&p, &b[..b.len() - 3]).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Truncated(_))));
}

#[test]
fn tensor_file_rejects_trailing_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.bin");
    write_tensor(&p, &Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert_eq!(read_tensor(&p).unwrap().data(), &[1.0, 2.0]);
    let mut b = fs::read(&p).unwrap();
    b.extend_from_slice(&[0; 8]);
    fs::write(&p, b).unwrap();
    assert!(matches!(read_tensor(&p), Err(Error::PayloadShape(_))));
}

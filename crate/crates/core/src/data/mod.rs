//! Synthetic multimodal sentiment data and its on-disk form.

pub mod io;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModalShapes;
use crate::numerics::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRange {
    /// Scores in `[−3, 3]`.
    #[default]
    English,
    /// Scores in `[−1, 1]`.
    Sims,
}

impl LabelRange {
    pub fn bound(self) -> f64 {
        match self {
            Self::English => 3.0,
            Self::Sims => 1.0,
        }
    }
}

/// Signal amplitude per modality relative to unit-variance noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrProfile {
    pub text: f64,
    pub visual: f64,
    pub audio: f64,
}

impl Default for SnrProfile {
    fn default() -> Self {
        Self {
            text: 2.0,
            visual: 0.6,
            audio: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Splits {
    /// 70 / 15 / 15 partition of `n`.
    pub fn default_for(n: usize) -> Self {
        let train = ((n as f64) * 0.7).round() as usize;
        let valid = (((n as f64) * 0.15).round() as usize).min(n - train);
        Self {
            train,
            valid,
            test: n - train - valid,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub samples: usize,
    pub seed: u64,
    pub label_range: LabelRange,
    pub shapes: ModalShapes,
    pub splits: Splits,
    pub snr: SnrProfile,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub text: Tensor,
    pub visual: Tensor,
    pub audio: Tensor,
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
    /// Stand-in feature row for erased text positions.
    pub unknown_text: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub samples: usize,
    pub shapes: ModalShapes,
    pub seed: u64,
    pub snr: SnrProfile,
    pub label_range: LabelRange,
}

impl GenerateConfig {
    /// 256 samples at the desk shapes.
    pub fn desk(seed: u64) -> Self {
        Self {
            samples: 256,
            shapes: ModalShapes::desk(),
            seed,
            snr: SnrProfile::default(),
            label_range: LabelRange::English,
        }
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Per-modality fixed structure shared by every sample.
struct ModalityBasis {
    direction: Tensor,
    nuisance: Tensor,
    pattern: Tensor,
}

impl ModalityBasis {
    fn new(rng: &mut ChaCha8Rng, (t, d): (usize, usize)) -> Self {
        Self {
            direction: normal_tensor(rng, &[d], 1.0),
            nuisance: normal_tensor(rng, &[d], 1.0),
            pattern: normal_tensor(rng, &[t, d], 0.5),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, (t, d): (usize, usize), signal: f64) -> Tensor {
        let z: f64 = StandardNormal.sample(&mut *rng);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut out = Vec::with_capacity(t * d);
        for i in 0..t {
            let env = 1.0 + 0.5 * (std::f64::consts::TAU * i as f64 / t as f64 + phase).sin();
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut *rng);
                out.push(
                    signal * env * self.direction.data()[j]
                        + 0.5 * z * self.nuisance.data()[j]
                        + self.pattern.at(i, j)
                        + noise,
                );
            }
        }
        Tensor::new([t, d], out).expect("t×d")
    }
}

/// Draws labels uniformly over the range and embeds each in every modality
/// at the configured signal level, plus per-modality nuisance and noise.
pub fn generate(cfg: &GenerateConfig) -> Result<Dataset> {
    if cfg.samples == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    let s = cfg.shapes;
    for (name, (t, d)) in [("text", s.text), ("visual", s.visual), ("audio", s.audio)] {
        if t == 0 || d == 0 {
            return Err(Error::invalid(format!("{name} shape {t}×{d} is empty")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bases = [
        ModalityBasis::new(&mut rng, s.text),
        ModalityBasis::new(&mut rng, s.visual),
        ModalityBasis::new(&mut rng, s.audio),
    ];
    let unknown_text = normal_tensor(&mut rng, &[s.text.1], 1.0).into_data();
    let bound = cfg.label_range.bound();
    let samples = (0..cfg.samples)
        .map(|_| {
            let label = rng.gen_range(-bound..=bound);
            let y = label / bound;
            let text = bases[0].draw(&mut rng, s.text, cfg.snr.text * y);
            let visual = bases[1].draw(&mut rng, s.visual, cfg.snr.visual * y);
            let audio = bases[2].draw(&mut rng, s.audio, cfg.snr.audio * y);
            Sample {
                text,
                visual,
                audio,
                label,
            }
        })
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            samples: cfg.samples,
            seed: cfg.seed,
            label_range: cfg.label_range,
            shapes: s,
            splits: Splits::default_for(cfg.samples),
            snr: cfg.snr,
        },
        samples,
        unknown_text,
    })
}

impl Dataset {
    pub fn split(&self, which: Split) -> &[Sample] {
        let sp = self.manifest.splits;
        match which {
            Split::Train => &self.samples[..sp.train],
            Split::Valid => &self.samples[sp.train..sp.train + sp.valid],
            Split::Test => &self.samples[sp.train + sp.valid..],
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = toml::to_string(&self.manifest)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        fs::write(dir.join(MANIFEST), manifest)?;
        let stack = |f: fn(&Sample) -> &Tensor, (t, d): (usize, usize)| {
            let data = self.samples.iter().flat_map(|s| f(s).data().iter().copied()).collect();
            Tensor::new([self.samples.len(), t, d], data)
        };
        let s = self.manifest.shapes;
        io::write_tensor(&dir.join("text.bin"), &stack(|x| &x.text, s.text)?)?;
        io::write_tensor(&dir.join("visual.bin"), &stack(|x| &x.visual, s.visual)?)?;
        io::write_tensor(&dir.join("audio.bin"), &stack(|x| &x.audio, s.audio)?)?;
        let labels = Tensor::vector(self.samples.iter().map(|x| x.label).collect());
        io::write_tensor(&dir.join("labels.bin"), &labels)?;
        io::write_tensor(&dir.join("unknown_text.bin"), &Tensor::vector(self.unknown_text.clone()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Header(format!("{MANIFEST}: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Header(format!(
                "{MANIFEST}: unsupported format version {}",
                manifest.format_version
            )));
        }
        if manifest.splits.total() != manifest.samples {
            return Err(Error::PayloadShape(format!(
                "splits {:?} do not cover {} samples",
                manifest.splits, manifest.samples
            )));
        }
        let n = manifest.samples;
        let s = manifest.shapes;
        let load = |name: &str, expect: &[usize]| -> Result<Tensor> {
            let t = io::read_tensor(&dir.join(name))?;
            if t.shape() != expect {
                return Err(Error::PayloadShape(format!(
                    "{name}: payload shape {:?}, manifest says {expect:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let text = load("text.bin", &[n, s.text.0, s.text.1])?;
        let visual = load("visual.bin", &[n, s.visual.0, s.visual.1])?;
        let audio = load("audio.bin", &[n, s.audio.0, s.audio.1])?;
        let labels = load("labels.bin", &[n])?;
        let unknown_text = load("unknown_text.bin", &[s.text.1])?.into_data();
        let slice = |t: &Tensor, i: usize, (a, b): (usize, usize)| {
            Tensor::new([a, b], t.data()[i * a * b..(i + 1) * a * b].to_vec()).expect("a×b")
        };
        let samples = (0..n)
            .map(|i| Sample {
                text: slice(&text, i, s.text),
                visual: slice(&visual, i, s.visual),
                audio: slice(&audio, i, s.audio),
                label: labels.data()[i],
            })
            .collect();
        Ok(Self {
            manifest,
            samples,
            unknown_text,
        })
    }

    /// `index,split,label` rows.
    pub fn export_labels_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["index", "split", "label"]).map_err(csv_err)?;
        let sp = self.manifest.splits;
        for (i, s) in self.samples.iter().enumerate() {
            let split = if i < sp.train {
                "train"
            } else if i < sp.train + sp.valid {
                "valid"
            } else {
                "test"
            };
            w.write_record([i.to_string(), split.to_string(), format!("{:?}", s.label)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

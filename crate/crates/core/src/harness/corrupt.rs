use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::CorruptedSample;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Visual,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Visual, Modality::Audio];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse_set(s: &str) -> Result<Vec<Modality>> {
        let mut out = Vec::new();
        for c in s.chars().filter(|c| !matches!(c, ',' | '&' | ' ' | '+')) {
            let m = match c.to_ascii_lowercase() {
                't' => Modality::Text,
                'v' => Modality::Visual,
                'a' => Modality::Audio,
                _ => return Err(Error::invalid(format!("unknown modality `{c}` in `{s}`"))),
            };
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Rate drawn from `U[0, 1)` per sample and modality.
    TrainUncertain,
    /// The same rate for every sequence; one of `0.0, 0.1, …, 0.9`.
    TestFixed(f64),
    /// Whole modalities erased, the rest untouched.
    CompleteMissing(Vec<Modality>),
}

impl CorruptionMode {
    pub fn validate(&self) -> Result<()> {
        if let Self::TestFixed(r) = *self {
            let tenths = r * 10.0;
            if !(0.0..1.0).contains(&r) || (tenths - tenths.round()).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "test missing rate must be one of 0.0, 0.1, …, 0.9; got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_rng(parts: &[u64]) -> ChaCha8Rng {
    let seed = parts.iter().fold(0u64, |acc, &p| mix(acc ^ mix(p)));
    ChaCha8Rng::seed_from_u64(seed)
}

/// Positions to erase for a sequence of length `t` at rate `r`.
pub fn erased_positions<R: Rng + ?Sized>(rng: &mut R, t: usize, r: f64) -> Vec<usize> {
    let k = ((r * t as f64).round() as usize).min(t);
    let mut idx = sample_indices(rng, t, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Corrupts one sample. Randomness depends only on
/// `(seed, stream, index, modality)`.
pub fn corrupt_sample(
    sample: &Sample,
    unknown_text: &[f64],
    mode: &CorruptionMode,
    (seed, stream, index): (u64, u64, u64),
) -> Result<CorruptedSample> {
    mode.validate()?;
    if unknown_text.len() != sample.text.cols() {
        return Err(Error::shape("corrupt", &[unknown_text.len()], &[sample.text.cols()]));
    }
    let mut feats = [sample.text.clone(), sample.visual.clone(), sample.audio.clone()];
    let mut presence: [Vec<f64>; 3] = Default::default();
    for m in Modality::ALL {
        let t = feats[m.index()].rows();
        let erase = match mode {
            CorruptionMode::TrainUncertain => {
                let mut rng = stream_rng(&[seed, stream, index, m.index() as u64]);
                let r = rng.gen_range(0.0..1.0);
                erased_positions(&mut rng, t, r)
            }
            CorruptionMode::TestFixed(r) => {
                let mut rng = stream_rng(&[seed, stream, index, m.index() as u64]);
                erased_positions(&mut rng, t, *r)
            }
            CorruptionMode::CompleteMissing(set) if set.contains(&m) => (0..t).collect(),
            CorruptionMode::CompleteMissing(_) => Vec::new(),
        };
        let mut p = vec![1.0; t];
        let x: &mut Tensor = &mut feats[m.index()];
        let d = x.cols();
        for &i in &erase {
            p[i] = 0.0;
            let row = &mut x.data_mut()[i * d..(i + 1) * d];
            match m {
                Modality::Text => row.copy_from_slice(unknown_text),
                _ => row.fill(0.0),
            }
        }
        presence[m.index()] = p;
    }
    let [text, visual, audio] = feats;
    Ok(CorruptedSample {
        text,
        visual,
        audio,
        clean_text: sample.text.clone(),
        presence,
        label: sample.label,
    })
}

/// Corrupts a batch; sample `i` uses index `i`.
pub fn corrupt(
    samples: &[Sample],
    unknown_text: &[f64],
    mode: &CorruptionMode,
    seed: u64,
    stream: u64,
) -> Result<Vec<CorruptedSample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| corrupt_sample(s, unknown_text, mode, (seed, stream, i as u64)))
        .collect()
}

//! Text-guided modality enhancement: cross-modal similarity, threshold
//! masking, enhancement and text reconstruction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{linear_weight, uniform};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.07;

/// `L×T` linear-interpolation matrix mapping `T` input steps onto `L`
/// evenly spaced output steps with matching endpoints. Rows sum to one.
pub fn resample_matrix(t_in: usize, l_out: usize) -> Result<Tensor> {
    if t_in == 0 || l_out == 0 {
        return Err(Error::invalid(format!(
            "cannot resample {t_in} steps onto {l_out}"
        )));
    }
    let mut m = vec![0.0; l_out * t_in];
    for i in 0..l_out {
        let pos = if l_out == 1 || t_in == 1 {
            0.0
        } else {
            i as f64 * (t_in - 1) as f64 / (l_out - 1) as f64
        };
        let j = (pos.floor() as usize).min(t_in - 1);
        let frac = pos - j as f64;
        m[i * t_in + j] += 1.0 - frac;
        if frac > 0.0 {
            m[i * t_in + j + 1] += frac;
        }
    }
    Tensor::new([l_out, t_in], m)
}

/// Resamples a modality to the common length and projects it to `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Aligner {
    pub t_in: usize,
    pub d_in: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    resample: Tensor,
}

impl Aligner {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        (t_in, d_in): (usize, usize),
        (seq_len, d_model): (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        if d_in == 0 || d_model == 0 {
            return Err(Error::invalid("aligner widths must be positive"));
        }
        let resample = resample_matrix(t_in, seq_len)?;
        let weight = store.add(format!("{prefix}.w"), linear_weight(rng, d_in, d_model));
        let bias = store.add(
            format!("{prefix}.b"),
            uniform(rng, &[d_model], 1.0 / (d_in as f64).sqrt()),
        );
        Ok(Self {
            t_in,
            d_in,
            seq_len,
            d_model,
            weight,
            bias,
            resample,
        })
    }

    pub fn resample_matrix(&self) -> &Tensor {
        &self.resample
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape != [self.t_in, self.d_in] {
            return Err(Error::shape("align", &shape, &[self.t_in, self.d_in]));
        }
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        let x = if self.t_in == self.seq_len {
            x
        } else {
            let r = tape.constant(self.resample.clone())?;
            tape.matmul(r, x)?
        };
        tape.linear(x, w, Some(b))
    }

    pub fn macs(&self) -> u64 {
        let resample = if self.t_in == self.seq_len {
            0
        } else {
            (self.seq_len * self.t_in * self.d_in) as u64
        };
        resample + (self.seq_len * self.d_in * self.d_model) as u64
    }

    pub fn param_count(d_in: usize, d_model: usize) -> usize {
        d_in * d_model + d_model
    }
}

/// `softmax(norm(H_x) norm(H_t)ᵀ / τ)` row-wise, shape `L×L`.
pub fn token_similarity(tape: &mut Tape, hx: Var, ht: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let sx = tape.value(hx).shape().to_vec();
    let st = tape.value(ht).shape().to_vec();
    if sx.len() != 2 || sx != st {
        return Err(Error::shape("token_similarity", &sx, &st));
    }
    let nx = tape.l2_normalize_lastdim(hx)?;
    let nt = tape.l2_normalize_lastdim(ht)?;
    let ntt = tape.transpose(nt)?;
    let cos = tape.matmul(nx, ntt)?;
    let logits = tape.scale(cos, 1.0 / tau)?;
    tape.softmax_lastdim(logits)
}

/// Indicator of `S > θ`, with `θ = 1/L` unless given.
pub fn threshold_mask(s: &Tensor, theta: Option<f64>) -> Result<Tensor> {
    if s.rank() != 2 || s.rows() != s.cols() {
        return Err(Error::shape("threshold_mask", s.shape(), &[s.rows(), s.rows()]));
    }
    let theta = theta.unwrap_or(1.0 / s.cols() as f64);
    Ok(s.map(|x| if x > theta { 1.0 } else { 0.0 }))
}

/// `H_x + (M ⊙ S) H_t`. The mask is held constant.
pub fn enhance(tape: &mut Tape, hx: Var, s: Var, mask: &Tensor, ht: Var) -> Result<Var> {
    let m = tape.constant(mask.clone())?;
    let ms = tape.mul(m, s)?;
    let add = tape.matmul(ms, ht)?;
    tape.add(hx, add)
}

/// Two-layer ReLU MLP from enhanced text back to raw text features.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstructor {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub d_model: usize,
    pub d_out: usize,
}

impl Reconstructor {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), linear_weight(rng, d_model, d_model)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros([d_model])),
            w2: store.add(format!("{prefix}.w2"), linear_weight(rng, d_model, d_out)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros([d_out])),
            d_model,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, e: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1)?;
        let b1 = tape.param(store, self.b1)?;
        let w2 = tape.param(store, self.w2)?;
        let b2 = tape.param(store, self.b2)?;
        let h = tape.linear(e, w1, Some(b1))?;
        let h = tape.relu(h)?;
        tape.linear(h, w2, Some(b2))
    }

    pub fn param_count(d_model: usize, d_out: usize) -> usize {
        d_model * d_model + d_model + d_model * d_out + d_out
    }

    pub fn macs(&self, len: usize) -> u64 {
        (len * self.d_model * (self.d_model + self.d_out)) as u64
    }
}

/// Which text positions the reconstruction loss is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecTarget {
    /// Positions whose presence flag is 0.
    #[default]
    Missing,
    /// Positions whose presence flag is 1.
    Observed,
}

/// Summed Smooth-L1 over the selected positions plus the number of
/// `(position, feature)` cells it covers. `None` when no position is selected.
pub fn recon_loss_sum(
    tape: &mut Tape,
    clean: Var,
    recon: Var,
    presence: &[f64],
    target: RecTarget,
) -> Result<Option<(Var, usize)>> {
    let sc = tape.value(clean).shape().to_vec();
    let sr = tape.value(recon).shape().to_vec();
    if sc.len() != 2 || sc != sr {
        return Err(Error::shape("recon_loss", &sr, &sc));
    }
    if presence.len() != sc[0] {
        return Err(Error::shape("recon_loss presence", &[presence.len()], &[sc[0]]));
    }
    let (l, d) = (sc[0], sc[1]);
    let selected: Vec<f64> = presence
        .iter()
        .map(|&p| match target {
            RecTarget::Missing => 1.0 - p,
            RecTarget::Observed => p,
        })
        .collect();
    let rows = selected.iter().filter(|&&w| w > 0.0).count();
    if rows == 0 {
        return Ok(None);
    }
    let mut mask = Vec::with_capacity(l * d);
    for &w in &selected {
        mask.extend(std::iter::repeat(w).take(d));
    }
    let m = tape.constant(Tensor::new([l, d], mask)?)?;
    let diff = tape.sub(clean, recon)?;
    let diff = tape.mul(diff, m)?;
    let loss = tape.smooth_l1(diff)?;
    Ok(Some((tape.sum(loss)?, rows * d)))
}

/// Mean Smooth-L1 over selected cells, 0 when nothing is selected.
pub fn recon_loss(
    tape: &mut Tape,
    clean: Var,
    recon: Var,
    presence: &[f64],
    target: RecTarget,
) -> Result<Var> {
    match recon_loss_sum(tape, clean, recon, presence, target)? {
        Some((sum, cells)) => tape.scale(sum, 1.0 / cells as f64),
        None => tape.constant(Tensor::scalar(0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_three_to_five() {
        let m = resample_matrix(3, 5).unwrap();
        let expect = [
            [1.0, 0.0, 0.0],
            [0.5, 0.5, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.5, 0.5],
            [0.0, 0.0, 1.0],
        ];
        for (i, row) in expect.iter().enumerate() {
            assert_eq!(m.row(i), row);
        }
    }

    #[test]
    fn resample_same_length_is_identity() {
        let m = resample_matrix(4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.at(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mask_is_strict() {
        let s = Tensor::new([2, 2], vec![0.5, 0.5, 0.7, 0.3]).unwrap();
        let m = threshold_mask(&s, None).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn smooth_l1_half_difference() {
        let mut tape = Tape::new();
        let clean = tape.constant(Tensor::new([2, 1], vec![0.5, 9.0]).unwrap()).unwrap();
        let recon = tape.constant(Tensor::new([2, 1], vec![0.0, 1.0]).unwrap()).unwrap();
        let l = recon_loss(&mut tape, clean, recon, &[0.0, 1.0], RecTarget::Missing).unwrap();
        assert!((tape.scalar(l).unwrap() - 0.125).abs() < 1e-15);
        let l = recon_loss(&mut tape, clean, recon, &[1.0, 1.0], RecTarget::Missing).unwrap();
        assert_eq!(tape.scalar(l).unwrap(), 0.0);
    }

    #[test]
    fn bad_temperature_rejected() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::full([2, 2], 1.0)).unwrap();
        assert!(token_similarity(&mut tape, h, h, 0.0).is_err());
    }
}

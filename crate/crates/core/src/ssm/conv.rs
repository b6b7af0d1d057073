use crate::error::{Error, Result};
use crate::numerics::{Primitive, Tape, Tensor, Var};

/// `y[t,k] = b[k] + Σ_j w[k,j] · x[t − (W−1) + j, k]`, zero-padded on the left.
pub fn causal_depthwise_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (l, k) = (x.rows(), x.cols());
    let width = w.cols();
    if w.rows() != k || b.len() != k || x.rank() != 2 || w.rank() != 2 {
        return Err(Error::shape("causal_conv", x.shape(), w.shape()));
    }
    let mut y = vec![0.0; l * k];
    for t in 0..l {
        for ch in 0..k {
            let mut acc = b.data()[ch];
            for j in 0..width {
                let src = t as isize - (width as isize - 1) + j as isize;
                if src >= 0 {
                    acc += w.at(ch, j) * x.at(src as usize, ch);
                }
            }
            y[t * k + ch] = acc;
        }
    }
    Tensor::new([l, k], y)
}

struct CausalConvOp;

impl Primitive for CausalConvOp {
    fn name(&self) -> &'static str {
        "causal_conv"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (l, k) = (x.rows(), x.cols());
        let width = w.cols();
        let mut gx = vec![0.0; l * k];
        let mut gw = vec![0.0; k * width];
        let mut gb = vec![0.0; k];
        for t in 0..l {
            for ch in 0..k {
                let gv = g.at(t, ch);
                gb[ch] += gv;
                for j in 0..width {
                    let src = t as isize - (width as isize - 1) + j as isize;
                    if src >= 0 {
                        let s = src as usize;
                        gw[ch * width + j] += gv * x.at(s, ch);
                        gx[s * k + ch] += gv * w.at(ch, j);
                    }
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(x.shape().to_vec(), gx)?),
            Some(Tensor::new(w.shape().to_vec(), gw)?),
            Some(Tensor::new(inputs[2].shape().to_vec(), gb)?),
        ])
    }
}

pub fn causal_conv(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let out = causal_depthwise_conv(tape.value(x), tape.value(w), tape.value(b))?;
    let macs = (out.len() * tape.value(w).cols()) as u64;
    tape.custom(Box::new(CausalConvOp), &[x, w, b], out, macs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_past_samples_contribute() {
        let x = Tensor::new([4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new([1, 3], vec![0.1, 0.2, 0.7]).unwrap();
        let b = Tensor::vector(vec![0.5]);
        let y = causal_depthwise_conv(&x, &w, &b).unwrap();
        let expect = [0.5 + 0.7, 0.5 + 0.2 + 1.4, 0.5 + 0.1 + 0.4 + 2.1, 0.5 + 0.2 + 0.6 + 2.8];
        for (a, e) in y.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-14);
        }
    }
}

//! Selective-scan evaluation strategies.
//!
//! All three strategies compute, per channel `k` and state `n`,
//!
//! ```text
//! h_t = Ā_t ⊙ h_{t−1} + B̄_t x_t,    y_t = ⟨C_t, h_t⟩ + D x_t,    h_0 = 0
//! ```
//!
//! with `Ā_t = exp(Δ_t A)` and `B̄_t = (exp(Δ_t A) − 1)/A · B_t`.
//! Layouts are row-major: `x, Δ: L×K`, `A: K×N`, `B, C: L×N`, `D: K`.

use serde::{Deserialize, Serialize};

use super::discretize::zoh;
use crate::error::{Error, Result};
use crate::numerics::{Primitive, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Sequential recurrence.
    #[default]
    Recurrent,
    /// Global convolution kernel; only valid for time-invariant selection.
    Kernel,
    /// Associative prefix scan over `(Ā_t, B̄_t x_t)` pairs.
    ParallelScan,
}

#[derive(Clone, Copy, Debug)]
pub struct ScanInputs<'a> {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub x: &'a [f64],
    pub delta: &'a [f64],
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
    pub d_skip: &'a [f64],
}

impl ScanInputs<'_> {
    fn validate(&self) -> Result<()> {
        let (l, k, n) = (self.len, self.channels, self.state);
        if l == 0 {
            return Err(Error::invalid("scan: empty sequence"));
        }
        let check = |what: &'static str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::shape(what, &[got], &[want]))
            }
        };
        check("scan x", self.x.len(), l * k)?;
        check("scan delta", self.delta.len(), l * k)?;
        check("scan A", self.a.len(), k * n)?;
        check("scan B", self.b.len(), l * n)?;
        check("scan C", self.c.len(), l * n)?;
        check("scan D", self.d_skip.len(), k)?;
        if let Some(i) = self.delta.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::invalid(format!(
                "scan: step Δ must be positive, got {} at timestep {}",
                self.delta[i],
                i / k
            )));
        }
        if let Some(i) = self.a.iter().position(|&a| !(a < 0.0)) {
            return Err(Error::invalid(format!(
                "scan: A must be strictly negative, got {} at channel {}",
                self.a[i],
                i / n
            )));
        }
        Ok(())
    }

    fn lanes(&self) -> usize {
        self.channels * self.state
    }

    /// Per-step `Ā` and `B̄ / B` factors, laid out `L×K×N`.
    fn discretized(&self) -> (Vec<f64>, Vec<f64>) {
        let (k, n) = (self.channels, self.state);
        let size = self.len * k * n;
        let mut abar = Vec::with_capacity(size);
        let mut bfac = Vec::with_capacity(size);
        for t in 0..self.len {
            for ch in 0..k {
                let dt = self.delta[t * k + ch];
                for s in 0..n {
                    let (ab, f) = zoh(self.a[ch * n + s], dt);
                    abar.push(ab);
                    bfac.push(f);
                }
            }
        }
        (abar, bfac)
    }

    fn readout(&self, states: &[f64]) -> Vec<f64> {
        let (k, n) = (self.channels, self.state);
        let mut y = vec![0.0; self.len * k];
        for t in 0..self.len {
            let c = &self.c[t * n..(t + 1) * n];
            for ch in 0..k {
                let h = &states[(t * k + ch) * n..(t * k + ch + 1) * n];
                let acc: f64 = c.iter().zip(h).map(|(a, b)| a * b).sum();
                y[t * k + ch] = acc + self.d_skip[ch] * self.x[t * k + ch];
            }
        }
        y
    }

    fn is_time_invariant(&self) -> bool {
        let (k, n) = (self.channels, self.state);
        let rows_equal = |data: &[f64], w: usize| data.chunks(w).all(|r| r == &data[..w]);
        rows_equal(self.delta, k) && rows_equal(self.b, n) && rows_equal(self.c, n)
    }
}

/// Hidden states (`L×K×N`) and outputs (`L×K`) of a scan.
#[derive(Clone, Debug)]
pub struct ScanOutput {
    pub y: Vec<f64>,
    pub states: Vec<f64>,
}

fn first_non_finite_step(states: &[f64], lanes: usize) -> Option<usize> {
    states
        .chunks(lanes)
        .position(|row| row.iter().any(|v| !v.is_finite()))
}

pub fn scan_recurrent(inp: &ScanInputs) -> Result<ScanOutput> {
    inp.validate()?;
    let (abar, bfac) = inp.discretized();
    recurrent_with(inp, &abar, &bfac)
}

fn recurrent_with(inp: &ScanInputs, abar: &[f64], bfac: &[f64]) -> Result<ScanOutput> {
    let (k, n) = (inp.channels, inp.state);
    let lanes = inp.lanes();
    let mut states = vec![0.0; inp.len * lanes];
    let mut h = vec![0.0; lanes];
    for t in 0..inp.len {
        let b = &inp.b[t * n..(t + 1) * n];
        let (ab, f) = (&abar[t * lanes..(t + 1) * lanes], &bfac[t * lanes..(t + 1) * lanes]);
        for ch in 0..k {
            let xv = inp.x[t * k + ch];
            for s in 0..n {
                let idx = ch * n + s;
                h[idx] = ab[idx] * h[idx] + f[idx] * b[s] * xv;
            }
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: t });
        }
        states[t * lanes..(t + 1) * lanes].copy_from_slice(&h);
    }
    let y = inp.readout(&states);
    Ok(ScanOutput { y, states })
}

/// Composition of two affine maps `h ↦ a h + b`, `later ∘ earlier`.
#[inline]
pub fn combine(later: (f64, f64), earlier: (f64, f64)) -> (f64, f64) {
    (later.0 * earlier.0, later.0 * earlier.1 + later.1)
}

/// In-place inclusive Kogge–Stone scan over time for every lane.
///
/// `a` and `u` are `len × lanes`; on return `u[t]` holds the composed offset
/// of steps `0..=t`, i.e. the state reached from `h_0 = 0`.
fn prefix_scan(a: &mut [f64], u: &mut [f64], len: usize, lanes: usize) {
    let mut offset = 1;
    while offset < len {
        for t in (offset..len).rev() {
            let (cur, prev) = (t * lanes, (t - offset) * lanes);
            for j in 0..lanes {
                let (na, nu) = combine((a[cur + j], u[cur + j]), (a[prev + j], u[prev + j]));
                a[cur + j] = na;
                u[cur + j] = nu;
            }
        }
        offset *= 2;
    }
}

fn prefix_scan_rounds(len: usize) -> u64 {
    let mut total = 0u64;
    let mut offset = 1;
    while offset < len {
        total += (len - offset) as u64;
        offset *= 2;
    }
    total
}

pub fn scan_parallel(inp: &ScanInputs) -> Result<ScanOutput> {
    inp.validate()?;
    let (abar, bfac) = inp.discretized();
    parallel_with(inp, abar, bfac)
}

fn parallel_with(inp: &ScanInputs, mut a: Vec<f64>, mut u: Vec<f64>) -> Result<ScanOutput> {
    let (k, n) = (inp.channels, inp.state);
    let lanes = inp.lanes();
    for t in 0..inp.len {
        for ch in 0..k {
            let xv = inp.x[t * k + ch];
            for s in 0..n {
                u[(t * k + ch) * n + s] *= inp.b[t * n + s] * xv;
            }
        }
    }
    prefix_scan(&mut a, &mut u, inp.len, lanes);
    if let Some(step) = first_non_finite_step(&u, lanes) {
        return Err(Error::NonFiniteState { step });
    }
    let y = inp.readout(&u);
    Ok(ScanOutput { y, states: u })
}

/// Convolves `x` with `K̄ = (C B̄, C Ā B̄, …, C Ā^{L−1} B̄)` per channel.
pub fn scan_kernel(inp: &ScanInputs) -> Result<Vec<f64>> {
    inp.validate()?;
    if !inp.is_time_invariant() {
        return Err(Error::invalid(
            "scan_kernel: Δ, B and C must be constant over time",
        ));
    }
    let (l, k) = (inp.len, inp.channels);
    let kernel = global_kernel(inp);
    let mut y = vec![0.0; l * k];
    for t in 0..l {
        for ch in 0..k {
            let mut acc = 0.0;
            for j in 0..=t {
                acc += kernel[j * k + ch] * inp.x[(t - j) * k + ch];
            }
            y[t * k + ch] = acc + inp.d_skip[ch] * inp.x[t * k + ch];
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        let step = y.chunks(k).position(|r| r.iter().any(|v| !v.is_finite())).unwrap_or(0);
        return Err(Error::NonFiniteState { step });
    }
    Ok(y)
}

/// `K̄_j[k]` for `j < L`, laid out `L×K`. Requires time-invariant inputs.
pub fn global_kernel(inp: &ScanInputs) -> Vec<f64> {
    let (l, k, n) = (inp.len, inp.channels, inp.state);
    let dt = &inp.delta[..k];
    let b = &inp.b[..n];
    let c = &inp.c[..n];
    let mut kernel = vec![0.0; l * k];
    for ch in 0..k {
        for s in 0..n {
            let (ab, f) = zoh(inp.a[ch * n + s], dt[ch]);
            let cb = c[s] * f * b[s];
            let mut power = 1.0;
            for j in 0..l {
                kernel[j * k + ch] += cb * power;
                power *= ab;
            }
        }
    }
    kernel
}

/// Multiply-accumulate count of one scan in the given mode.
pub fn scan_macs(mode: ScanMode, len: usize, channels: usize, state: usize) -> u64 {
    let (l, k, n) = (len as u64, channels as u64, state as u64);
    match mode {
        // discretize (2) + state update (2) + readout (1) per lane-step, D x per channel-step
        ScanMode::Recurrent => l * k * (5 * n + 1),
        ScanMode::ParallelScan => {
            l * k * n * 4 + 2 * k * n * prefix_scan_rounds(len) + l * k
        }
        ScanMode::Kernel => k * n * (2 + 2 * l) + k * l * (l + 1) / 2 + l * k,
    }
}

#[derive(Clone, Debug)]
pub struct ScanGrads {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d_skip: Vec<f64>,
}

/// Adjoint of the scan. `states` are the forward hidden states; the state
/// adjoint `∂/∂h_t = C_t gy_t + Ā_{t+1} ∂/∂h_{t+1}` is itself a linear
/// recurrence, evaluated sequentially or by the prefix scan per `mode`.
pub fn scan_backward(inp: &ScanInputs, states: &[f64], gy: &[f64], mode: ScanMode) -> ScanGrads {
    let (abar, bfac) = inp.discretized();
    backward_with(inp, states, (&abar, &bfac), gy, mode)
}

fn backward_with(
    inp: &ScanInputs,
    states: &[f64],
    (abar, bfac): (&[f64], &[f64]),
    gy: &[f64],
    mode: ScanMode,
) -> ScanGrads {
    let (l, k, n) = (inp.len, inp.channels, inp.state);
    let lanes = inp.lanes();

    // direct contribution of y_t to h_t
    let mut gh = vec![0.0; l * lanes];
    for t in 0..l {
        let c = &inp.c[t * n..(t + 1) * n];
        for ch in 0..k {
            let g = gy[t * k + ch];
            for s in 0..n {
                gh[(t * k + ch) * n + s] = c[s] * g;
            }
        }
    }
    match mode {
        ScanMode::ParallelScan => {
            // reverse time: G_s = α_s G_{s−1} + β_s with α_s = Ā_{t+1}
            let mut alpha = vec![0.0; l * lanes];
            let mut beta = vec![0.0; l * lanes];
            for s in 0..l {
                let t = l - 1 - s;
                beta[s * lanes..(s + 1) * lanes].copy_from_slice(&gh[t * lanes..(t + 1) * lanes]);
                if s > 0 {
                    alpha[s * lanes..(s + 1) * lanes]
                        .copy_from_slice(&abar[(t + 1) * lanes..(t + 2) * lanes]);
                }
            }
            prefix_scan(&mut alpha, &mut beta, l, lanes);
            for s in 0..l {
                let t = l - 1 - s;
                gh[t * lanes..(t + 1) * lanes].copy_from_slice(&beta[s * lanes..(s + 1) * lanes]);
            }
        }
        ScanMode::Recurrent | ScanMode::Kernel => {
            for t in (0..l.saturating_sub(1)).rev() {
                for j in 0..lanes {
                    gh[t * lanes + j] += abar[(t + 1) * lanes + j] * gh[(t + 1) * lanes + j];
                }
            }
        }
    }

    let mut g = ScanGrads {
        x: vec![0.0; l * k],
        delta: vec![0.0; l * k],
        a: vec![0.0; k * n],
        b: vec![0.0; l * n],
        c: vec![0.0; l * n],
        d_skip: vec![0.0; k],
    };
    for t in 0..l {
        for ch in 0..k {
            let xv = inp.x[t * k + ch];
            let dt = inp.delta[t * k + ch];
            let gyv = gy[t * k + ch];
            g.x[t * k + ch] += gyv * inp.d_skip[ch];
            g.d_skip[ch] += gyv * xv;
            for s in 0..n {
                let idx = (t * k + ch) * n + s;
                let lane = ch * n + s;
                let h = states[idx];
                let h_prev = if t > 0 { states[idx - lanes] } else { 0.0 };
                let ghv = gh[idx];
                let av = inp.a[lane];
                let bv = inp.b[t * n + s];
                let (ab, f) = (abar[idx], bfac[idx]);

                g.c[t * n + s] += gyv * h;
                g.x[t * k + ch] += ghv * f * bv;

                let g_abar = ghv * h_prev;
                let g_bbar = ghv * xv;
                g.b[t * n + s] += g_bbar * f;
                let g_f = g_bbar * bv;

                // Ā = exp(ΔA); factor = expm1(ΔA)/A
                g.delta[t * k + ch] += g_abar * av * ab + g_f * ab;
                g.a[lane] += g_abar * dt * ab + g_f * (dt * ab - f) / av;
            }
        }
    }
    g
}

struct ScanOp {
    mode: ScanMode,
    len: usize,
    channels: usize,
    state: usize,
    states: Option<Vec<f64>>,
    abar: Vec<f64>,
    bfac: Vec<f64>,
}

impl Primitive for ScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let inp = ScanInputs {
            len: self.len,
            channels: self.channels,
            state: self.state,
            x: inputs[0].data(),
            delta: inputs[1].data(),
            a: inputs[2].data(),
            b: inputs[3].data(),
            c: inputs[4].data(),
            d_skip: inputs[5].data(),
        };
        let recomputed;
        let states = match &self.states {
            Some(s) => s.as_slice(),
            None => {
                recomputed = recurrent_with(&inp, &self.abar, &self.bfac)?.states;
                recomputed.as_slice()
            }
        };
        let g = backward_with(&inp, states, (&self.abar, &self.bfac), grad.data(), self.mode);
        let shaped = |t: &Tensor, data: Vec<f64>| Tensor::new(t.shape().to_vec(), data).map(Some);
        Ok(vec![
            shaped(inputs[0], g.x)?,
            shaped(inputs[1], g.delta)?,
            shaped(inputs[2], g.a)?,
            shaped(inputs[3], g.b)?,
            shaped(inputs[4], g.c)?,
            shaped(inputs[5], g.d_skip)?,
        ])
    }
}

/// Records a differentiable selective scan on the tape.
///
/// Shapes: `x, delta: L×K`, `a: K×N` (continuous, negative), `b, c: L×N`,
/// `d_skip: K`. Returns `y: L×K`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan(
    tape: &mut Tape,
    x: Var,
    delta: Var,
    a: Var,
    b: Var,
    c: Var,
    d_skip: Var,
    mode: ScanMode,
) -> Result<Var> {
    let xs = tape.value(x).shape().to_vec();
    let as_ = tape.value(a).shape().to_vec();
    if xs.len() != 2 || as_.len() != 2 || as_[0] != xs[1] {
        return Err(Error::shape("selective_scan", &xs, &as_));
    }
    let (len, channels, state) = (xs[0], xs[1], as_[1]);
    let inp = ScanInputs {
        len,
        channels,
        state,
        x: tape.value(x).data(),
        delta: tape.value(delta).data(),
        a: tape.value(a).data(),
        b: tape.value(b).data(),
        c: tape.value(c).data(),
        d_skip: tape.value(d_skip).data(),
    };
    inp.validate()?;
    let (abar, bfac) = inp.discretized();
    let (y, states) = match mode {
        ScanMode::Recurrent => {
            let o = recurrent_with(&inp, &abar, &bfac)?;
            (o.y, Some(o.states))
        }
        ScanMode::ParallelScan => {
            let o = parallel_with(&inp, abar.clone(), bfac.clone())?;
            (o.y, Some(o.states))
        }
        ScanMode::Kernel => (scan_kernel(&inp)?, None),
    };
    let out = Tensor::new([len, channels], y)?;
    let op = ScanOp {
        mode,
        len,
        channels,
        state,
        states,
        abar,
        bfac,
    };
    tape.custom(
        Box::new(op),
        &[x, delta, a, b, c, d_skip],
        out,
        scan_macs(mode, len, channels, state),
    )
}

//! Selective SSM layer and the bidirectional Mamba block built on it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::causal_conv;
use super::scan::{scan_macs, selective_scan, ScanMode};
use crate::error::{Error, Result};
use crate::init::{inv_softplus, linear_weight, uniform};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub d_model: usize,
    /// Expansion factor `E`; inner width is `E · d_model`.
    pub expand: usize,
    pub d_state: usize,
    /// Rank of the low-rank `Δ` projection.
    pub dt_rank: usize,
    pub conv_width: usize,
}

impl BlockConfig {
    pub fn new(d_model: usize, expand: usize, d_state: usize) -> Self {
        Self {
            d_model,
            expand,
            d_state,
            dt_rank: d_model.div_ceil(16),
            conv_width: 4,
        }
    }

    pub fn inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.dt_rank == 0 || self.conv_width == 0 {
            return Err(Error::Config(format!("degenerate block config {self:?}")));
        }
        if self.expand < 1 {
            return Err(Error::Config("expansion factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Continuous-time parameters and selection networks of one SSM direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    /// `log(−A)`, shape `K×N`; may be shared with a paired stream.
    pub a_log: ParamId,
    pub dt_down: ParamId,
    pub dt_up: ParamId,
    pub dt_bias: ParamId,
    pub b_proj: ParamId,
    pub c_proj: ParamId,
    pub d_skip: ParamId,
}

/// Allocates `log(−A)` initialized so that `−A` spans `1..=N` in every channel.
pub fn init_a_log(store: &mut ParamStore, name: impl Into<String>, cfg: &BlockConfig) -> ParamId {
    let (k, n) = (cfg.inner(), cfg.d_state);
    let data = (0..k)
        .flat_map(|_| (1..=n).map(|s| (s as f64).ln()))
        .collect();
    store.add(name, Tensor::new([k, n], data).expect("K×N"))
}

impl SsmParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &BlockConfig,
        rng: &mut R,
        a_log: Option<ParamId>,
    ) -> Self {
        let (k, n, r) = (cfg.inner(), cfg.d_state, cfg.dt_rank);
        let a_log = a_log.unwrap_or_else(|| init_a_log(store, format!("{prefix}.a_log"), cfg));
        let dt_down = store.add(format!("{prefix}.dt_down"), linear_weight(rng, k, r));
        let dt_up = store.add(
            format!("{prefix}.dt_up"),
            uniform(rng, &[r, k], 1.0 / (r as f64).sqrt()),
        );
        let (lo, hi) = (0.01f64.ln(), 0.1f64.ln());
        let bias = (0..k)
            .map(|_| inv_softplus(rng.gen_range(lo..hi).exp()))
            .collect();
        let dt_bias = store.add(format!("{prefix}.dt_bias"), Tensor::vector(bias));
        let b_proj = store.add(format!("{prefix}.b_proj"), linear_weight(rng, k, n));
        let c_proj = store.add(format!("{prefix}.c_proj"), linear_weight(rng, k, n));
        let d_skip = store.add(format!("{prefix}.d_skip"), Tensor::full([k], 1.0));
        Self {
            a_log,
            dt_down,
            dt_up,
            dt_bias,
            b_proj,
            c_proj,
            d_skip,
        }
    }

    /// Selective scan of `u: L×K` with input-dependent `Δ`, `B`, `C`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, u: Var, mode: ScanMode) -> Result<Var> {
        let a_log = tape.param(store, self.a_log)?;
        let a_pos = tape.exp(a_log)?;
        let a = tape.scale(a_pos, -1.0)?;

        let dt_down = tape.param(store, self.dt_down)?;
        let dt_up = tape.param(store, self.dt_up)?;
        let dt_bias = tape.param(store, self.dt_bias)?;
        let low = tape.matmul(u, dt_down)?;
        let pre = tape.linear(low, dt_up, Some(dt_bias))?;
        let delta = tape.softplus(pre)?;

        let b_proj = tape.param(store, self.b_proj)?;
        let c_proj = tape.param(store, self.c_proj)?;
        let b = tape.matmul(u, b_proj)?;
        let c = tape.matmul(u, c_proj)?;
        let d = tape.param(store, self.d_skip)?;
        selective_scan(tape, u, delta, a, b, c, d, mode)
    }

    /// Scalar parameters owned by one direction, optionally excluding `A`.
    pub fn param_count(cfg: &BlockConfig, include_a: bool) -> usize {
        let (k, n, r) = (cfg.inner(), cfg.d_state, cfg.dt_rank);
        let a = if include_a { k * n } else { 0 };
        a + 2 * k * r + k + 2 * k * n + k
    }

    pub fn macs(cfg: &BlockConfig, len: usize) -> u64 {
        let (l, k, n, r) = (len as u64, cfg.inner() as u64, cfg.d_state as u64, cfg.dt_rank as u64);
        2 * l * k * r + 2 * l * k * n + scan_macs(ScanMode::Recurrent, len, cfg.inner(), cfg.d_state)
    }
}

/// `A` storage handed to a block so that two blocks can share it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharedTransitions {
    pub forward: ParamId,
    pub backward: ParamId,
}

impl SharedTransitions {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig) -> Self {
        Self {
            forward: init_a_log(store, format!("{prefix}.fwd.a_log"), cfg),
            backward: init_a_log(store, format!("{prefix}.bwd.a_log"), cfg),
        }
    }
}

/// Pre-norm bidirectional Mamba block with a SiLU gate and residual.
#[derive(Clone, Debug, PartialEq)]
pub struct BiMambaParams {
    pub cfg: BlockConfig,
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
    pub in_x: ParamId,
    pub in_z: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub forward: SsmParams,
    pub backward: SsmParams,
    pub out_proj: ParamId,
}

impl BiMambaParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: BlockConfig,
        rng: &mut R,
        shared: Option<SharedTransitions>,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, k, w) = (cfg.d_model, cfg.inner(), cfg.conv_width);
        let norm_gamma = store.add(format!("{prefix}.norm.gamma"), Tensor::full([d], 1.0));
        let norm_beta = store.add(format!("{prefix}.norm.beta"), Tensor::zeros([d]));
        let in_x = store.add(format!("{prefix}.in_x"), linear_weight(rng, d, k));
        let in_z = store.add(format!("{prefix}.in_z"), linear_weight(rng, d, k));
        let conv_w = store.add(
            format!("{prefix}.conv.w"),
            uniform(rng, &[k, w], 1.0 / (w as f64).sqrt()),
        );
        let conv_b = store.add(format!("{prefix}.conv.b"), uniform(rng, &[k], 0.1));
        let forward = SsmParams::init(
            store,
            &format!("{prefix}.fwd"),
            &cfg,
            rng,
            shared.map(|s| s.forward),
        );
        let backward = SsmParams::init(
            store,
            &format!("{prefix}.bwd"),
            &cfg,
            rng,
            shared.map(|s| s.backward),
        );
        let out_proj = store.add(format!("{prefix}.out_proj"), linear_weight(rng, k, d));
        Ok(Self {
            cfg,
            norm_gamma,
            norm_beta,
            in_x,
            in_z,
            conv_w,
            conv_b,
            forward,
            backward,
            out_proj,
        })
    }

    /// Output before the residual connection.
    pub fn branch(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: ScanMode) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.d_model {
            return Err(Error::shape("bimamba", &shape, &[0, self.cfg.d_model]));
        }
        let gamma = tape.param(store, self.norm_gamma)?;
        let beta = tape.param(store, self.norm_beta)?;
        let xn = tape.layer_norm(x)?;
        let xn = tape.mul_row(xn, gamma)?;
        let xn = tape.add_row(xn, beta)?;

        let in_x = tape.param(store, self.in_x)?;
        let in_z = tape.param(store, self.in_z)?;
        let u = tape.matmul(xn, in_x)?;
        let z = tape.matmul(xn, in_z)?;

        let conv_w = tape.param(store, self.conv_w)?;
        let conv_b = tape.param(store, self.conv_b)?;

        let uf = causal_conv(tape, u, conv_w, conv_b)?;
        let uf = tape.silu(uf)?;
        let yf = self.forward.forward(tape, store, uf, mode)?;

        let ub = tape.flip_time(u)?;
        let ub = causal_conv(tape, ub, conv_w, conv_b)?;
        let ub = tape.silu(ub)?;
        let yb = self.backward.forward(tape, store, ub, mode)?;
        let yb = tape.flip_time(yb)?;

        let y = tape.add(yf, yb)?;
        let gate = tape.silu(z)?;
        let y = tape.mul(y, gate)?;
        let out_proj = tape.param(store, self.out_proj)?;
        tape.matmul(y, out_proj)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: ScanMode) -> Result<Var> {
        let b = self.branch(tape, store, x, mode)?;
        tape.add(x, b)
    }

    /// Scalar parameters of one block; `shared` excludes both `A` tensors.
    pub fn param_count(cfg: &BlockConfig, shared: bool) -> usize {
        let (d, k, w) = (cfg.d_model, cfg.inner(), cfg.conv_width);
        2 * d + 2 * d * k + k * w + k + 2 * SsmParams::param_count(cfg, !shared) + k * d
    }

    /// Multiply-accumulates of one forward pass over `len` steps.
    pub fn macs(cfg: &BlockConfig, len: usize) -> u64 {
        let (l, d, k, w) = (len as u64, cfg.d_model as u64, cfg.inner() as u64, cfg.conv_width as u64);
        2 * l * d * k + 2 * l * k * w + 2 * SsmParams::macs(cfg, len) + l * k * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(cfg: BlockConfig) -> (ParamStore, BiMambaParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = BiMambaParams::init(&mut store, "blk", cfg, &mut rng, None).unwrap();
        (store, p)
    }

    #[test]
    fn a_log_spans_one_to_n() {
        let cfg = BlockConfig::new(8, 2, 4);
        let (store, p) = block(cfg);
        let a = store.value(p.forward.a_log);
        assert_eq!(a.shape(), &[16, 4]);
        for (i, &v) in a.row(5).iter().enumerate() {
            assert!((v.exp() - (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_step_sizes_in_range() {
        let cfg = BlockConfig::new(8, 2, 4);
        let (store, p) = block(cfg);
        for &b in store.value(p.forward.dt_bias).data() {
            let dt = crate::numerics::softplus(b);
            assert!((0.01..=0.1).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn param_count_matches_store() {
        let cfg = BlockConfig::new(8, 2, 4);
        let (store, _) = block(cfg);
        assert_eq!(store.num_scalars(), BiMambaParams::param_count(&cfg, false));
    }

    #[test]
    fn shape_preserved() {
        let cfg = BlockConfig::new(8, 2, 4);
        let (store, p) = block(cfg);
        for len in [1, 5, 39, 50] {
            let mut tape = Tape::new();
            let data = (0..len * 8).map(|i| ((i * 7) as f64 * 0.13).sin()).collect();
            let x = tape.constant(Tensor::new([len, 8], data).unwrap()).unwrap();
            let y = p.forward(&mut tape, &store, x, ScanMode::Recurrent).unwrap();
            assert_eq!(tape.value(y).shape(), &[len, 8]);
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let cfg = BlockConfig::new(8, 2, 4);
        let (store, p) = block(cfg);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([3, 7])).unwrap();
        assert!(p.forward(&mut tape, &store, x, ScanMode::Recurrent).is_err());
    }
}

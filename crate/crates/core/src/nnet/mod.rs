//! Minimal dense feed-forward velocity network.
//!
//! The network maps `[x, time_embed(t), cond_embed(y)]` through a stack of
//! dense layers back to the dimension of `x`. Gradients come from the tape
//! in [`tape`], which records the forward pass as a graph of matrix ops and
//! replays it in reverse.

mod adam;
mod tape;

pub use adam::{AdamHyper, AdamState};
pub use tape::{neg_log_sigmoid, sigmoid, Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_prime(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

// tanh-approximation GELU.
const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let g = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + g.tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let g = s * (x + GELU_C * x * x * x);
    let t = g.tanh();
    let gp = s * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * gp
}

/// Sinusoidal time features with a strictly increasing frequency table.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbed {
    freqs: Vec<f64>,
}

impl TimeEmbed {
    /// Geometric frequency ladder from one cycle up to `max_cycles` cycles
    /// over the unit interval. `dim` must be even; the table holds `dim/2`
    /// frequencies and the embedding interleaves sin/cos per frequency.
    pub fn geometric(dim: usize, max_cycles: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::config(format!("time embedding dim must be even and positive, got {dim}")));
        }
        if !(max_cycles >= 1.0) {
            return Err(Error::config(format!("max_cycles must be >= 1, got {max_cycles}")));
        }
        let half = dim / 2;
        let tau = std::f64::consts::TAU;
        let freqs = if half == 1 {
            vec![tau]
        } else {
            (0..half)
                .map(|i| tau * max_cycles.powf(i as f64 / (half - 1) as f64))
                .collect()
        };
        Self::from_freqs(freqs)
    }

    pub fn from_freqs(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::config("frequency table must be nonempty"));
        }
        if !freqs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("frequency table must be strictly increasing"));
        }
        Ok(TimeEmbed { freqs })
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Interleaved `[sin(f0 t), cos(f0 t), sin(f1 t), cos(f1 t), ...]`.
    pub fn embed(&self, t: f64) -> Result<Tensor> {
        if !t.is_finite() {
            return Err(Error::domain(format!("time {t} is not finite")));
        }
        let mut out = Vec::with_capacity(self.dim());
        for &f in &self.freqs {
            out.push((f * t).sin());
            out.push((f * t).cos());
        }
        Tensor::from_vec(vec![self.dim()], out)
    }
}

/// Standalone time-embedding helper with a default geometric table.
pub fn time_embed(t: f64, dim: usize) -> Result<Tensor> {
    TimeEmbed::geometric(dim, DEFAULT_TIME_MAX_CYCLES)?.embed(t)
}

pub const DEFAULT_TIME_MAX_CYCLES: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// (in x out), row-major.
    pub weight: Tensor,
    /// (out,)
    pub bias: Tensor,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }
    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Trainable condition-embedding table. Row `n_conds` is the reserved null
/// condition used by classifier-free guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTable {
    n_conds: usize,
    dim: usize,
    /// ((n_conds + 1) x dim)
    pub table: Tensor,
}

impl CondTable {
    /// Build from an existing ((n_conds + 1) x dim) table tensor.
    pub fn from_table(n_conds: usize, dim: usize, table: Tensor) -> Result<Self> {
        if table.shape() != [n_conds + 1, dim] {
            return Err(Error::shape(format!(
                "condition table shape {:?}, expected [{}, {dim}]",
                table.shape(),
                n_conds + 1
            )));
        }
        Ok(CondTable { n_conds, dim, table })
    }

    pub fn rows(&self) -> usize {
        self.n_conds + 1
    }
    pub fn n_conds(&self) -> usize {
        self.n_conds
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Weights, biases, time features, and optional condition embeddings of the
/// velocity network u(x, y, t).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldParams {
    data_dim: usize,
    layers: Vec<Layer>,
    activations: Vec<Activation>,
    time: TimeEmbed,
    cond: Option<CondTable>,
}

/// Construction-time description of the network.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NetConfig {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_dim: usize,
    pub n_conds: usize,
    pub cond_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            data_dim: 2,
            hidden: vec![128, 128, 128],
            activation: Activation::Gelu,
            time_dim: 16,
            n_conds: 0,
            cond_dim: 8,
        }
    }
}

impl VectorFieldParams {
    /// Glorot-uniform initialization from the given RNG stream.
    pub fn init(config: &NetConfig, rng: &mut CounterRng) -> Result<Self> {
        let time = TimeEmbed::geometric(config.time_dim, DEFAULT_TIME_MAX_CYCLES)?;
        let cond_dim = if config.n_conds > 0 { config.cond_dim } else { 0 };
        let in_dim = config.data_dim + time.dim() + cond_dim;

        let mut dims = vec![in_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(config.data_dim);

        let mut layers = Vec::new();
        let mut activations = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = Tensor::from_vec(
                vec![fan_in, fan_out],
                (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect(),
            )?;
            let bias = Tensor::zeros(vec![fan_out]);
            layers.push(Layer { weight, bias });
            activations.push(config.activation);
        }
        // Output layer is linear.
        *activations.last_mut().unwrap() = Activation::Identity;

        let cond = if config.n_conds > 0 {
            if config.cond_dim == 0 {
                return Err(Error::config("cond_dim must be positive when conditions exist"));
            }
            let rows = config.n_conds + 1;
            let bound = (6.0 / (rows + config.cond_dim) as f64).sqrt();
            Some(CondTable {
                n_conds: config.n_conds,
                dim: config.cond_dim,
                table: Tensor::from_vec(
                    vec![rows, config.cond_dim],
                    (0..rows * config.cond_dim).map(|_| rng.uniform(-bound, bound)).collect(),
                )?,
            })
        } else {
            None
        };

        Self::new(config.data_dim, layers, activations, time, cond)
    }

    /// Assemble from explicit parts, checking the dimension chain.
    pub fn new(
        data_dim: usize,
        layers: Vec<Layer>,
        activations: Vec<Activation>,
        time: TimeEmbed,
        cond: Option<CondTable>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        if layers.len() != activations.len() {
            return Err(Error::config("one activation tag per layer required"));
        }
        let cond_dim = cond.as_ref().map_or(0, |c| c.dim);
        let want_in = data_dim + time.dim() + cond_dim;
        if layers[0].in_dim() != want_in {
            return Err(Error::shape(format!(
                "first layer expects input width {}, got {want_in}",
                layers[0].in_dim()
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if layers.last().unwrap().out_dim() != data_dim {
            return Err(Error::shape(format!(
                "last layer must emit {data_dim} values, emits {}",
                layers.last().unwrap().out_dim()
            )));
        }
        if let Some(c) = &cond {
            if c.table.shape() != [c.n_conds + 1, c.dim] {
                return Err(Error::shape("condition table shape mismatch".to_string()));
            }
        }
        Ok(VectorFieldParams { data_dim, layers, activations, time, cond })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }
    pub fn time(&self) -> &TimeEmbed {
        &self.time
    }
    pub fn cond(&self) -> Option<&CondTable> {
        self.cond.as_ref()
    }
    pub fn n_conds(&self) -> usize {
        self.cond.as_ref().map_or(0, |c| c.n_conds)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let net: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        net + self.cond.as_ref().map_or(0, |c| c.table.len())
    }

    fn embed_row(&self, x: &[f64], t: f64, y: Option<usize>) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.layers[0].in_dim());
        row.extend_from_slice(x);
        row.extend_from_slice(self.time.embed(t)?.data());
        if let Some(c) = &self.cond {
            let r = self.cond_row(y)?;
            let start = r * c.dim;
            row.extend_from_slice(&c.table.data()[start..start + c.dim]);
        } else if y.is_some() {
            return Err(Error::config("condition id given but network has no condition table"));
        }
        Ok(row)
    }

    /// Resolve a condition id to its table row; `None` selects the null row.
    pub fn cond_row(&self, y: Option<usize>) -> Result<usize> {
        let c = self
            .cond
            .as_ref()
            .ok_or_else(|| Error::config("network has no condition table"))?;
        match y {
            None => Ok(c.n_conds),
            Some(id) if id < c.n_conds => Ok(id),
            Some(id) => Err(Error::config(format!(
                "condition id {id} out of range ({} conditions)",
                c.n_conds
            ))),
        }
    }

    /// Predicted velocity for a single point. Output shape equals `x`.
    pub fn forward(&self, x: &Tensor, t: f64, y: Option<usize>) -> Result<Tensor> {
        if x.shape() != [self.data_dim] {
            return Err(Error::shape(format!(
                "input shape {:?}, expected [{}]",
                x.shape(),
                self.data_dim
            )));
        }
        let batch = Tensor::from_vec(vec![1, self.data_dim], x.data().to_vec())?;
        let out = self.forward_batch(&batch, &[t], &[y])?;
        Tensor::from_vec(vec![self.data_dim], out.into_data())
    }

    /// Predicted velocities for a (B x data_dim) batch.
    pub fn forward_batch(&self, xs: &Tensor, ts: &[f64], ys: &[Option<usize>]) -> Result<Tensor> {
        let b = self.check_batch(xs, ts, ys)?;
        let in_dim = self.layers[0].in_dim();
        let mut h = Vec::with_capacity(b * in_dim);
        for i in 0..b {
            let x = &xs.data()[i * self.data_dim..(i + 1) * self.data_dim];
            h.extend(self.embed_row(x, ts[i], ys[i])?);
        }
        let mut cur = h;
        let mut cur_cols = in_dim;
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let out_cols = layer.out_dim();
            let mut next = vec![0.0; b * out_cols];
            matmul(&cur, b, cur_cols, layer.weight.data(), out_cols, &mut next);
            for r in 0..b {
                for c in 0..out_cols {
                    let v = next[r * out_cols + c] + layer.bias.data()[c];
                    next[r * out_cols + c] = act.apply(v);
                }
            }
            cur = next;
            cur_cols = out_cols;
        }
        Tensor::from_vec(vec![b, self.data_dim], cur)
    }

    fn check_batch(&self, xs: &Tensor, ts: &[f64], ys: &[Option<usize>]) -> Result<usize> {
        if xs.shape().len() != 2 || xs.shape()[1] != self.data_dim {
            return Err(Error::shape(format!(
                "batch shape {:?}, expected [B, {}]",
                xs.shape(),
                self.data_dim
            )));
        }
        let b = xs.shape()[0];
        if ts.len() != b || ys.len() != b {
            return Err(Error::shape(format!(
                "batch of {b} rows with {} timesteps and {} condition ids",
                ts.len(),
                ys.len()
            )));
        }
        Ok(b)
    }

    /// Named parameter tensors in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &l.weight));
            out.push((format!("layer{i}.bias"), &l.bias));
        }
        if let Some(c) = &self.cond {
            out.push(("cond_embed".to_string(), &c.table));
        }
        out
    }

    /// All parameters flattened in checkpoint order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in self.named_tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrite all parameters from a flat slice in checkpoint order.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat parameter slice has {} values, expected {}",
                values.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for dst in [&mut l.weight, &mut l.bias] {
                let n = dst.len();
                dst.data_mut().copy_from_slice(&values[off..off + n]);
                off += n;
            }
        }
        if let Some(c) = &mut self.cond {
            let n = c.table.len();
            c.table.data_mut().copy_from_slice(&values[off..off + n]);
        }
        Ok(())
    }

    /// Apply an in-place update `p += f(slot_value)` per parameter tensor,
    /// walking tensors in checkpoint order alongside a congruent gradient.
    pub fn zip_apply(&mut self, grads: &Gradients, mut f: impl FnMut(&mut [f64], &[f64])) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape("gradient layer count mismatch".to_string()));
        }
        for (l, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            if !l.weight.same_shape(gw) || !l.bias.same_shape(gb) {
                return Err(Error::shape("gradient shape mismatch".to_string()));
            }
            f(l.weight.data_mut(), gw.data());
            f(l.bias.data_mut(), gb.data());
        }
        match (&mut self.cond, &grads.cond_table) {
            (Some(c), Some(g)) => {
                if !c.table.same_shape(g) {
                    return Err(Error::shape("condition gradient shape mismatch".to_string()));
                }
                f(c.table.data_mut(), g.data());
            }
            (None, None) => {}
            _ => return Err(Error::shape("gradient/parameter condition tables disagree".to_string())),
        }
        Ok(())
    }
}

/// C += A (m x k) * B (k x n), naive ikj order.
pub(crate) fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

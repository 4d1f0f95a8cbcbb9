//! Token/FLOPs/memory estimation for DiT-style training under parallelism
//! configurations, plus the two-stage data-parallel load balancer and the
//! duration/aspect bucketizer.
//!
//! The FLOPs model is a·N·tokens for the dense part plus b·L·d·tokens² for
//! attention, with (a, b) set by the accounting mode. Absolute numbers are
//! estimates; the accounting mode travels with every result so readers know
//! what was counted.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Clip geometry in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl ResolutionSpec {
    pub fn new(frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::config("resolution dims must be positive".to_string()));
        }
        Ok(ResolutionSpec { frames, height, width })
    }
}

/// Latent tokens for a clip: ceil(T/8) * ceil(H/16) * ceil(W/16).
pub fn token_count(res: ResolutionSpec) -> usize {
    let (t, h, w) = crate::kernels::latent_shape(res.frames, res.height, res.width);
    t * h * w
}

/// Transformer shape relevant to the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    /// (self branch, text branch) widths of the cross-attention block.
    pub cross_attn_dims: (usize, usize),
    /// Total parameter count.
    pub params: f64,
}

impl ArchSpec {
    pub fn hidden_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::config("arch dims must be positive".to_string()));
        }
        if !(self.params > 0.0) {
            return Err(Error::config("parameter count must be positive".to_string()));
        }
        Ok(())
    }
}

/// What the FLOPs numbers include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountingMode {
    ForwardOnly,
    FwdBwd,
    FwdBwdRecompute,
}

impl AccountingMode {
    /// (a, b): dense term a·N·tokens, attention term b·L·d·tokens².
    /// Forward is 2 FLOPs per param-token and 4·L·d·tokens² for the
    /// QK/AV matmul pair; backward doubles it, full recompute adds one
    /// more forward.
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            AccountingMode::ForwardOnly => (2.0, 4.0),
            AccountingMode::FwdBwd => (6.0, 12.0),
            AccountingMode::FwdBwdRecompute => (8.0, 16.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AccountingMode::ForwardOnly => "forward_only",
            AccountingMode::FwdBwd => "fwd+bwd",
            AccountingMode::FwdBwdRecompute => "fwd+bwd+recompute",
        }
    }
}

/// Cost-model constants. The comm constants are calibration knobs for the
/// utilization heuristic, not measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub mode: AccountingMode,
    pub bytes_per_param: f64,
    pub bytes_per_grad: f64,
    pub bytes_per_optimizer: f64,
    pub bytes_per_activation: f64,
    /// FLOPs-equivalent stall per element-round of tensor-parallel traffic.
    pub tp_comm_cost: f64,
    /// Same for context-parallel traffic.
    pub cp_comm_cost: f64,
    /// Pipeline bubble weight; the bubble shrinks with virtual stages.
    pub pp_bubble_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            mode: AccountingMode::FwdBwdRecompute,
            bytes_per_param: 2.0,      // bf16 weights
            bytes_per_grad: 2.0,       // bf16 grads
            bytes_per_optimizer: 12.0, // fp32 master + two moments
            bytes_per_activation: 2.0,
            tp_comm_cost: 8.0,
            cp_comm_cost: 8.0,
            pp_bubble_cost: 1.0,
        }
    }
}

/// FLOPs for one sample at a token count, with the terms broken out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub mode: AccountingMode,
    pub tokens: usize,
    pub dense_tflops: f64,
    pub attention_tflops: f64,
    pub total_tflops: f64,
}

pub fn flops_per_sample(arch: &ArchSpec, tokens: usize, model: &CostModel) -> Result<FlopsBreakdown> {
    arch.validate()?;
    if tokens == 0 {
        return Err(Error::config("token count must be >= 1".to_string()));
    }
    let (a, b) = model.mode.coefficients();
    let t = tokens as f64;
    let dense = a * arch.params * t;
    let attention = b * arch.layers as f64 * arch.hidden_dim() as f64 * t * t;
    Ok(FlopsBreakdown {
        mode: model.mode,
        tokens,
        dense_tflops: dense / 1e12,
        attention_tflops: attention / 1e12,
        total_tflops: (dense + attention) / 1e12,
    })
}

/// Parallelism degrees plus the activation-checkpointing fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelismConfig {
    pub tp: usize,
    pub cp: usize,
    pub pp: usize,
    pub vpp: usize,
    pub checkpoint_fraction: f64,
    pub world_size: usize,
}

impl ParallelismConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tp == 0 || self.cp == 0 || self.pp == 0 || self.vpp == 0 || self.world_size == 0 {
            return Err(Error::config("parallel degrees must be positive".to_string()));
        }
        let product = self.tp * self.cp * self.pp;
        if product > self.world_size || self.world_size % product != 0 {
            return Err(Error::config(format!(
                "tp*cp*pp = {product} must divide world size {}",
                self.world_size
            )));
        }
        if !(0.0..=1.0).contains(&self.checkpoint_fraction) {
            return Err(Error::config(format!(
                "checkpoint fraction {} outside [0, 1]",
                self.checkpoint_fraction
            )));
        }
        Ok(())
    }

    /// Data-parallel degree left over after model parallelism.
    pub fn dp(&self) -> usize {
        self.world_size / (self.tp * self.cp * self.pp)
    }
}

/// Per-GPU memory breakdown in GB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryBreakdown {
    pub params_gb: f64,
    pub grads_gb: f64,
    pub optimizer_gb: f64,
    pub activations_gb: f64,
    pub total_gb: f64,
}

const GB: f64 = 1024.0 * 1024.0 * 1024.0;

/// Fixed per-layer activation residual kept even under full checkpointing
/// (the layer-boundary tensors), as a fraction of the full per-layer cost.
const CHECKPOINT_RESIDUAL: f64 = 0.1;

/// Activation scale: elements stored per token per layer, as a multiple of
/// the hidden width (attention and FFN intermediates).
const ACTIVATION_WIDTH_FACTOR: f64 = 8.0;

/// Memory per GPU: params and grads shard over tp * pp, optimizer state
/// additionally over dp (stage-1 sharding), activations over tp * cp with
/// the checkpointing fraction discounting everything above the residual
/// floor.
pub fn memory_footprint(
    arch: &ArchSpec,
    par: &ParallelismConfig,
    tokens: usize,
    model: &CostModel,
) -> Result<MemoryBreakdown> {
    arch.validate()?;
    par.validate()?;
    let shard = (par.tp * par.pp) as f64;
    let params_gb = arch.params * model.bytes_per_param / shard / GB;
    let grads_gb = arch.params * model.bytes_per_grad / shard / GB;
    let optimizer_gb = arch.params * model.bytes_per_optimizer / (shard * par.dp() as f64) / GB;

    let per_layer = tokens as f64
        * arch.hidden_dim() as f64
        * ACTIVATION_WIDTH_FACTOR
        * model.bytes_per_activation
        / (par.tp * par.cp) as f64;
    let layers = arch.layers as f64 / par.pp as f64;
    let live = 1.0 - par.checkpoint_fraction;
    let activations_gb = layers * per_layer * (CHECKPOINT_RESIDUAL + (1.0 - CHECKPOINT_RESIDUAL) * live) / GB;

    Ok(MemoryBreakdown {
        params_gb,
        grads_gb,
        optimizer_gb,
        activations_gb,
        total_gb: params_gb + grads_gb + optimizer_gb + activations_gb,
    })
}

/// Share of samples at one resolution in the training mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub resolution: ResolutionSpec,
    pub weight: f64,
}

/// Model-FLOPs-utilization heuristic:
/// useful / (useful + recompute + comm-stall FLOPs equivalents).
///
/// Useful work is fwd+bwd; recompute is the checkpointed share of one extra
/// forward. Comm stalls scale with (degree - 1) rounds of tokens·d·L
/// element traffic per sample, and the pipeline bubble with
/// (pp - 1) / (pp · vpp).
pub fn estimate_mfu(
    arch: &ArchSpec,
    par: &ParallelismConfig,
    mix: &[MixEntry],
    model: &CostModel,
) -> Result<f64> {
    arch.validate()?;
    par.validate()?;
    if mix.is_empty() {
        return Err(Error::contract("resolution mix must be nonempty".to_string()));
    }
    let fwd_bwd = CostModel { mode: AccountingMode::FwdBwd, ..*model };
    let fwd = CostModel { mode: AccountingMode::ForwardOnly, ..*model };

    let mut useful = 0.0;
    let mut overhead = 0.0;
    for entry in mix {
        if !(entry.weight > 0.0) {
            return Err(Error::config("mix weights must be positive".to_string()));
        }
        let tokens = token_count(entry.resolution);
        let use_tf = flops_per_sample(arch, tokens, &fwd_bwd)?.total_tflops;
        let recompute = par.checkpoint_fraction * flops_per_sample(arch, tokens, &fwd)?.total_tflops;

        let traffic = tokens as f64 * arch.hidden_dim() as f64 * arch.layers as f64 / 1e12;
        let tp_stall = model.tp_comm_cost * (par.tp as f64 - 1.0) * traffic;
        let cp_stall = model.cp_comm_cost * (par.cp as f64 - 1.0) * traffic;
        let bubble = model.pp_bubble_cost * use_tf * (par.pp as f64 - 1.0)
            / (par.pp as f64 * par.vpp as f64);

        useful += entry.weight * use_tf;
        overhead += entry.weight * (recompute + tp_stall + cp_stall + bubble);
    }
    Ok(100.0 * useful / (useful + overhead))
}

/// One evaluated strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyReport {
    pub config: ParallelismConfig,
    pub memory: MemoryBreakdown,
    pub mfu_percent: f64,
}

/// Evaluate and rank candidate configurations: feasible ones by descending
/// MFU, ties broken by (tp, cp, pp, vpp) lexicographically. Candidates that
/// exceed the memory budget are dropped.
pub fn rank_strategies(
    arch: &ArchSpec,
    candidates: &[ParallelismConfig],
    mix: &[MixEntry],
    model: &CostModel,
    memory_budget_gb: f64,
) -> Result<Vec<StrategyReport>> {
    if candidates.is_empty() {
        return Err(Error::contract("no candidate configurations".to_string()));
    }
    let max_tokens = mix
        .iter()
        .map(|e| token_count(e.resolution))
        .max()
        .ok_or_else(|| Error::contract("resolution mix must be nonempty".to_string()))?;
    let mut out = Vec::new();
    for par in candidates {
        let memory = memory_footprint(arch, par, max_tokens, model)?;
        if memory.total_gb > memory_budget_gb {
            continue;
        }
        let mfu_percent = estimate_mfu(arch, par, mix, model)?;
        out.push(StrategyReport { config: *par, memory, mfu_percent });
    }
    out.sort_by(|a, b| {
        b.mfu_percent
            .partial_cmp(&a.mfu_percent)
            .unwrap()
            .then_with(|| {
                let ka = (a.config.tp, a.config.cp, a.config.pp, a.config.vpp);
                let kb = (b.config.tp, b.config.cp, b.config.pp, b.config.vpp);
                ka.cmp(&kb)
            })
    });
    Ok(out)
}

/// Coarse-grained FLOPs alignment: B_r = floor(F_target / (alpha * F_r)).
/// Raises a config error naming the resolution if any batch floors to zero.
pub fn coarse_batch_sizes(
    flops_per_resolution: &[(ResolutionSpec, f64)],
    f_target: f64,
    alpha: f64,
) -> Result<Vec<(ResolutionSpec, usize)>> {
    if !(alpha > 0.0) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    if !(f_target > 0.0) {
        return Err(Error::config("target FLOPs must be positive".to_string()));
    }
    let mut out = Vec::with_capacity(flops_per_resolution.len());
    for &(res, f_r) in flops_per_resolution {
        if !(f_r > 0.0) {
            return Err(Error::config(format!(
                "FLOPs for {}x{}x{} must be positive",
                res.frames, res.height, res.width
            )));
        }
        let b_r = (f_target / (alpha * f_r)).floor() as usize;
        if b_r == 0 {
            return Err(Error::config(format!(
                "batch size floors to zero for {}x{}x{}; lower alpha",
                res.frames, res.height, res.width
            )));
        }
        out.push((res, b_r));
    }
    Ok(out)
}

/// Final state of the fine-grained padding stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PadAllocation {
    pub loads: Vec<f64>,
    pub images_per_batch: Vec<usize>,
}

/// Place identical image supplements one at a time on the batch with the
/// smallest current load; ties go to the lowest batch index.
pub fn greedy_pad(batch_loads: &[f64], n_images: usize, image_flops: f64) -> Result<PadAllocation> {
    if batch_loads.is_empty() {
        return Err(Error::contract("no batches to pad".to_string()));
    }
    if !(image_flops >= 0.0) {
        return Err(Error::config("image cost must be non-negative".to_string()));
    }
    let mut loads = batch_loads.to_vec();
    let mut counts = vec![0usize; loads.len()];
    for _ in 0..n_images {
        let mut argmin = 0;
        for (i, &l) in loads.iter().enumerate() {
            if l < loads[argmin] {
                argmin = i;
            }
        }
        loads[argmin] += image_flops;
        counts[argmin] += 1;
    }
    Ok(PadAllocation { loads, images_per_batch: counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectBucket {
    Landscape,
    Portrait,
    Square,
}

impl AspectBucket {
    pub fn label(self) -> &'static str {
        match self {
            AspectBucket::Landscape => "landscape",
            AspectBucket::Portrait => "portrait",
            AspectBucket::Square => "square",
        }
    }
}

pub const LENGTH_BUCKETS: [usize; 4] = [1, 68, 136, 204];

/// Length bucket: largest of {1, 68, 136, 204} not exceeding the frame
/// count. Aspect bucket: nearest height/width ratio among 9:16 (landscape),
/// 16:9 (portrait), and 1:1 in log space, ties to square.
pub fn bucketize(frames: usize, height: usize, width: usize) -> Result<(usize, AspectBucket)> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::config("dims must be positive".to_string()));
    }
    let length = *LENGTH_BUCKETS
        .iter()
        .rev()
        .find(|&&b| b <= frames)
        .unwrap_or(&LENGTH_BUCKETS[0]);

    let log_ratio = (height as f64 / width as f64).ln();
    let targets = [
        (AspectBucket::Landscape, (9.0_f64 / 16.0).ln()),
        (AspectBucket::Portrait, (16.0_f64 / 9.0).ln()),
        (AspectBucket::Square, 0.0),
    ];
    let mut best = AspectBucket::Square;
    let mut best_dist = f64::INFINITY;
    for (bucket, target) in targets {
        let dist = (log_ratio - target).abs();
        if dist < best_dist || (dist == best_dist && bucket == AspectBucket::Square) {
            best = bucket;
            best_dist = dist;
        }
    }
    Ok((length, best))
}

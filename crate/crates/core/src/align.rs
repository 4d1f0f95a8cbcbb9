//! Post-training: rectified-flow self-distillation over teacher-generated
//! pairs, and preference optimization against a frozen reference model.

use crate::error::{Error, Result};
use crate::flow::{
    euler_sample, fm_loss, fm_loss_grad, interpolate, FlowSample, GuidanceSpec, SamplerSpec,
    StepSchedule, VelocityField,
};
use crate::nnet::{neg_log_sigmoid, sigmoid, AdamState, Gradients, VectorFieldParams};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// A (noise, teacher sample) pair for distillation.
#[derive(Debug, Clone)]
pub struct ReflowPair {
    pub x0: Tensor,
    pub x1_hat: Tensor,
    pub y: Option<usize>,
    pub teacher_nfe: usize,
}

impl ReflowPair {
    pub fn new(x0: Tensor, x1_hat: Tensor, y: Option<usize>, teacher_nfe: usize) -> Result<Self> {
        if !x0.same_shape(&x1_hat) {
            return Err(Error::shape("pair endpoints must share a shape".to_string()));
        }
        if teacher_nfe == 0 {
            return Err(Error::contract("teacher_nfe must be >= 1".to_string()));
        }
        Ok(ReflowPair { x0, x1_hat, y, teacher_nfe })
    }
}

/// Draw n noise points and integrate each through the teacher. Pairs record
/// the exact noise used; the whole procedure is a function of the seed.
pub fn generate_reflow_pairs<F: VelocityField + ?Sized>(
    teacher: &F,
    data_dim: usize,
    nfe: usize,
    guidance: Option<&GuidanceSpec>,
    ys: &[Option<usize>],
    rng: &mut CounterRng,
) -> Result<Vec<ReflowPair>> {
    if nfe == 0 {
        return Err(Error::contract("nfe must be >= 1".to_string()));
    }
    let n = ys.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schedule = StepSchedule::uniform(nfe)?;
    let mut noise = Vec::with_capacity(n * data_dim);
    for _ in 0..n * data_dim {
        noise.push(rng.next_gaussian());
    }

    // Batch per condition so every trajectory group shares one forward pass
    // per step; results land back at their original indices.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ys[i].map_or(usize::MAX, |v| v));
    let mut out: Vec<Option<ReflowPair>> = (0..n).map(|_| None).collect();
    let mut start = 0;
    while start < n {
        let y = ys[order[start]];
        let mut end = start;
        while end < n && ys[order[end]] == y {
            end += 1;
        }
        let idxs = &order[start..end];
        let mut x0 = Vec::with_capacity(idxs.len() * data_dim);
        for &i in idxs {
            x0.extend_from_slice(&noise[i * data_dim..(i + 1) * data_dim]);
        }
        let x0 = Tensor::from_vec(vec![idxs.len(), data_dim], x0)?;
        let x1 = euler_sample(teacher, &x0, &schedule, guidance, y)?;
        for (k, &i) in idxs.iter().enumerate() {
            let x0_row = Tensor::from_vec(
                vec![data_dim],
                x0.data()[k * data_dim..(k + 1) * data_dim].to_vec(),
            )?;
            let x1_row = Tensor::from_vec(
                vec![data_dim],
                x1.data()[k * data_dim..(k + 1) * data_dim].to_vec(),
            )?;
            out[i] = Some(ReflowPair::new(x0_row, x1_row, y, nfe)?);
        }
        start = end;
    }
    Ok(out.into_iter().map(|p| p.unwrap()).collect())
}

pub fn pairs_to_flow_samples(pairs: &[ReflowPair]) -> Result<Vec<FlowSample>> {
    pairs
        .iter()
        .map(|p| FlowSample::new(p.x0.clone(), p.x1_hat.clone(), p.y))
        .collect()
}

/// Distillation loss: the flow-matching objective over reflow pairs. The
/// U-shaped sampler supplies the end-of-interval emphasis.
pub fn distill_loss<F: VelocityField + ?Sized>(
    student: &F,
    pairs: &[ReflowPair],
    sampler: &SamplerSpec,
    rng: &mut CounterRng,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("empty pair set".to_string()));
    }
    fm_loss(student, &pairs_to_flow_samples(pairs)?, sampler, rng)
}

pub fn distill_loss_grad(
    params: &VectorFieldParams,
    pairs: &[ReflowPair],
    sampler: &SamplerSpec,
    rng: &mut CounterRng,
) -> Result<(f64, Gradients)> {
    if pairs.is_empty() {
        return Err(Error::contract("empty pair set".to_string()));
    }
    fm_loss_grad(params, &pairs_to_flow_samples(pairs)?, sampler, rng)
}

/// Clamp floor for the literal 1/t^2 weighting, which is singular at t = 0.
pub const WEIGHT_T_FLOOR: f64 = 1e-3;

/// Literal 1/t^2-weighted distillation loss at explicit timesteps.
pub fn weighted_distill_loss_at<F: VelocityField + ?Sized>(
    student: &F,
    pairs: &[ReflowPair],
    ts: &[f64],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("empty pair set".to_string()));
    }
    if ts.len() != pairs.len() {
        return Err(Error::contract("one timestep per pair required".to_string()));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for (p, &t) in pairs.iter().zip(ts) {
        let xt = interpolate(&p.x0, &p.x1_hat, t)?;
        let u = student.velocity(&xt, t, p.y)?;
        let v = p.x1_hat.sub(&p.x0)?;
        let w = 1.0 / t.max(WEIGHT_T_FLOOR).powi(2);
        terms.push(w * u.sub(&v)?.sq_norm());
    }
    Ok(crate::tensor::pairwise_mean(&terms))
}

/// Condition, preferred/non-preferred samples, and the shared (noise, t)
/// that keeps both sides of a comparison aligned.
#[derive(Debug, Clone)]
pub struct PreferencePair {
    pub y: Option<usize>,
    pub x_w: Tensor,
    pub x_l: Tensor,
    pub shared_noise: Tensor,
    pub shared_t: f64,
}

impl PreferencePair {
    pub fn new(
        y: Option<usize>,
        x_w: Tensor,
        x_l: Tensor,
        shared_noise: Tensor,
        shared_t: f64,
    ) -> Result<Self> {
        if !(x_w.same_shape(&x_l) && x_w.same_shape(&shared_noise)) {
            return Err(Error::shape("preference pair tensors must share a shape".to_string()));
        }
        if !(shared_t > 0.0 && shared_t < 1.0) {
            return Err(Error::domain(format!(
                "shared_t must lie strictly inside (0, 1), got {shared_t}"
            )));
        }
        Ok(PreferencePair { y, x_w, x_l, shared_noise, shared_t })
    }
}

/// Velocity-MSE score of a model on one endpoint of a pair:
/// s(x) = || u(x_t, y, t) - (x - noise) ||^2 at x_t = (1 - t) noise + t x.
pub fn velocity_mse<F: VelocityField + ?Sized>(
    model: &F,
    pair: &PreferencePair,
    x: &Tensor,
) -> Result<f64> {
    let xt = interpolate(&pair.shared_noise, x, pair.shared_t)?;
    let u = model.velocity(&xt, pair.shared_t, pair.y)?;
    let target = x.sub(&pair.shared_noise)?;
    Ok(u.sub(&target)?.sq_norm())
}

/// Inner comparison term:
/// z = [s_ref(x_w) - s_theta(x_w)] - [s_ref(x_l) - s_theta(x_l)].
/// Positive iff theta fits the preferred sample better, relative to the
/// reference, than the non-preferred one.
pub fn dpo_inner_z<A: VelocityField + ?Sized, B: VelocityField + ?Sized>(
    theta: &A,
    reference: &B,
    pair: &PreferencePair,
) -> Result<f64> {
    let s_theta_w = velocity_mse(theta, pair, &pair.x_w)?;
    let s_theta_l = velocity_mse(theta, pair, &pair.x_l)?;
    let s_ref_w = velocity_mse(reference, pair, &pair.x_w)?;
    let s_ref_l = velocity_mse(reference, pair, &pair.x_l)?;
    Ok((s_ref_w - s_theta_w) - (s_ref_l - s_theta_l))
}

/// Preference loss -log sigma(beta z); log 2 at z = 0 and strictly
/// decreasing in z.
pub fn dpo_loss(z: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::config(format!("beta must be positive, got {beta}")));
    }
    Ok(neg_log_sigmoid(beta * z))
}

/// |dL/dz| = beta (1 - sigma(beta z)). Large beta blows this up for z < 0.
pub fn dpo_grad_scale(z: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::config(format!("beta must be positive, got {beta}")));
    }
    Ok(beta * (1.0 - sigmoid(beta * z)))
}

/// Preference-tuning configuration. The reference snapshot is taken by value
/// and never mutated.
#[derive(Debug, Clone)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub reference: VectorFieldParams,
}

pub const DEFAULT_DPO_BETA: f64 = 0.5;
pub const DEFAULT_DPO_LR: f64 = 1e-3;

impl DpoConfig {
    pub fn new(beta: f64, lr: f64, reference: VectorFieldParams) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::config(format!("beta must be positive, got {beta}")));
        }
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(DpoConfig { beta, lr, reference })
    }
}

#[derive(Debug, Clone)]
pub struct DpoDiagnostics {
    pub zs: Vec<f64>,
    pub loss: f64,
}

/// One Adam step on the mean preference loss over the batch.
///
/// The reference scores enter the graph as constants, so gradients flow
/// only through theta, and the reference stays untouched.
pub fn dpo_train_step(
    theta: &mut VectorFieldParams,
    cfg: &DpoConfig,
    batch: &[PreferencePair],
    adam: &mut AdamState,
) -> Result<DpoDiagnostics> {
    if batch.is_empty() {
        return Err(Error::contract("empty preference batch".to_string()));
    }
    let b = batch.len();
    let d = theta.data_dim();

    // Interleave (w, l) rows: 2B x d states at the shared (noise, t).
    let mut xt = Vec::with_capacity(2 * b * d);
    let mut targets = Vec::with_capacity(2 * b * d);
    let mut ts = Vec::with_capacity(2 * b);
    let mut ys = Vec::with_capacity(2 * b);
    let mut ref_offsets = Vec::with_capacity(b);
    for p in batch {
        for x in [&p.x_w, &p.x_l] {
            xt.extend_from_slice(interpolate(&p.shared_noise, x, p.shared_t)?.data());
            targets.extend_from_slice(x.sub(&p.shared_noise)?.data());
            ts.push(p.shared_t);
            ys.push(p.y);
        }
        let c_w = velocity_mse(&cfg.reference, p, &p.x_w)?;
        let c_l = velocity_mse(&cfg.reference, p, &p.x_l)?;
        ref_offsets.push(c_w - c_l);
    }
    let xt = Tensor::from_vec(vec![2 * b, d], xt)?;

    let mut z_values = Vec::new();
    let (loss, grads) = theta.grad_scalar(|tape, vars| {
        let out = theta.forward_on_tape(tape, vars, &xt, &ts, &ys)?;
        let tgt = tape.constant(2 * b, d, targets.clone());
        let diff = tape.sub(out, tgt)?;
        let scores = tape.row_sum_sq(diff); // 2B x 1: s(w_0), s(l_0), ...

        // z_i = s_theta(l_i) - s_theta(w_i) + [s_ref(w_i) - s_ref(l_i)]
        let mut selector = vec![0.0; b * 2 * b];
        for i in 0..b {
            selector[i * 2 * b + 2 * i] = -1.0;
            selector[i * 2 * b + 2 * i + 1] = 1.0;
        }
        let selector = tape.constant(b, 2 * b, selector);
        let z_theta = tape.matmul(selector, scores)?;
        let offsets = tape.constant(b, 1, ref_offsets.clone());
        let z = tape.add(z_theta, offsets)?;
        z_values = tape.value(z).to_vec();

        let scaled = tape.scale(z, cfg.beta);
        let per_pair = tape.neg_log_sigmoid_of(scaled);
        let total = tape.sum_all(per_pair);
        Ok(tape.scale(total, 1.0 / b as f64))
    })?;

    adam.step(theta, &grads)?;
    Ok(DpoDiagnostics { zs: z_values, loss })
}

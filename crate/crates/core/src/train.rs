//! Experiment drivers: flow-matching training on toy data, reflow
//! distillation, and preference tuning with synthesized preferences.
//!
//! Every driver derives all randomness from one seed through named RNG
//! streams (init, data, noise, timesteps, cond_drop, ...), so adding a
//! consumer never perturbs the others and runs reproduce bit-for-bit.

use crate::align::{
    dpo_train_step, generate_reflow_pairs, pairs_to_flow_samples, DpoConfig, PreferencePair,
    ReflowPair,
};
use crate::dataset::ToyDataset;
use crate::error::{Error, Result};
use crate::flow::{
    euler_sample, fm_loss_grad_at, sample_timesteps, FlowSample, GuidanceSpec, SamplerSpec,
    StepSchedule,
};
use crate::nnet::{AdamHyper, AdamState, NetConfig, VectorFieldParams};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Probability of replacing the true condition with the null embedding
/// during training, so the unconditional branch needed by guidance exists.
pub const COND_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct TrainFmConfig {
    pub dataset: ToyDataset,
    pub net: NetConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub sampler: SamplerSpec,
    pub cond_dropout: f64,
    pub seed: u64,
}

impl TrainFmConfig {
    pub fn new(dataset: ToyDataset, seed: u64) -> Self {
        TrainFmConfig {
            dataset,
            net: NetConfig { n_conds: dataset.n_conds(), ..NetConfig::default() },
            steps: 3000,
            batch_size: 128,
            adam: AdamHyper::default(),
            sampler: SamplerSpec::Uniform,
            cond_dropout: COND_DROPOUT,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::config("steps and batch_size must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::config("cond_dropout must lie in [0, 1]".to_string()));
        }
        self.sampler.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: VectorFieldParams,
    /// (step, loss) per training step.
    pub losses: Vec<(usize, f64)>,
}

/// Train the velocity network on a toy dataset with the flow-matching
/// objective.
pub fn train_fm(cfg: &TrainFmConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let root = CounterRng::new(cfg.seed);
    let mut init = root.stream("init");
    let mut data = root.stream("data");
    let mut noise = root.stream("noise");
    let mut times = root.stream("timesteps");
    let mut drop = root.stream("cond_drop");

    let mut params = VectorFieldParams::init(&cfg.net, &mut init)?;
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_fm_batch(cfg, &mut data, &mut noise, &mut drop)?;
        let ts = sample_timesteps(&cfg.sampler, batch.len(), &mut times)?;
        let (loss, grads) = fm_loss_grad_at(&params, &batch, &ts)?;
        adam.step(&mut params, &grads)?;
        losses.push((step, loss));
    }
    Ok(TrainOutput { params, losses })
}

fn draw_fm_batch(
    cfg: &TrainFmConfig,
    data: &mut CounterRng,
    noise: &mut CounterRng,
    drop: &mut CounterRng,
) -> Result<Vec<FlowSample>> {
    let d = cfg.net.data_dim;
    let mut out = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let (x1, label) = cfg.dataset.sample(data);
        let x0 = Tensor::from_vec(vec![d], (0..d).map(|_| noise.next_gaussian()).collect())?;
        let y = if cfg.net.n_conds == 0 || drop.next_f64() < cfg.cond_dropout {
            None
        } else {
            Some(label)
        };
        out.push(FlowSample::new(x0, x1, y)?);
    }
    Ok(out)
}

/// Draw `n` generated points from a model: fresh noise through the Euler
/// sampler. Conditions cycle through the labels unless the net is
/// unconditional.
pub fn generate_samples(
    params: &VectorFieldParams,
    n: usize,
    nfe: usize,
    guidance: Option<&GuidanceSpec>,
    rng: &mut CounterRng,
) -> Result<Vec<[f64; 2]>> {
    if params.data_dim() != 2 {
        return Err(Error::config("sample generation expects a 2-D model".to_string()));
    }
    let shift = guidance.map_or(1.0, |g| g.time_shift);
    let schedule = if shift > 1.0 {
        StepSchedule::uniform_shifted(nfe, shift)?
    } else {
        StepSchedule::uniform(nfe)?
    };
    let n_conds = params.n_conds();
    // Group per condition to batch the ODE solves.
    let ys: Vec<Option<usize>> = (0..n)
        .map(|i| if n_conds == 0 { None } else { Some(i % n_conds) })
        .collect();
    let noise: Vec<f64> = (0..n * 2).map(|_| rng.next_gaussian()).collect();
    let groups: Vec<Option<usize>> = if n_conds == 0 {
        vec![None]
    } else {
        (0..n_conds).map(Some).collect()
    };
    let mut results: Vec<Option<[f64; 2]>> = vec![None; n];
    for y in groups {
        let idxs: Vec<usize> = (0..n).filter(|&i| ys[i] == y).collect();
        if idxs.is_empty() {
            continue;
        }
        let mut x0 = Vec::with_capacity(idxs.len() * 2);
        for &i in &idxs {
            x0.extend_from_slice(&noise[i * 2..(i + 1) * 2]);
        }
        let x0 = Tensor::from_vec(vec![idxs.len(), 2], x0)?;
        let x1 = euler_sample(params, &x0, &schedule, guidance, y)?;
        for (k, &i) in idxs.iter().enumerate() {
            results[i] = Some([x1.data()[k * 2], x1.data()[k * 2 + 1]]);
        }
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}

#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub n_pairs: usize,
    pub teacher_nfe: usize,
    pub guidance: Option<GuidanceSpec>,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub sampler: SamplerSpec,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            n_pairs: 4096,
            teacher_nfe: 50,
            guidance: None,
            steps: 2000,
            batch_size: 128,
            adam: AdamHyper::default(),
            sampler: SamplerSpec::u_shaped(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistillOutput {
    pub student: VectorFieldParams,
    pub pairs: Vec<ReflowPair>,
    pub losses: Vec<(usize, f64)>,
}

/// Self-distillation: sample (noise, output) pairs from the teacher, then
/// train a student (initialized from the teacher) to map each noise point
/// straight to its endpoint. Timesteps default to the U-shaped sampler.
pub fn distill(teacher: &VectorFieldParams, cfg: &DistillConfig) -> Result<DistillOutput> {
    if cfg.n_pairs == 0 || cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::config("n_pairs, steps, batch_size must be positive".to_string()));
    }
    cfg.sampler.validate()?;
    let root = CounterRng::new(cfg.seed);
    let mut pair_rng = root.stream("pairs");
    let mut pick = root.stream("data");
    let mut times = root.stream("timesteps");

    let n_conds = teacher.n_conds();
    let ys: Vec<Option<usize>> = (0..cfg.n_pairs)
        .map(|i| if n_conds == 0 { None } else { Some(i % n_conds) })
        .collect();
    let pairs = generate_reflow_pairs(
        teacher,
        teacher.data_dim(),
        cfg.teacher_nfe,
        cfg.guidance.as_ref(),
        &ys,
        &mut pair_rng,
    )?;
    let samples = pairs_to_flow_samples(&pairs)?;

    let mut student = teacher.clone();
    let mut adam = AdamState::new(&student, cfg.adam);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<FlowSample> = (0..cfg.batch_size)
            .map(|_| samples[pick.next_index(samples.len())].clone())
            .collect();
        let ts = sample_timesteps(&cfg.sampler, batch.len(), &mut times)?;
        let (loss, grads) = fm_loss_grad_at(&student, &batch, &ts)?;
        adam.step(&mut student, &grads)?;
        losses.push((step, loss));
    }
    Ok(DistillOutput { student, pairs, losses })
}

#[derive(Debug, Clone)]
pub struct DpoRunConfig {
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub n_pairs: usize,
    /// NFE for drawing the candidate samples from the base model.
    pub sample_nfe: usize,
    /// Mode whose samples are preferred.
    pub target_mode: usize,
    /// Samples within this distance of the target center count as
    /// preferred.
    pub radius: f64,
    pub seed: u64,
}

impl Default for DpoRunConfig {
    fn default() -> Self {
        DpoRunConfig {
            beta: crate::align::DEFAULT_DPO_BETA,
            lr: crate::align::DEFAULT_DPO_LR,
            steps: 60,
            batch_size: 32,
            n_pairs: 256,
            sample_nfe: 20,
            target_mode: 0,
            radius: 1.0,
            seed: 0,
        }
    }
}

/// Build preference pairs from the base model's own samples: draws within
/// `radius` of the target mode center are preferred, the rest are not.
/// Each pair gets fresh shared noise and a strictly interior shared t.
pub fn synthesize_preferences(
    base: &VectorFieldParams,
    dataset: ToyDataset,
    cfg: &DpoRunConfig,
    rng: &mut CounterRng,
) -> Result<Vec<PreferencePair>> {
    let centers = dataset.mode_centers();
    let center = centers
        .get(cfg.target_mode)
        .ok_or_else(|| Error::config(format!("target mode {} out of range", cfg.target_mode)))?;
    let mut gen_rng = rng.stream("gen");
    let mut pair_rng = rng.stream("pair");

    // Draw a pool and split by the radius rule.
    let pool = generate_samples(base, cfg.n_pairs * 4, cfg.sample_nfe, None, &mut gen_rng)?;
    let mut preferred = Vec::new();
    let mut other = Vec::new();
    for p in pool {
        let dist = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
        if dist <= cfg.radius {
            preferred.push(p);
        } else {
            other.push(p);
        }
    }
    let n = cfg.n_pairs.min(preferred.len()).min(other.len());
    if n == 0 {
        return Err(Error::contract(
            "preference synthesis found no usable (preferred, other) split; adjust the radius"
                .to_string(),
        ));
    }
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let noise = Tensor::vector(&[pair_rng.next_gaussian(), pair_rng.next_gaussian()]);
        // Map the uniform draw into the open interval.
        let t = 1e-3 + pair_rng.next_f64() * (1.0 - 2e-3);
        pairs.push(PreferencePair::new(
            None,
            Tensor::vector(&preferred[i]),
            Tensor::vector(&other[i]),
            noise,
            t,
        )?);
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct DpoRunOutput {
    pub params: VectorFieldParams,
    pub losses: Vec<(usize, f64)>,
    pub mean_z: Vec<(usize, f64)>,
}

/// Preference-tune a snapshot of `base` against itself as the frozen
/// reference.
pub fn run_dpo(
    base: &VectorFieldParams,
    dataset: ToyDataset,
    cfg: &DpoRunConfig,
) -> Result<DpoRunOutput> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::config("steps and batch_size must be positive".to_string()));
    }
    let root = CounterRng::new(cfg.seed);
    let mut synth = root.stream("prefs");
    let mut pick = root.stream("data");
    let pairs = synthesize_preferences(base, dataset, cfg, &mut synth)?;

    let mut theta = base.clone();
    let dpo_cfg = DpoConfig::new(cfg.beta, cfg.lr, base.clone())?;
    let mut adam = AdamState::new(&theta, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut mean_z = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<PreferencePair> = (0..cfg.batch_size)
            .map(|_| pairs[pick.next_index(pairs.len())].clone())
            .collect();
        let diag = dpo_train_step(&mut theta, &dpo_cfg, &batch, &mut adam)?;
        losses.push((step, diag.loss));
        mean_z.push((step, crate::tensor::pairwise_mean(&diag.zs)));
    }
    Ok(DpoRunOutput { params: theta, losses, mean_z })
}

/// Fraction of generated samples whose nearest mode is the target.
pub fn mode_fraction(
    params: &VectorFieldParams,
    dataset: ToyDataset,
    target_mode: usize,
    n: usize,
    nfe: usize,
    rng: &mut CounterRng,
) -> Result<f64> {
    let samples = generate_samples(params, n, nfe, None, rng)?;
    let hits = samples
        .iter()
        .filter(|p| dataset.nearest_mode(&p[..]) == target_mode)
        .count();
    Ok(hits as f64 / n as f64)
}

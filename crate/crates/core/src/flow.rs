//! Flow-matching core: interpolation path, velocity target, training loss,
//! timestep samplers, and the Euler ODE sampler with classifier-free
//! guidance.

use crate::error::{Error, Result};
use crate::nnet::{Tape, Var, VectorFieldParams};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Anything that predicts a velocity for a state at a time. Implementations
/// must be shape-preserving and accept both single points (`[d]`) and
/// batches (`[B, d]`).
pub trait VelocityField {
    fn velocity(&self, x: &Tensor, t: f64, y: Option<usize>) -> Result<Tensor>;
}

impl VelocityField for VectorFieldParams {
    fn velocity(&self, x: &Tensor, t: f64, y: Option<usize>) -> Result<Tensor> {
        match x.shape().len() {
            1 => self.forward(x, t, y),
            2 => {
                let b = x.shape()[0];
                self.forward_batch(x, &vec![t; b], &vec![y; b])
            }
            _ => Err(Error::shape(format!("velocity input rank {} unsupported", x.shape().len()))),
        }
    }
}

/// Field that ignores state and time: u(x, t) = v.
pub struct ConstantField(pub Tensor);

impl VelocityField for ConstantField {
    fn velocity(&self, x: &Tensor, _t: f64, _y: Option<usize>) -> Result<Tensor> {
        broadcast_rows(&self.0, x)
    }
}

/// u(x, t) = x; the ODE x' = x with x(0)=1 has the analytic solution e^t.
pub struct LinearField;

impl VelocityField for LinearField {
    fn velocity(&self, x: &Tensor, _t: f64, _y: Option<usize>) -> Result<Tensor> {
        Ok(x.clone())
    }
}

fn broadcast_rows(v: &Tensor, like: &Tensor) -> Result<Tensor> {
    match like.shape().len() {
        1 => {
            if v.shape() != like.shape() {
                return Err(Error::shape(format!(
                    "constant field of shape {:?} against state {:?}",
                    v.shape(),
                    like.shape()
                )));
            }
            Ok(v.clone())
        }
        2 => {
            let (b, d) = (like.shape()[0], like.shape()[1]);
            if v.shape() != [d] {
                return Err(Error::shape(format!(
                    "constant field of shape {:?} against state {:?}",
                    v.shape(),
                    like.shape()
                )));
            }
            let mut data = Vec::with_capacity(b * d);
            for _ in 0..b {
                data.extend_from_slice(v.data());
            }
            Tensor::from_vec(vec![b, d], data)
        }
        _ => Err(Error::shape("constant field supports rank 1 or 2 states".to_string())),
    }
}

/// Linear interpolation x_t = (1 - t) x0 + t x1.
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("interpolation time {t} outside [0, 1]")));
    }
    if !x0.same_shape(x1) {
        return Err(Error::shape(format!(
            "interpolate: shapes {:?} vs {:?}",
            x0.shape(),
            x1.shape()
        )));
    }
    if t == 0.0 {
        return Ok(x0.clone());
    }
    if t == 1.0 {
        return Ok(x1.clone());
    }
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Tensor::from_vec(x0.shape().to_vec(), data)
}

/// Ground-truth velocity of the linear path: x1 - x0, independent of t.
pub fn velocity_target(x0: &Tensor, x1: &Tensor) -> Result<Tensor> {
    x1.sub(x0)
}

/// Timestep distribution on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Uniform,
    /// Density proportional to cosh(a(2u - 1)): symmetric, heavy at both
    /// ends of the interval.
    UShapedCentered { a: f64 },
    /// Density proportional to exp(au) + exp(-au) taken literally on
    /// [0, 1], which is monotone increasing. Kept selectable.
    UShapedLiteral { a: f64 },
}

pub const DEFAULT_U_SHAPE_A: f64 = 5.0;

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec::Uniform
    }
}

impl SamplerSpec {
    pub fn u_shaped() -> Self {
        SamplerSpec::UShapedCentered { a: DEFAULT_U_SHAPE_A }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerSpec::Uniform => Ok(()),
            SamplerSpec::UShapedCentered { a } | SamplerSpec::UShapedLiteral { a } => {
                if !(*a > 0.0 && *a < 700.0) {
                    Err(Error::config(format!("sharpness a must be in (0, 700), got {a}")))
            } else {
                    Ok(())
                }
            }
        }
    }

    /// Normalized density at u.
    pub fn density(&self, u: f64) -> f64 {
        match *self {
            SamplerSpec::Uniform => 1.0,
            SamplerSpec::UShapedCentered { a } => a * (a * (2.0 * u - 1.0)).cosh() / a.sinh(),
            SamplerSpec::UShapedLiteral { a } => a * (a * u).cosh() / a.sinh(),
        }
    }

    /// Inverse CDF at quantile q in [0, 1).
    pub fn inverse_cdf(&self, q: f64) -> f64 {
        match *self {
            SamplerSpec::Uniform => q,
            SamplerSpec::UShapedCentered { a } => {
                (((2.0 * q - 1.0) * a.sinh()).asinh() / a + 1.0) / 2.0
            }
            SamplerSpec::UShapedLiteral { a } => (q * a.sinh()).asinh() / a,
        }
    }

    /// n i.i.d. draws by inverse-CDF sampling.
    pub fn sample(&self, n: usize, rng: &mut CounterRng) -> Vec<f64> {
        (0..n).map(|_| self.inverse_cdf(rng.next_f64())).collect()
    }
}

/// Draw timesteps for a batch.
pub fn sample_timesteps(spec: &SamplerSpec, n: usize, rng: &mut CounterRng) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::contract("need at least one timestep".to_string()));
    }
    spec.validate()?;
    Ok(spec.sample(n, rng))
}

/// Linearly diminishing CFG scale: max(cfg_max - 9 t (cfg_max - 1), 1).
/// Hits 1 exactly at t = 1/9 and stays clamped afterwards.
pub fn cfg_scale(t: f64, cfg_max: f64) -> f64 {
    (cfg_max - 9.0 * t * (cfg_max - 1.0)).max(1.0)
}

/// Classifier-free guidance configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GuidanceSpec {
    /// Guidance scale at t = 0; must be >= 1.
    pub cfg_max: f64,
    /// Sampling time shift s >= 1 (1 = no shift), applied when building the
    /// schedule via [`StepSchedule::uniform_shifted`].
    pub time_shift: f64,
    /// Condition used for the unconditional branch; `None` selects the
    /// network's reserved null embedding.
    pub null_cond: Option<usize>,
}

impl GuidanceSpec {
    pub fn new(cfg_max: f64, time_shift: f64) -> Result<Self> {
        let g = GuidanceSpec { cfg_max, time_shift, null_cond: None };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfg_max >= 1.0) {
            return Err(Error::config(format!("cfg_max must be >= 1, got {}", self.cfg_max)));
        }
        if !(self.time_shift >= 1.0) {
            return Err(Error::config(format!("time_shift must be >= 1, got {}", self.time_shift)));
        }
        Ok(())
    }
}

/// Strictly increasing timesteps from exactly 0 to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule(Vec<f64>);

impl StepSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::contract("schedule needs at least two timesteps".to_string()));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(Error::contract(format!(
                "schedule endpoints must be exactly 0 and 1, got {} and {}",
                times[0],
                times.last().unwrap()
            )));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::contract("schedule must be strictly increasing".to_string()));
        }
        Ok(StepSchedule(times))
    }

    /// n equal steps (n + 1 points).
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("schedule needs at least one step".to_string()));
        }
        Self::new((0..=n).map(|i| i as f64 / n as f64).collect())
    }

    /// Uniform grid warped by t' = s t / (1 + (s - 1) t). The map is
    /// monotone for s >= 1 and the endpoints are pinned to exactly 0 and 1.
    pub fn uniform_shifted(n: usize, s: f64) -> Result<Self> {
        if !(s >= 1.0) {
            return Err(Error::config(format!("time shift must be >= 1, got {s}")));
        }
        if n == 0 {
            return Err(Error::contract("schedule needs at least one step".to_string()));
        }
        let mut times = Vec::with_capacity(n + 1);
        times.push(0.0);
        for i in 1..n {
            let t = i as f64 / n as f64;
            times.push(s * t / (1.0 + (s - 1.0) * t));
        }
        times.push(1.0);
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn n_steps(&self) -> usize {
        self.0.len() - 1
    }
}

/// Explicit Euler integration of dx/dt = u(x, y, t) across the schedule,
/// with optional classifier-free guidance:
/// v = u_null + cfg(t) (u_cond - u_null).
pub fn euler_sample<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    schedule: &StepSchedule,
    guidance: Option<&GuidanceSpec>,
    y: Option<usize>,
) -> Result<Tensor> {
    if let Some(g) = guidance {
        g.validate()?;
    }
    let times = schedule.times();
    let mut x = x0.clone();
    for w in times.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let v = match guidance {
            None => field.velocity(&x, t, y)?,
            Some(g) => {
                let u_cond = field.velocity(&x, t, y)?;
                let u_null = field.velocity(&x, t, g.null_cond)?;
                let scale = cfg_scale(t, g.cfg_max);
                let delta = u_cond.sub(&u_null)?;
                u_null.add(&delta.scale(scale))?
            }
        };
        if !v.same_shape(&x) {
            return Err(Error::shape("velocity field changed the state shape".to_string()));
        }
        x = x.add_scaled(&v, dt)?;
    }
    Ok(x)
}

/// One training sample: endpoints of the path plus an optional condition.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub x0: Tensor,
    pub x1: Tensor,
    pub y: Option<usize>,
}

impl FlowSample {
    pub fn new(x0: Tensor, x1: Tensor, y: Option<usize>) -> Result<Self> {
        if !x0.same_shape(&x1) {
            return Err(Error::shape(format!(
                "sample endpoints {:?} vs {:?}",
                x0.shape(),
                x1.shape()
            )));
        }
        Ok(FlowSample { x0, x1, y })
    }
}

fn stack_batch(batch: &[FlowSample]) -> Result<(Tensor, Tensor, Vec<Option<usize>>, usize)> {
    let Some(first) = batch.first() else {
        return Err(Error::contract("empty batch".to_string()));
    };
    let d = first.x0.len();
    let b = batch.len();
    let mut x0 = Vec::with_capacity(b * d);
    let mut x1 = Vec::with_capacity(b * d);
    let mut ys = Vec::with_capacity(b);
    for s in batch {
        if s.x0.len() != d {
            return Err(Error::shape("ragged batch".to_string()));
        }
        x0.extend_from_slice(s.x0.data());
        x1.extend_from_slice(s.x1.data());
        ys.push(s.y);
    }
    Ok((
        Tensor::from_vec(vec![b, d], x0)?,
        Tensor::from_vec(vec![b, d], x1)?,
        ys,
        d,
    ))
}

/// Flow-matching loss at explicit timesteps:
/// mean over the batch of || u(x_t, y, t) - (x1 - x0) ||^2.
pub fn fm_loss_at<F: VelocityField + ?Sized>(
    field: &F,
    batch: &[FlowSample],
    ts: &[f64],
) -> Result<f64> {
    let (x0, x1, ys, _d) = stack_batch(batch)?;
    if ts.len() != batch.len() {
        return Err(Error::contract("one timestep per sample required".to_string()));
    }
    let b = batch.len();
    let target = velocity_target(&x0, &x1)?;
    let mut total = Vec::with_capacity(b);
    for i in 0..b {
        let xi = row(&x0, i)?;
        let x1i = row(&x1, i)?;
        let xt = interpolate(&xi, &x1i, ts[i])?;
        let u = field.velocity(&xt, ts[i], ys[i])?;
        let vi = row(&target, i)?;
        total.push(u.sub(&vi)?.sq_norm());
    }
    Ok(crate::tensor::pairwise_mean(&total))
}

fn row(m: &Tensor, i: usize) -> Result<Tensor> {
    let d = m.shape()[1];
    Tensor::from_vec(vec![d], m.data()[i * d..(i + 1) * d].to_vec())
}

/// Flow-matching loss with timesteps drawn from the sampler.
pub fn fm_loss<F: VelocityField + ?Sized>(
    field: &F,
    batch: &[FlowSample],
    sampler: &SamplerSpec,
    rng: &mut CounterRng,
) -> Result<f64> {
    let ts = sample_timesteps(sampler, batch.len().max(1), rng)?;
    fm_loss_at(field, batch, &ts)
}

/// Loss and parameter gradients for one batch at explicit timesteps.
pub fn fm_loss_grad_at(
    params: &VectorFieldParams,
    batch: &[FlowSample],
    ts: &[f64],
) -> Result<(f64, crate::nnet::Gradients)> {
    let (x0, x1, ys, d) = stack_batch(batch)?;
    if ts.len() != batch.len() {
        return Err(Error::contract("one timestep per sample required".to_string()));
    }
    let b = batch.len();
    let mut xt = Vec::with_capacity(b * d);
    for i in 0..b {
        for j in 0..d {
            let (a0, a1) = (x0.data()[i * d + j], x1.data()[i * d + j]);
            xt.push((1.0 - ts[i]) * a0 + ts[i] * a1);
        }
    }
    let xt = Tensor::from_vec(vec![b, d], xt)?;
    let target = velocity_target(&x0, &x1)?;

    params.grad_scalar(|tape: &mut Tape, vars| -> Result<Var> {
        let out = params.forward_on_tape(tape, vars, &xt, ts, &ys)?;
        let tgt = tape.constant(b, d, target.data().to_vec());
        let diff = tape.sub(out, tgt)?;
        let ss = tape.sum_sq(diff);
        Ok(tape.scale(ss, 1.0 / b as f64))
    })
}

/// Loss and gradients with sampler-drawn timesteps.
pub fn fm_loss_grad(
    params: &VectorFieldParams,
    batch: &[FlowSample],
    sampler: &SamplerSpec,
    rng: &mut CounterRng,
) -> Result<(f64, crate::nnet::Gradients)> {
    let ts = sample_timesteps(sampler, batch.len().max(1), rng)?;
    fm_loss_grad_at(params, batch, &ts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> Tensor {
        Tensor::vector(values)
    }

    #[test]
    fn interpolate_endpoints_exact() {
        let x0 = v(&[0.1, -0.2]);
        let x1 = v(&[2.0, 3.0]);
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(interpolate(&v(&[0.0]), &v(&[2.0]), 0.25).unwrap().data(), &[0.5]);
    }

    #[test]
    fn interpolate_rejects_out_of_range_t() {
        let x = v(&[1.0]);
        assert!(interpolate(&x, &x, -0.1).is_err());
        assert!(interpolate(&x, &x, 1.1).is_err());
    }

    #[test]
    fn velocity_target_basics() {
        assert_eq!(velocity_target(&v(&[1.0, 2.0]), &v(&[3.0, 5.0])).unwrap().data(), &[2.0, 3.0]);
        let x = v(&[0.3, 0.4]);
        assert_eq!(velocity_target(&x, &x).unwrap().data(), &[0.0, 0.0]);
        let a = v(&[1.0, 2.0]);
        let b = v(&[-1.0, 7.0]);
        let fwd = velocity_target(&a, &b).unwrap();
        let bwd = velocity_target(&b, &a).unwrap();
        assert_eq!(fwd.scale(-1.0), bwd);
    }

    #[test]
    fn cfg_scale_formula() {
        for cfg_max in [1.5, 5.0, 7.5, 10.0] {
            assert_eq!(cfg_scale(0.0, cfg_max), cfg_max);
            assert_eq!(cfg_scale(1.0 / 9.0, cfg_max), 1.0);
            assert_eq!(cfg_scale(1.0, cfg_max), 1.0);
        }
        assert_eq!(cfg_scale(1.0 / 18.0, 7.5), 7.5 - 0.5 * 6.5);
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSchedule::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(StepSchedule::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(StepSchedule::new(vec![0.1, 1.0]).is_err());
        assert!(StepSchedule::new(vec![0.0, 0.9]).is_err());
        assert!(StepSchedule::uniform(0).is_err());
    }

    #[test]
    fn shifted_schedule_is_valid_for_any_shift() {
        for s in [1.0, 1.5, 3.0, 8.0, 100.0] {
            let sched = StepSchedule::uniform_shifted(16, s).unwrap();
            assert_eq!(sched.times()[0], 0.0);
            assert_eq!(*sched.times().last().unwrap(), 1.0);
        }
        assert!(StepSchedule::uniform_shifted(16, 0.5).is_err());
    }

    #[test]
    fn constant_field_telescopes() {
        let v0 = v(&[0.5, -1.5]);
        let field = ConstantField(v0.clone());
        let x0 = v(&[1.0, 2.0]);
        for sched in [
            StepSchedule::uniform(1).unwrap(),
            StepSchedule::uniform(7).unwrap(),
            StepSchedule::uniform_shifted(13, 3.0).unwrap(),
        ] {
            let got = euler_sample(&field, &x0, &sched, None, None).unwrap();
            // Telescoping sum: x0 + v0 * sum(dt) where the dts are exact
            // differences of the schedule; equality is up to fp addition
            // order, which for the uniform schedule telescopes exactly.
            let want = x0.add(&v0).unwrap();
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn linear_field_approaches_e() {
        let sched = StepSchedule::uniform(1000).unwrap();
        let got = euler_sample(&LinearField, &v(&[1.0]), &sched, None, None).unwrap();
        let err = (got.data()[0] - std::f64::consts::E).abs();
        assert!(err <= 3e-3, "error {err}");
    }

    #[test]
    fn guidance_with_equal_branches_is_bitwise_unguided() {
        // A conditional network whose condition embedding is all zeros
        // produces identical cond/null branches.
        use crate::nnet::{NetConfig, VectorFieldParams};
        let cfg = NetConfig { data_dim: 2, hidden: vec![8], n_conds: 2, ..NetConfig::default() };
        let mut params = VectorFieldParams::init(&cfg, &mut CounterRng::new(3)).unwrap();
        let mut flat = params.flat();
        // Zero the condition table (trailing block).
        let table_len = params.cond().unwrap().table.len();
        let n = flat.len();
        for vslot in &mut flat[n - table_len..] {
            *vslot = 0.0;
        }
        params.set_flat(&flat).unwrap();

        let sched = StepSchedule::uniform(5).unwrap();
        let x0 = v(&[0.2, -0.4]);
        let guided = euler_sample(
            &params,
            &x0,
            &sched,
            Some(&GuidanceSpec::new(7.5, 1.0).unwrap()),
            Some(1),
        )
        .unwrap();
        let unguided = euler_sample(&params, &x0, &sched, None, Some(1)).unwrap();
        assert_eq!(guided, unguided);
    }

    #[test]
    fn fm_loss_zero_for_oracle_and_offset_for_biased() {
        // All pairs share the same true velocity.
        let vel = v(&[2.0, 3.0]);
        let batch: Vec<FlowSample> = (0..4)
            .map(|i| {
                let x0 = v(&[i as f64, -(i as f64)]);
                let x1 = x0.add(&vel).unwrap();
                FlowSample::new(x0, x1, None).unwrap()
            })
            .collect();
        let mut rng = CounterRng::new(0);
        let oracle = ConstantField(vel.clone());
        let loss = fm_loss(&oracle, &batch, &SamplerSpec::Uniform, &mut rng).unwrap();
        assert_eq!(loss, 0.0);

        let c = v(&[0.3, -0.4]);
        let biased = ConstantField(vel.add(&c).unwrap());
        let mut rng = CounterRng::new(0);
        let loss = fm_loss(&biased, &batch, &SamplerSpec::Uniform, &mut rng).unwrap();
        assert!((loss - c.sq_norm()).abs() < 1e-12);
    }

    #[test]
    fn fm_loss_two_samples_hand_evaluated() {
        // Constant model u = [1, 0]; hand-picked ts.
        let batch = vec![
            FlowSample::new(v(&[0.0, 0.0]), v(&[2.0, 2.0]), None).unwrap(),
            FlowSample::new(v(&[1.0, 1.0]), v(&[1.0, 0.0]), None).unwrap(),
        ];
        let field = ConstantField(v(&[1.0, 0.0]));
        // v1 = (2,2): ||(1,0)-(2,2)||^2 = 1 + 4 = 5
        // v2 = (0,-1): ||(1,0)-(0,-1)||^2 = 1 + 1 = 2
        let loss = fm_loss_at(&field, &batch, &[0.25, 0.75]).unwrap();
        assert!((loss - 3.5).abs() < 1e-12);
    }

    #[test]
    fn fm_loss_rejects_empty_batch() {
        let field = ConstantField(v(&[0.0]));
        let mut rng = CounterRng::new(0);
        assert!(fm_loss(&field, &[], &SamplerSpec::Uniform, &mut rng).is_err());
    }

    #[test]
    fn sampler_medians_and_masses() {
        let spec = SamplerSpec::UShapedCentered { a: 5.0 };
        assert!((spec.inverse_cdf(0.5) - 0.5).abs() < 1e-12);

        let mut rng = CounterRng::new(11);
        let draws = sample_timesteps(&spec, 100_000, &mut rng).unwrap();
        let ends = draws.iter().filter(|&&t| t <= 0.1 || t >= 0.9).count();
        let middle = draws.iter().filter(|&&t| (0.45..=0.55).contains(&t)).count();
        assert!(ends > middle, "ends {ends} middle {middle}");
    }

    #[test]
    fn densities_normalize_by_quadrature() {
        // Composite Simpson on a fine grid.
        for spec in [
            SamplerSpec::Uniform,
            SamplerSpec::UShapedCentered { a: 5.0 },
            SamplerSpec::UShapedCentered { a: 0.5 },
            SamplerSpec::UShapedLiteral { a: 5.0 },
        ] {
            let n = 20_000usize;
            let h = 1.0 / n as f64;
            let mut total = spec.density(0.0) + spec.density(1.0);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                total += w * spec.density(i as f64 * h);
            }
            total *= h / 3.0;
            assert!((total - 1.0).abs() < 1e-9, "{spec:?}: integral {total}");
        }
    }

    #[test]
    fn uniform_draws_pass_ks_test() {
        // Kolmogorov-Smirnov against U[0,1]; 1% critical value for n=10^4
        // is 1.63 / sqrt(n).
        let mut rng = CounterRng::new(99);
        let n = 10_000usize;
        let mut draws = sample_timesteps(&SamplerSpec::Uniform, n, &mut rng).unwrap();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks = 0.0_f64;
        for (i, t) in draws.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((t - lo).abs()).max((t - hi).abs());
        }
        let critical = 1.63 / (n as f64).sqrt();
        assert!(ks < critical, "KS statistic {ks} above {critical}");
    }

    #[test]
    fn grad_matches_plain_loss() {
        use crate::nnet::{NetConfig, VectorFieldParams};
        let cfg = NetConfig { data_dim: 2, hidden: vec![8, 8], n_conds: 2, ..NetConfig::default() };
        let params = VectorFieldParams::init(&cfg, &mut CounterRng::new(21)).unwrap();
        let batch = vec![
            FlowSample::new(v(&[0.5, -0.5]), v(&[1.0, 1.0]), Some(0)).unwrap(),
            FlowSample::new(v(&[-1.0, 0.25]), v(&[0.0, 2.0]), None).unwrap(),
        ];
        let ts = [0.3, 0.8];
        let plain = fm_loss_at(&params, &batch, &ts).unwrap();
        let (taped, _grads) = fm_loss_grad_at(&params, &batch, &ts).unwrap();
        assert!((plain - taped).abs() < 1e-12);
    }
}

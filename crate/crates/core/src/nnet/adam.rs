//! Bias-corrected Adam.

use crate::error::Result;
use crate::nnet::{Gradients, VectorFieldParams};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates congruent to the parameters, plus the step
/// counter. The counter advances by exactly one per `step` call.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(params: &VectorFieldParams, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update in place. Moments decay even where the gradient is
    /// zero, matching the standard formulation.
    pub fn step(&mut self, params: &mut VectorFieldParams, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        // Walk (param, grad, m, v) tensors in lockstep via flat views.
        let mut m_flat = self.m.flat();
        let mut v_flat = self.v.flat();
        let g_flat = grads.flat();
        let mut p_flat = params.flat();
        if g_flat.len() != p_flat.len() {
            return Err(crate::error::Error::shape(format!(
                "gradient has {} values, params have {}",
                g_flat.len(),
                p_flat.len()
            )));
        }
        for i in 0..p_flat.len() {
            let g = g_flat[i];
            m_flat[i] = beta1 * m_flat[i] + (1.0 - beta1) * g;
            v_flat[i] = beta2 * v_flat[i] + (1.0 - beta2) * g * g;
            let m_hat = m_flat[i] / bc1;
            let v_hat = v_flat[i] / bc2;
            p_flat[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        params.set_flat(&p_flat)?;
        set_from_flat(&mut self.m, &m_flat);
        set_from_flat(&mut self.v, &v_flat);
        Ok(())
    }
}

fn set_from_flat(g: &mut Gradients, flat: &[f64]) {
    let mut off = 0;
    for (w, b) in &mut g.layers {
        for t in [w, b] {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
    if let Some(c) = &mut g.cond_table {
        let n = c.len();
        c.data_mut().copy_from_slice(&flat[off..off + n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::NetConfig;
    use crate::rng::CounterRng;

    fn tiny_params() -> VectorFieldParams {
        let cfg = NetConfig { data_dim: 1, hidden: vec![2], time_dim: 2, n_conds: 0, ..NetConfig::default() };
        VectorFieldParams::init(&cfg, &mut CounterRng::new(5)).unwrap()
    }

    fn const_grads(params: &VectorFieldParams, value: f64) -> Gradients {
        let mut g = Gradients::zeros_like(params);
        for (w, b) in &mut g.layers {
            w.data_mut().fill(value);
            b.data_mut().fill(value);
        }
        if let Some(c) = &mut g.cond_table {
            c.data_mut().fill(value);
        }
        g
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = tiny_params();
        let before = params.flat();
        let zeros = const_grads(&params, 0.0);
        let mut state = AdamState::new(&params, AdamHyper::default());
        state.step(&mut params, &zeros).unwrap();
        assert_eq!(params.flat(), before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut params = tiny_params();
        let before = params.flat();
        let ones = const_grads(&params, 1.0);
        let hyper = AdamHyper { lr: 0.1, eps: 1e-12, ..AdamHyper::default() };
        let mut state = AdamState::new(&params, hyper);
        state.step(&mut params, &ones).unwrap();
        for (b, a) in before.iter().zip(params.flat()) {
            assert!((b - a - 0.1).abs() < 1e-9, "step was {}", b - a);
        }
    }

    #[test]
    fn two_steps_match_hand_executed_updates() {
        // Every scalar sees gradients (1, -1); hand-execute the update
        // equations once and require the same displacement everywhere.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut displacement = 0.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for (t, g) in [(1, 1.0_f64), (2, -1.0)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            displacement += lr * mh / (vh.sqrt() + eps);
        }

        let mut params = tiny_params();
        let before = params.flat();
        let ones = const_grads(&params, 1.0);
        let neg_ones = const_grads(&params, -1.0);
        let hyper = AdamHyper { lr, beta1: b1, beta2: b2, eps };
        let mut state = AdamState::new(&params, hyper);
        state.step(&mut params, &ones).unwrap();
        state.step(&mut params, &neg_ones).unwrap();
        assert_eq!(state.step_count(), 2);
        for (b, a) in before.iter().zip(params.flat()) {
            assert!((b - a - displacement).abs() < 1e-15, "moved {}, want {displacement}", b - a);
        }
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut params = tiny_params();
        let ones = const_grads(&params, 1.0);
        let zeros = const_grads(&params, 0.0);
        let mut state = AdamState::new(&params, AdamHyper::default());
        state.step(&mut params, &ones).unwrap();
        let m_after_one = state.m.flat()[0];
        state.step(&mut params, &zeros).unwrap();
        assert!((state.m.flat()[0] - 0.9 * m_after_one).abs() < 1e-15);
    }
}

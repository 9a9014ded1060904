//! Parameter updates and learning-rate schedules.
//!
//! State-in/state-out functions over flat parameter slices; callers own all
//! optimizer state, one `AdamState` per parameter tensor.

use crate::error::{Error, Result};

/// Adam moment accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(param_len: usize) -> Self {
        AdamState {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step; increments the step counter.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            dim: "parameter length",
            expected: params.len().to_string(),
            actual: format!("grads {}, state {}", grads.len(), state.m.len()),
        });
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidConfig {
            field: "lr",
            reason: format!("must be positive, got {lr}"),
        });
    }
    state.t += 1;
    let b1 = state.beta1 as f32;
    let b2 = state.beta2 as f32;
    let m_corr = (1.0 - state.beta1.powi(state.t as i32)) as f32;
    let v_corr = (1.0 - state.beta2.powi(state.t as i32)) as f32;
    let lr = lr as f32;
    let eps = state.eps as f32;
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / m_corr;
        let v_hat = v / v_corr;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Plain gradient descent: params <- params - lr * grads.
pub fn sgd_step(params: &mut [f32], grads: &[f32], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            dim: "parameter length",
            expected: params.len().to_string(),
            actual: grads.len().to_string(),
        });
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidConfig {
            field: "lr",
            reason: format!("must be positive, got {lr}"),
        });
    }
    let lr = lr as f32;
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    StepDecay,
    CyclicalExp,
}

/// Learning-rate schedule parameters; which fields apply depends on `kind`.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub ramp_steps: usize,
}

impl ScheduleSpec {
    /// Step decay starting at 0.01, halved every 30 epochs.
    pub fn shifter_default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::StepDecay,
            base_lr: 0.01,
            decay_factor: 0.5,
            decay_every: 30,
            lr_min: 0.0,
            lr_max: 0.0,
            ramp_steps: 1,
        }
    }

    /// Sawtooth exponential ramp, 1e-5 to 1e-3 over 20 steps, repeating.
    pub fn classifier_default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::CyclicalExp,
            base_lr: 0.0,
            decay_factor: 1.0,
            decay_every: 1,
            lr_min: 1e-5,
            lr_max: 1e-3,
            ramp_steps: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidConfig { field, reason });
        match self.kind {
            ScheduleKind::StepDecay => {
                if !(self.base_lr > 0.0) {
                    return bad("schedule.base_lr", format!("must be positive, got {}", self.base_lr));
                }
                if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
                    return bad(
                        "schedule.decay_factor",
                        format!("must be in (0, 1], got {}", self.decay_factor),
                    );
                }
                if self.decay_every == 0 {
                    return bad("schedule.decay_every", "must be >= 1".into());
                }
            }
            ScheduleKind::CyclicalExp => {
                if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min) {
                    return bad(
                        "schedule.lr_min/lr_max",
                        format!("need 0 < lr_min <= lr_max, got {} / {}", self.lr_min, self.lr_max),
                    );
                }
                if self.ramp_steps == 0 {
                    return bad("schedule.ramp_steps", "must be >= 1".into());
                }
            }
        }
        Ok(())
    }
}

/// base_lr * decay_factor^floor(epoch / decay_every).
pub fn step_decay_lr(spec: &ScheduleSpec, epoch: usize) -> f64 {
    spec.base_lr * spec.decay_factor.powi((epoch / spec.decay_every) as i32)
}

/// Sawtooth cycle: within each cycle of `ramp_steps`, the rate rises
/// geometrically from lr_min toward lr_max, then restarts at lr_min.
pub fn cyclical_exp_lr(spec: &ScheduleSpec, iteration: usize) -> f64 {
    let i = iteration % spec.ramp_steps;
    spec.lr_min * (spec.lr_max / spec.lr_min).powf(i as f64 / spec.ramp_steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0, 0.0, 0.0], &mut state, 0.01).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With m-hat = g and v-hat = g*g, the first update is lr * sign(g).
        let mut params = vec![1.0, 1.0];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[0.3, -2.0], &mut state, 0.1).unwrap();
        assert!((params[0] - 0.9).abs() < 1e-6, "{}", params[0]);
        assert!((params[1] - 1.1).abs() < 1e-6, "{}", params[1]);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // f(w) = w^2 from w = 1 with lr 0.1: |w| strictly decreases for 10 steps.
        let mut w = vec![1.0f32];
        let mut state = AdamState::new(1);
        let mut prev = w[0].abs();
        for _ in 0..10 {
            let g = vec![2.0 * w[0]];
            adam_step(&mut w, &g, &mut state, 0.1).unwrap();
            assert!(w[0].abs() < prev, "|w| went {} -> {}", prev, w[0].abs());
            prev = w[0].abs();
        }
    }

    #[test]
    fn adam_step_is_bounded_by_lr() {
        // Constant gradient: |update| <= lr * (1 + tolerance).
        let mut w = vec![0.0f32; 4];
        let mut state = AdamState::new(4);
        for step in 0..20 {
            let before = w.clone();
            adam_step(&mut w, &[3.0, -0.5, 10.0, 0.001], &mut state, 0.05).unwrap();
            for (i, (&after, &bef)) in w.iter().zip(&before).enumerate() {
                let delta = (after - bef).abs();
                assert!(
                    delta <= 0.05 * 1.01,
                    "step {step} component {i}: delta {delta}"
                );
            }
        }
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let mut w = vec![1.0f32];
        sgd_step(&mut w, &[2.0], 0.1).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn sgd_zero_grad_unchanged() {
        let mut w = vec![0.25f32, -4.0];
        sgd_step(&mut w, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(w, vec![0.25, -4.0]);
    }

    #[test]
    fn sgd_descends_quadratic_monotonically() {
        // f(w) = w^2, lr below 1/curvature: loss strictly decreases.
        let mut w = 1.0f32;
        let mut loss = w * w;
        for _ in 0..50 {
            let mut p = vec![w];
            sgd_step(&mut p, &[2.0 * w], 0.2).unwrap();
            w = p[0];
            let next = w * w;
            assert!(next < loss);
            loss = next;
        }
    }

    #[test]
    fn step_decay_tabulated_values() {
        let spec = ScheduleSpec::shifter_default();
        assert_eq!(step_decay_lr(&spec, 0), 0.01);
        assert_eq!(step_decay_lr(&spec, 29), 0.01);
        assert_eq!(step_decay_lr(&spec, 30), 0.005);
        assert_eq!(step_decay_lr(&spec, 65), 0.0025);
    }

    #[test]
    fn step_decay_non_increasing() {
        let spec = ScheduleSpec::shifter_default();
        let mut prev = f64::INFINITY;
        for epoch in 0..200 {
            let lr = step_decay_lr(&spec, epoch);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn cyclical_tabulated_values() {
        let spec = ScheduleSpec::classifier_default();
        assert_eq!(cyclical_exp_lr(&spec, 0), 1e-5);
        let mid = cyclical_exp_lr(&spec, 10);
        assert!((mid - 1e-4).abs() / 1e-4 < 1e-12, "midpoint {mid}");
        assert_eq!(cyclical_exp_lr(&spec, 20), 1e-5);
    }

    #[test]
    fn cyclical_is_periodic_and_bounded() {
        let spec = ScheduleSpec::classifier_default();
        for i in 0..100 {
            let lr = cyclical_exp_lr(&spec, i);
            assert_eq!(lr, cyclical_exp_lr(&spec, i + spec.ramp_steps));
            assert!(lr >= spec.lr_min && lr < spec.lr_max);
        }
    }
}

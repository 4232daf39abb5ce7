use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::NnError;
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_lr: f64,
    pub total_steps: u64,
}

impl AdamConfig {
    pub fn new(max_lr: f64, total_steps: u64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_lr,
            total_steps,
        }
    }
}

/// Cosine-decayed learning rate: `max_lr` at step 0, zero at `total`.
pub fn cosine_lr(max_lr: f64, step: u64, total: u64) -> f64 {
    let t = (step.min(total)) as f64 / total as f64;
    0.5 * max_lr * (1.0 + (PI * t).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(NnError::BadConfig(format!(
                "betas must lie in [0, 1), got ({}, {})",
                config.beta1, config.beta2
            )));
        }
        if !(config.max_lr > 0.0) || config.total_steps == 0 {
            return Err(NnError::BadConfig("max_lr and total_steps must be positive".into()));
        }
        let first_moment: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        let second_moment = first_moment.clone();
        Ok(Self {
            config,
            step_count: 0,
            first_moment,
            second_moment,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Rate the next call to [`adam_step`] will use.
    pub fn learning_rate(&self) -> f64 {
        cosine_lr(self.config.max_lr, self.step_count, self.config.total_steps)
    }
}

/// One bias-corrected Adam update.
///
/// A `None` gradient leaves that parameter and its moments untouched.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Option<&Tensor>], state: &mut AdamState) -> Result<(), NnError> {
    if params.len() != state.first_moment.len() || grads.len() != params.len() {
        return Err(NnError::ShapeMismatch {
            what: "parameter count".into(),
            expected: vec![state.first_moment.len()],
            got: vec![params.len(), grads.len()],
        });
    }
    if state.step_count >= state.config.total_steps {
        return Err(NnError::StepBudgetExhausted {
            total: state.config.total_steps,
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
                return Err(NnError::ShapeMismatch {
                    what: format!("gradient {i}"),
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
    }
    let AdamConfig {
        beta1, beta2, epsilon, ..
    } = state.config;
    let lr = state.learning_rate();
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 100), 1e-3);
        assert_relative_eq!(cosine_lr(1e-3, 50, 100), 0.5e-3, epsilon = 1e-18);
        assert!(cosine_lr(1e-3, 100, 100).abs() < 1e-18);
    }

    #[test]
    fn schedule_nonincreasing() {
        let lrs: Vec<f64> = (0..=200).map(|s| cosine_lr(2e-3, s, 200)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p], AdamConfig::new(1e-3, 100)).unwrap();
        adam_step(&mut [&mut p], &[Some(&g)], &mut st).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        assert_relative_eq!(p.item(), -1e-3 / (1.0 + 1e-8), epsilon = 1e-18);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let before = p.clone();
        let z = Tensor::zeros_like(&p);
        let mut st = AdamState::new([&p], AdamConfig::new(1e-2, 10)).unwrap();
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[Some(&z)], &mut st).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn missing_gradient_skips_moments() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p], AdamConfig::new(1e-2, 10)).unwrap();
        adam_step(&mut [&mut p], &[None], &mut st).unwrap();
        assert_eq!(p.item(), 1.0);
        assert_eq!(st.moments().0[0].item(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p], AdamConfig::new(1e-2, 10)).unwrap();
        assert!(matches!(
            adam_step(&mut [&mut p], &[Some(&g)], &mut st),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn budget_exhaustion_rejected() {
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p], AdamConfig::new(1e-2, 1)).unwrap();
        adam_step(&mut [&mut p], &[Some(&g)], &mut st).unwrap();
        assert!(matches!(
            adam_step(&mut [&mut p], &[Some(&g)], &mut st),
            Err(NnError::StepBudgetExhausted { total: 1 })
        ));
    }
}

//! Adam optimizer and the linear warmup/decay learning-rate schedule.

use crate::error::{KgatError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam with bias correction. First and second moments are kept per
/// parameter slot and survive checkpointing, so resumed training continues
/// the same trajectory.
#[derive(Debug, Clone)]
pub struct Adam {
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Fresh optimizer state (zero moments) shaped after `params`.
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &crate::params::Parameter| Tensor::zeros(p.value.rows(), p.value.cols());
        Adam {
            t: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    /// Rebuild optimizer state from checkpointed moments.
    pub fn from_state(t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Adam { t, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Apply one update using the gradients currently accumulated in
    /// `params`. Fails on any non-finite gradient, naming the parameter.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        assert_eq!(self.m.len(), params.len(), "optimizer/parameter mismatch");
        for p in params.iter() {
            if !p.grad.all_finite() {
                return Err(KgatError::Numeric(format!(
                    "non-finite gradient for parameter {}",
                    p.name
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let value = p.value.data_mut();
            for (((m, v), value), &g) in
                m.iter_mut().zip(v.iter_mut()).zip(value).zip(p.grad.data())
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `peak` over `ceil(warmup_frac * total)` optimizer
/// steps, then linear decay to zero at `total` steps.
///
/// The curve is continuous and piecewise linear: step 0 maps to 0 (when
/// warmup is non-empty), the end of warmup maps to exactly `peak`, and
/// step `total` maps to 0.
pub fn linear_warmup_decay(step: u64, total_steps: u64, peak: f64, warmup_frac: f64) -> f64 {
    assert!(
        (0.0..=1.0).contains(&warmup_frac),
        "warmup fraction out of range"
    );
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    // Always leave at least one decay step so the schedule ends at zero.
    let warmup = ((warmup_frac * total_steps as f64).ceil() as u64).min(total_steps - 1);
    if warmup > 0 && step <= warmup {
        peak * step as f64 / warmup as f64
    } else {
        peak * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let mut params = ParamSet::new();
        params.add("x", Tensor::from_vec(1, 1, vec![1.0]));
        params.get_mut(0).grad.data_mut()[0] = 1.0;
        let mut adam = Adam::new(&params);
        adam.step(&mut params, 0.1).unwrap();
        // Bias correction makes the very first update lr * g / (|g| + eps).
        let delta = 1.0 - params.get(0).value.at(0, 0);
        assert!((delta - 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut params = ParamSet::new();
        params.add("x", Tensor::from_vec(1, 2, vec![3.0, -4.0]));
        let mut adam = Adam::new(&params);
        adam.step(&mut params, 0.5).unwrap();
        assert_eq!(params.get(0).value.data(), &[3.0, -4.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_by_name() {
        let mut params = ParamSet::new();
        params.add("theta", Tensor::from_vec(1, 1, vec![0.0]));
        params.get_mut(0).grad.data_mut()[0] = f64::NAN;
        let mut adam = Adam::new(&params);
        let err = adam.step(&mut params, 0.1).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let mut params = ParamSet::new();
        params.add("x", Tensor::from_vec(1, 1, vec![1.0]));
        let mut adam = Adam::new(&params);
        for _ in 0..3 {
            params.get_mut(0).grad.data_mut()[0] = 0.7;
            adam.step(&mut params, 0.05).unwrap();
            params.zero_grads();
        }
        let mut resumed = Adam::from_state(
            adam.step_count(),
            adam.first_moments().to_vec(),
            adam.second_moments().to_vec(),
        );
        let mut params2 = params.clone();
        params.get_mut(0).grad.data_mut()[0] = 0.7;
        params2.get_mut(0).grad.data_mut()[0] = 0.7;
        adam.step(&mut params, 0.05).unwrap();
        resumed.step(&mut params2, 0.05).unwrap();
        assert_eq!(params.get(0).value.data(), params2.get(0).value.data());
    }

    #[test]
    fn schedule_hits_the_documented_knots() {
        let peak = 5e-5;
        let total = 100;
        assert_eq!(linear_warmup_decay(0, total, peak, 0.1), 0.0);
        assert_eq!(linear_warmup_decay(10, total, peak, 0.1), peak);
        assert_eq!(linear_warmup_decay(100, total, peak, 0.1), 0.0);
        // Non-divisible warmup rounds up.
        assert_eq!(linear_warmup_decay(1, 7, peak, 0.1), peak);
    }

    proptest! {
        #[test]
        fn schedule_is_bounded_and_continuous(
            total in 1u64..500,
            frac in 0.01f64..0.9,
        ) {
            let peak = 1.0;
            let mut prev = linear_warmup_decay(0, total, peak, frac);
            let max_jump = 1.0 / ((frac * total as f64).ceil()).max(1.0)
                + 1.0 / (total as f64 - (frac * total as f64).ceil()).max(1.0);
            for s in 1..=total {
                let lr = linear_warmup_decay(s, total, peak, frac);
                prop_assert!((0.0..=peak + 1e-12).contains(&lr));
                prop_assert!((lr - prev).abs() <= max_jump + 1e-9);
                prev = lr;
            }
            prop_assert_eq!(linear_warmup_decay(total, total, peak, frac), 0.0);
        }
    }
}

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(len: usize) -> Self {
        Self::with_constants(len, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_constants(len: usize, beta1: T, beta2: T, eps: T) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One Adam update of `theta` in place.
pub fn adam_step<T: Real>(
    theta: &mut [T],
    grad: &[T],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if grad.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::ShapeMismatch {
            what: "Adam parameters",
            expected: theta.len(),
            got: grad.len().min(state.m.len()),
        });
    }
    state.step += 1;
    let one = T::one();
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = one - state.beta1.powi(t);
    let c2 = one - state.beta2.powi(t);
    for (((p, &g), m), v) in theta
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = state.beta1 * *m + (one - state.beta1) * g;
        *v = state.beta2 * *v + (one - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Step decay `lr0 * decay^floor(epoch / period)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule<T> {
    pub lr0: T,
    pub decay: T,
    pub period: usize,
}

impl<T: Real> Default for LrSchedule<T> {
    fn default() -> Self {
        Self {
            lr0: T::lit(0.001),
            decay: T::lit(0.617),
            period: 50,
        }
    }
}

impl<T: Real> LrSchedule<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > T::zero()) {
            return Err(Error::invalid("lr0", "must be > 0"));
        }
        if !(self.decay > T::zero() && self.decay <= T::one()) {
            return Err(Error::invalid("decay", "must lie in (0, 1]"));
        }
        if self.period == 0 {
            return Err(Error::invalid("period", "must be at least 1"));
        }
        Ok(())
    }
}

pub fn lr_at<T: Real>(schedule: &LrSchedule<T>, epoch: usize) -> T {
    let k = (epoch / schedule.period.max(1)).min(i32::MAX as usize) as i32;
    schedule.lr0 * schedule.decay.powi(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook Adam on a single coordinate, written out independently.
    fn reference_adam(grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut theta) = (0.0, 0.0, 0.0);
        let mut path = Vec::new();
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            theta -= lr * mh / (vh.sqrt() + eps);
            path.push(theta);
        }
        path
    }

    #[test]
    fn null_gradient_leaves_theta() {
        let mut theta = vec![0.5, -1.0];
        let mut st = AdamState::new(2);
        adam_step(&mut theta, &[0.0, 0.0], &mut st, 0.01).unwrap();
        assert_eq!(theta, vec![0.5, -1.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_has_size_lr() {
        for g in [1e-3f64, 0.5, 42.0, -7.0] {
            let mut theta = vec![0.0f64];
            let mut st = AdamState::new(1);
            adam_step(&mut theta, &[g], &mut st, 0.001).unwrap();
            let expect = 0.001 * g.abs() / (g.abs() + 1e-8);
            assert!((theta[0].abs() - expect).abs() < 1e-15);
            assert_eq!(theta[0].signum(), -g.signum());
        }
    }

    #[test]
    fn matches_reference_sequence() {
        let grads = [0.3, 0.3, -0.1, 2.0, 0.0, 0.7];
        let want = reference_adam(&grads, 0.01);
        let mut theta = vec![0.0f64];
        let mut st = AdamState::new(1);
        for (g, w) in grads.iter().zip(&want) {
            adam_step(&mut theta, &[*g], &mut st, 0.01).unwrap();
            assert!((theta[0] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_gradient_shrinks_step() {
        let mut theta = vec![0.0f64];
        let mut st = AdamState::new(1);
        adam_step(&mut theta, &[1.0], &mut st, 0.1).unwrap();
        let first = theta[0];
        adam_step(&mut theta, &[1.0], &mut st, 0.1).unwrap();
        let second = theta[0] - first;
        // both moment estimates are exactly g after bias correction; only eps differs
        assert!(second.abs() <= 0.1);
        let want = reference_adam(&[1.0, 1.0], 0.1);
        assert!((theta[0] - want[1]).abs() < 1e-15);
    }

    #[test]
    fn scale_invariance_without_eps() {
        let g = [0.3, -2.0, 0.01, 5.0];
        let mut a = vec![0.0; 4];
        let mut b = vec![0.0; 4];
        let mut sa = AdamState::with_constants(4, 0.9, 0.999, 0.0);
        let mut sb = sa.clone();
        adam_step(&mut a, &g, &mut sa, 0.001).unwrap();
        let scaled: Vec<f64> = g.iter().map(|z| 37.5 * z).collect();
        adam_step(&mut b, &scaled, &mut sb, 0.001).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-18);
        }
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::<f64>::default();
        assert_eq!(lr_at(&s, 0), 0.001);
        assert_eq!(lr_at(&s, 49), 0.001);
        assert!((lr_at(&s, 50) - 0.000617).abs() < 1e-18);
        assert!((lr_at(&s, 100) - 0.001 * 0.617 * 0.617).abs() < 1e-18);
        assert!((lr_at(&s, 100) - 3.807e-4).abs() < 1e-7);
    }
}

//! Adam with bias correction, plus global gradient-norm clipping.

use crate::Real;

use super::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<F: Real> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> AdamConfig<F> {
    pub fn with_lr(lr: F) -> Self {
        AdamConfig {
            lr,
            beta1: F::from_f64(0.9).unwrap(),
            beta2: F::from_f64(0.999).unwrap(),
            eps: F::from_f64(1e-8).unwrap(),
        }
    }
}

/// First/second moment estimates, shaped like the parameter set they update.
#[derive(Debug, Clone)]
pub struct AdamState<F: Real> {
    cfg: AdamConfig<F>,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(cfg: AdamConfig<F>, params: &ParamSet<F>) -> Self {
        let m = params.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        let v = params.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        AdamState { cfg, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over every parameter. `grads` must be in parameter
    /// order with matching lengths.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Vec<F>]) {
        assert_eq!(grads.len(), params.len(), "gradient count must match parameter count");
        self.step += 1;
        let t = self.step as i32;
        let one = F::one();
        let bc1 = one - self.cfg.beta1.powi(t);
        let bc2 = one - self.cfg.beta2.powi(t);
        for (idx, grad) in grads.iter().enumerate() {
            let param = params.get_mut(idx);
            assert_eq!(grad.len(), param.data.len(), "gradient shape must match {}", param.name);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.cfg.beta1 * m[i] + (one - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (one - self.cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.data[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm<F: Real>(grads: &mut [Vec<F>], max_norm: F) -> F {
    let mut total = F::zero();
    for g in grads.iter() {
        for &x in g {
            total += x * x;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > F::zero() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_param(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("w", 1, 1, vec![value]);
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = single_param(1.25);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.01), &params);
        adam.step(&mut params, &[vec![0.0]]);
        assert_abs_diff_eq!(params.get(0).data[0], 1.25);
    }

    #[test]
    fn step_counter_increments_once_per_call() {
        let mut params = single_param(0.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.01), &params);
        assert_eq!(adam.step_count(), 0);
        adam.step(&mut params, &[vec![1.0]]);
        adam.step(&mut params, &[vec![1.0]]);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn constant_gradient_step_approaches_lr_times_sign() {
        // With a constant gradient g, m_hat -> g and v_hat -> g^2, so the
        // per-step move tends to lr * sign(g).
        let lr = 0.01;
        let mut params = single_param(0.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(lr), &params);
        let mut prev = params.get(0).data[0];
        let mut last_delta = 0.0;
        for _ in 0..1000 {
            adam.step(&mut params, &[vec![3.0]]);
            last_delta = params.get(0).data[0] - prev;
            prev = params.get(0).data[0];
        }
        assert_abs_diff_eq!(last_delta, -lr, epsilon = 1e-4);
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut grads = vec![vec![3.0, 4.0]];
        let norm = clip_grad_norm(&mut grads, 10.0);
        assert_abs_diff_eq!(norm, 5.0);
        assert_eq!(grads[0], vec![3.0, 4.0]);

        let norm = clip_grad_norm(&mut grads, 1.0);
        assert_abs_diff_eq!(norm, 5.0);
        let clipped: f64 = grads[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(clipped, 1.0, epsilon = 1e-12);
    }
}

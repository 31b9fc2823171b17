//! First-order optimizers over flat parameter vectors.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdanConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdanConfig {
    fn default() -> Self {
        Self {
            beta1: 0.98,
            beta2: 0.92,
            beta3: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adaptive Nesterov momentum: moments of the gradient, of the gradient
/// difference, and of the Nesterov-corrected gradient squared.
#[derive(Debug, Clone, PartialEq)]
pub struct AdanState<T> {
    pub cfg: AdanConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub n: Vec<T>,
    pub prev_grad: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdanState<T> {
    pub fn new(len: usize, cfg: AdanConfig) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            n: vec![T::zero(); len],
            prev_grad: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

pub fn adan_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdanState<T>, lr: f64) {
    assert_eq!(params.len(), state.len(), "parameter layout");
    assert_eq!(grads.len(), state.len(), "gradient layout");
    let first = state.step == 0;
    state.step += 1;
    let c = state.cfg;
    let t = state.step as i32;
    let (b1, b2, b3) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.beta3));
    let bc1 = T::lit(1.0 - c.beta1.powi(t));
    let bc2 = T::lit(1.0 - c.beta2.powi(t));
    let bc3_sqrt = T::lit((1.0 - c.beta3.powi(t)).sqrt());
    let eps = T::lit(c.eps);
    let lr_t = T::lit(lr);
    let decay = T::lit(1.0 - lr * c.weight_decay);
    let one = T::one();

    for i in 0..params.len() {
        let g = grads[i];
        // No difference term on the very first step.
        let diff = if first { T::zero() } else { g - state.prev_grad[i] };
        let nesterov = g + b2 * diff;
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * diff;
        state.n[i] = b3 * state.n[i] + (one - b3) * nesterov * nesterov;
        let denom = state.n[i].sqrt() / bc3_sqrt + eps;
        let update = (state.m[i] / bc1 + b2 * state.v[i] / bc2) / denom;
        params[i] = params[i] * decay - lr_t * update;
        state.prev_grad[i] = g;
    }
}

/// Plain Adam, kept for debugging optimizer issues.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64) {
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let bc1 = T::lit(1.0 - state.beta1.powi(t));
    let bc2 = T::lit(1.0 - state.beta2.powi(t));
    let one = T::one();
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        params[i] -= T::lit(lr) * mh / (vh.sqrt() + T::lit(state.eps));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T> {
    Adan(AdanState<T>),
    Adam(AdamState<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        match self {
            Optimizer::Adan(s) => adan_step(params, grads, s, lr),
            Optimizer::Adam(s) => adam_step(params, grads, s, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = vec![0.3f64, -1.2, 5.0];
        let orig = p.clone();
        let mut s = AdanState::new(3, AdanConfig::default());
        for _ in 0..50 {
            adan_step(&mut p, &[0.0; 3], &mut s, 1e-2);
        }
        assert_eq!(p, orig);
        assert_eq!(s.step, 50);
    }

    // Independent scalar re-derivation of the update rule.
    fn scalar_adan(x0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, b3, eps) = (0.98f64, 0.92f64, 0.99f64, 1e-8);
        let (mut x, mut m, mut v, mut n, mut prev) = (x0, 0.0, 0.0, 0.0, 0.0);
        for k in 1..=steps {
            let g = 2.0 * x;
            let d = if k == 1 { 0.0 } else { g - prev };
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * d;
            n = b3 * n + (1.0 - b3) * (g + b2 * d).powi(2);
            let kk = k as i32;
            let step = (m / (1.0 - b1.powi(kk)) + b2 * v / (1.0 - b2.powi(kk)))
                / ((n / (1.0 - b3.powi(kk))).sqrt() + eps);
            x -= lr * step;
            prev = g;
        }
        x
    }

    #[test]
    fn quadratic_converges() {
        let mut x = vec![1.0f64];
        let mut s = AdanState::new(1, AdanConfig::default());
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            adan_step(&mut x, &g, &mut s, 1e-2);
        }
        let oracle = scalar_adan(1.0, 1e-2, 500);
        assert!((x[0] - oracle).abs() < 1e-12, "{} vs {oracle}", x[0]);
        assert!(x[0].abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn trajectory_is_deterministic() {
        let run = || {
            let mut x = vec![0.7f32, -0.4];
            let mut s = AdanState::new(2, AdanConfig::default());
            for k in 0..100 {
                let g = [x[0] * 3.0 + k as f32 * 1e-3, x[1].sin()];
                adan_step(&mut x, &g, &mut s, 1e-2);
            }
            x
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn adam_fallback_descends() {
        let mut x = vec![1.0f64];
        let mut s = AdamState::new(1);
        for _ in 0..300 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut s, 1e-2);
        }
        assert!(x[0].abs() < 0.1);
    }
}

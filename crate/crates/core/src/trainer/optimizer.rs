//! AdamW with decoupled weight decay.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::config::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub config: OptimizerConfig,
    /// Flat ranges that never change: no moment updates, no decay.
    pub frozen: Vec<Range<usize>>,
}

impl OptimizerState {
    pub fn new(len: usize, config: OptimizerConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            config,
            frozen: Vec::new(),
        }
    }

    pub fn with_frozen(mut self, frozen: Vec<Range<usize>>) -> Self {
        self.frozen = frozen;
        self
    }

    fn is_frozen(&self, i: usize) -> bool {
        self.frozen.iter().any(|r| r.contains(&i))
    }

    /// One AdamW step that *increases* the objective whose gradient is `ascent_grad`.
    pub fn ascend(&mut self, params: &mut [f64], ascent_grad: &[f64], lr: f64) {
        self.apply(params, ascent_grad, lr, -1.0);
    }

    /// One AdamW step that decreases the objective whose gradient is `grad`.
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.apply(params, grad, lr, 1.0);
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64, sign: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let OptimizerConfig { beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            if self.is_frozen(i) {
                continue;
            }
            let g = sign * grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * weight_decay * params[i] + lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(wd: f64) -> OptimizerConfig {
        OptimizerConfig { weight_decay: wd, ..OptimizerConfig::default() }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = OptimizerState::new(3, cfg(0.0));
        let mut p = vec![0.5, -1.0, 2.0];
        for _ in 0..10 {
            s.ascend(&mut p, &[0.0; 3], 1e-2);
        }
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.step, 10);
    }

    #[test]
    fn constant_gradient_reaches_sign_step() {
        // with constant g the bias-corrected moments are exactly g and g², so
        // each step moves lr·g/(|g| + eps)
        let mut s = OptimizerState::new(2, cfg(0.0));
        let mut p = vec![0.0, 0.0];
        let g = [3.0, -0.002];
        let lr = 1e-3;
        for _ in 0..2000 {
            s.ascend(&mut p, &g, lr);
        }
        let before = p.clone();
        s.ascend(&mut p, &g, lr);
        let d0 = p[0] - before[0];
        let d1 = p[1] - before[1];
        assert!((d0 - lr * 3.0 / (3.0 + 1e-8)).abs() < 1e-12);
        assert!((d1 + lr * 0.002 / (0.002 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn descend_is_mirror_of_ascend() {
        let mut a = OptimizerState::new(2, cfg(0.0));
        let mut b = OptimizerState::new(2, cfg(0.0));
        let mut pa = vec![1.0, 1.0];
        let mut pb = vec![1.0, 1.0];
        a.ascend(&mut pa, &[1.0, -2.0], 0.1);
        b.descend(&mut pb, &[-1.0, 2.0], 0.1);
        assert_eq!(pa, pb);
    }

    #[test]
    fn decay_is_decoupled_and_skips_frozen() {
        let mut s = OptimizerState::new(2, cfg(0.5)).with_frozen(vec![1..2]);
        let mut p = vec![2.0, 2.0];
        s.ascend(&mut p, &[0.0, 5.0], 0.1);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
        assert_eq!(p[1], 2.0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = OptimizerState::new(4, cfg(0.01));
            let mut p = vec![0.1, 0.2, 0.3, 0.4];
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| (x * k as f64).sin()).collect();
                s.ascend(&mut p, &g, 1e-2);
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

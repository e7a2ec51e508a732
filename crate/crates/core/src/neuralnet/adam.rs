use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        if p.len() != self.first.len() || g.len() != p.len() {
            return Err(Error::shape(
                "optimizer state, parameters and gradients disagree",
            ));
        }
        for ((pt, gt), mt) in p.iter().zip(&g).zip(&self.first) {
            if pt.len() != gt.len() || pt.len() != mt.len() {
                return Err(Error::shape("optimizer tensor length mismatch"));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        for (((pt, gt), mt), vt) in p
            .iter_mut()
            .zip(&g)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..pt.len() {
                let gi = gt[i];
                mt[i] = beta1 * mt[i] + (1.0 - beta1) * gi;
                vt[i] = beta2 * vt[i] + (1.0 - beta2) * gi * gi;
                let m_hat = mt[i] / c1;
                let v_hat = vt[i] / c2;
                pt[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
        fn zeros_like(&self) -> Self {
            Flat(vec![0.0; self.0.len()])
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Flat(vec![1.0, -2.0]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(&mut p, &Flat(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut p = Flat(vec![0.0]);
        let mut adam = AdamState::new(&p, AdamConfig::with_lr(0.01));
        let g = Flat(vec![3.7]);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.0[0];
            adam.step(&mut p, &g).unwrap();
            last = (p.0[0] - before).abs();
        }
        assert!((last - 0.01).abs() < 1e-8, "{last}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = Flat(vec![1.5, -0.8, 0.3]);
        let mut adam = AdamState::new(&p, AdamConfig::with_lr(0.01));
        for _ in 0..5000 {
            let g = Flat(p.0.iter().map(|v| 2.0 * v).collect());
            adam.step(&mut p, &g).unwrap();
        }
        let norm = p.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{norm}");
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Flat(vec![0.0; 3]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        assert!(adam.step(&mut p, &Flat(vec![0.0; 2])).is_err());
    }
}

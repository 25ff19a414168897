//! Mergeable running moments for expectations over patterns and replicates.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on no_std
use num_traits::Float;

/// Weighted running moments per component, mergeable in a fixed order.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub(crate) weight: f64,
    pub(crate) count: usize,
    pub(crate) mean: Vec<f64>,
    pub(crate) m2: Vec<f64>,
}

impl Moments {
    pub(crate) fn new(width: usize) -> Self {
        Moments {
            weight: 0.0,
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    pub(crate) fn push(&mut self, w: f64, x: &[f64]) {
        self.weight += w;
        self.count += 1;
        let f = w / self.weight;
        for ((&xk, mean), m2) in x.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = xk - *mean;
            *mean += f * delta;
            *m2 += w * delta * (xk - *mean);
        }
    }

    pub(crate) fn merge(&mut self, other: &Moments) {
        if other.weight == 0.0 {
            return;
        }
        if self.weight == 0.0 {
            *self = other.clone();
            return;
        }
        let total = self.weight + other.weight;
        let f = other.weight / total;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += f * delta;
            self.m2[k] += other.m2[k] + delta * delta * self.weight * f;
        }
        self.weight = total;
        self.count += other.count;
    }

    /// Standard error of the mean of component `k` for unit-weight samples.
    pub(crate) fn std_error(&self, k: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let var = self.m2[k] / (self.count as f64 - 1.0);
        (var.max(0.0) / self.count as f64).sqrt()
    }
}

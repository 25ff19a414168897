//! Gauss–Legendre rules on (0, 1) weighted by a prior density.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
#[allow(unused_imports)] // float math on no_std
use num_traits::Float;

/// Default number of nodes per parameter coordinate.
pub const DEFAULT_NODES: usize = 16;

/// Prior density for one unit-cube coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "lowercase"))]
pub enum Prior {
    Uniform,
    Beta { a: f64, b: f64 },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Uniform => Ok(()),
            Prior::Beta { a, b } => {
                if a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("beta prior needs finite a, b > 0"))
                }
            }
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match *self {
            Prior::Uniform => 1.0,
            Prior::Beta { a, b } => {
                let log_beta = libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
                let mut log_d = -log_beta;
                if a != 1.0 {
                    log_d += (a - 1.0) * t.ln();
                }
                if b != 1.0 {
                    log_d += (b - 1.0) * (1.0 - t).ln();
                }
                log_d.exp()
            }
        }
    }
}

/// Nodes and density-weighted weights on (0, 1).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_k`, the rule's estimate of the prior's total mass.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], ascending.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 1 { z } else { p1 };
            let pkm1 = if k == 1 { 1.0 } else { p0 };
            dp = kf * (z * pk - pkm1) / (z * z - 1.0);
            let dz = pk / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[k - 1 - i] = z;
        w[i] = wi;
        w[k - 1 - i] = wi;
    }
    (x, w)
}

/// `k`-point Gauss–Legendre rule on (0, 1) with weights multiplied by the prior density.
pub fn quadrature_rule(prior: Prior, k: usize) -> Result<QuadratureRule> {
    if k < 2 {
        return Err(Error::invalid("quadrature needs at least 2 nodes"));
    }
    prior.validate()?;
    let (x, w) = gauss_legendre(k);
    let nodes: Vec<f64> = x.iter().map(|&xi| 0.5 * (xi + 1.0)).collect();
    let weights = nodes
        .iter()
        .zip(&w)
        .map(|(&t, &wi)| 0.5 * wi * prior.density(t))
        .collect();
    Ok(QuadratureRule { nodes, weights })
}

/// Tensor product of per-coordinate rules as `(point, weight)` pairs, last coordinate fastest.
pub fn tensor_product(rules: &[QuadratureRule]) -> Vec<(Vec<f64>, f64)> {
    let mut out: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for rule in rules {
        let mut next = Vec::with_capacity(out.len() * rule.len());
        for (point, weight) in &out {
            for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                let mut p = point.clone();
                p.push(t);
                next.push((p, weight * w));
            }
        }
        out = next;
    }
    out
}

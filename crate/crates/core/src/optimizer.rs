//! Particle-swarm minimization of a design criterion over the weight simplex.
//!
//! Particles live in the box `[0, 1]^N` and are read as designs through
//! `ξ = u / Σu`. Infeasible particles (singular information) score `+∞`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on no_std
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{job_rng, Executor};
use crate::model::Design;

/// Weights below this are dropped from the reported design.
pub const TRUNCATION_FLOOR: f64 = 1e-6;

/// Which personal best pulls each particle socially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Topology {
    /// The swarm-wide best.
    #[default]
    Global,
    /// The best of particle `k` and its neighbours `k ± 1`. Slower to
    /// collapse, which matters on the sparse optima of large design spaces.
    Ring,
}

/// Swarm hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Stop a restart when the best value improved by less than this
    /// fraction over the last `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    pub topology: Topology,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            swarm_size: 64,
            iterations: 500,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            seed: 0,
            restarts: 4,
            tolerance: 1e-9,
            patience: 50,
            topology: Topology::Global,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size == 0 || self.iterations == 0 || self.restarts == 0 || self.patience == 0 {
            return Err(Error::invalid(
                "swarm size, iterations, restarts and patience must be positive",
            ));
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return Err(Error::invalid("inertia must lie in (0, 1)"));
        }
        if !(self.cognitive.is_finite() && self.cognitive >= 0.0 && self.social.is_finite() && self.social >= 0.0) {
            return Err(Error::invalid(
                "acceleration coefficients must be finite and non-negative",
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Outcome of [`minimize_over_simplex`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveResult {
    pub best_design: Design,
    pub best_value: f64,
    /// Best value so far after each iteration, across restarts.
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub seed: u64,
}

fn to_design(u: &[f64], n: usize) -> Result<Design> {
    Design::from_masses(u, n)
}

/// Particle indices spread evenly over `0..n_points`.
fn spread(n_points: usize, size: usize) -> Vec<usize> {
    if size == 1 {
        return vec![0];
    }
    (0..size)
        .map(|k| (k * (n_points - 1) + (size - 1) / 2) / (size - 1))
        .collect()
}

/// Uniform design first, then equal weight on evenly spread subsets of size `p` and `2p`.
fn seed_particles(n_points: usize, n_params: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0; n_points]];
    for size in [n_params, 2 * n_params] {
        if size == 0 || size >= n_points {
            continue;
        }
        let mut u = vec![0.0; n_points];
        for i in spread(n_points, size) {
            u[i] = 1.0;
        }
        if !out.contains(&u) {
            out.push(u);
        }
    }
    out
}

fn score<F>(criterion: &F, u: &[f64], n: usize) -> Result<f64>
where
    F: Fn(&Design) -> Result<f64> + Sync,
{
    let design = to_design(u, n)?;
    match criterion(&design) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Ok(f64::INFINITY),
        Err(e) if e.is_infeasible() => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Best personal value among `k − 1`, `k`, `k + 1` (cyclic); ties favour `k`.
fn ring_leader(values: &[f64], k: usize) -> usize {
    let m = values.len();
    let mut best = k;
    for c in [(k + m - 1) % m, (k + 1) % m] {
        if values[c] < values[best] {
            best = c;
        }
    }
    best
}

struct RestartOutcome {
    best_u: Vec<f64>,
    best_value: f64,
    history: Vec<f64>,
    evaluations: usize,
}

fn run_restart<F, E>(
    criterion: &F,
    n_points: usize,
    n: usize,
    seeds: &[Vec<f64>],
    config: &PsoConfig,
    restart: usize,
    exec: &E,
) -> Result<RestartOutcome>
where
    F: Fn(&Design) -> Result<f64> + Sync + Send,
    E: Executor,
{
    let mut rng = job_rng(config.seed, restart as u64);
    let m = config.swarm_size;
    let mut x: Vec<Vec<f64>> = (0..m)
        .map(|k| match seeds.get(k) {
            Some(s) => s.clone(),
            None => (0..n_points).map(|_| rng.random::<f64>()).collect(),
        })
        .collect();
    let mut v: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n_points).map(|_| 0.2 * rng.random::<f64>() - 0.1).collect())
        .collect();

    let evaluate = |x: &[Vec<f64>]| -> Result<Vec<f64>> {
        exec.map(x.len(), |k| score(criterion, &x[k], n)).into_iter().collect()
    };

    let mut f = evaluate(&x)?;
    let mut evaluations = m;
    if f.iter().all(|v| v.is_infinite()) {
        return Err(Error::InfeasibleSwarm);
    }
    let mut pbest = x.clone();
    let mut pbest_f = f.clone();
    let mut g = argmin(&pbest_f);
    let mut gbest = pbest[g].clone();
    let mut gbest_f = pbest_f[g];
    let mut history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let leaders: Vec<usize> = match config.topology {
            Topology::Global => Vec::new(),
            Topology::Ring => (0..m).map(|k| ring_leader(&pbest_f, k)).collect(),
        };
        for k in 0..m {
            let leader = match config.topology {
                Topology::Global => &gbest,
                Topology::Ring => &pbest[leaders[k]],
            };
            for j in 0..n_points {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let vel = config.inertia * v[k][j]
                    + config.cognitive * r1 * (pbest[k][j] - x[k][j])
                    + config.social * r2 * (leader[j] - x[k][j]);
                let vel = vel.clamp(-1.0, 1.0);
                let mut pos = x[k][j] + vel;
                if pos < 0.0 {
                    pos = -pos;
                } else if pos > 1.0 {
                    pos = 2.0 - pos;
                }
                v[k][j] = vel;
                x[k][j] = pos.clamp(0.0, 1.0);
            }
        }
        f = evaluate(&x)?;
        evaluations += m;
        for k in 0..m {
            if f[k] < pbest_f[k] {
                pbest_f[k] = f[k];
                pbest[k].clone_from(&x[k]);
            }
        }
        g = argmin(&pbest_f);
        if pbest_f[g] < gbest_f {
            gbest_f = pbest_f[g];
            gbest.clone_from(&pbest[g]);
        }
        history.push(gbest_f);
        if it >= config.patience {
            let past = history[it - config.patience];
            if past - gbest_f <= config.tolerance * past.abs() {
                break;
            }
        }
    }
    Ok(RestartOutcome {
        best_u: gbest,
        best_value: gbest_f,
        history,
        evaluations,
    })
}

/// Minimizes `criterion` over designs with `n_points` weights and sample size `n`.
///
/// `n_params` sizes the sparse seed particles. Restarts use independent
/// streams derived from `config.seed`; the result is reproducible and does
/// not depend on how `exec` schedules evaluations.
pub fn minimize_over_simplex<F, E>(
    criterion: F,
    n_points: usize,
    n: usize,
    n_params: usize,
    config: &PsoConfig,
    exec: &E,
) -> Result<SolveResult>
where
    F: Fn(&Design) -> Result<f64> + Sync + Send,
    E: Executor,
{
    config.validate()?;
    if n_points == 0 || n == 0 {
        return Err(Error::invalid("need at least one point and a positive sample size"));
    }
    if n_params > n_points {
        return Err(Error::invalid(format!(
            "{n_params} parameters exceed {n_points} design points"
        )));
    }
    let uniform = Design::uniform(n_points, n)?;
    let uniform_value = criterion(&uniform)?;
    if !uniform_value.is_finite() {
        return Err(Error::invalid("criterion is not finite at the uniform design"));
    }
    let seeds = seed_particles(n_points, n_params);

    let mut best_u = vec![1.0; n_points];
    let mut best_value = uniform_value;
    let mut history = Vec::new();
    let mut evaluations = 1;
    for r in 0..config.restarts {
        let out = run_restart(&criterion, n_points, n, &seeds, config, r, exec)?;
        evaluations += out.evaluations;
        if out.best_value < best_value {
            best_value = out.best_value;
            best_u = out.best_u;
        }
        history.extend(out.history);
    }
    let mut running = uniform_value;
    for h in history.iter_mut() {
        running = running.min(*h);
        *h = running;
    }

    let raw = to_design(&best_u, n)?;
    let truncated = raw.truncated(TRUNCATION_FLOOR)?;
    evaluations += 1;
    let (best_design, best_value) = match criterion(&truncated) {
        Ok(v) if v.is_finite() && v <= uniform_value => (truncated, v),
        _ => {
            evaluations += 1;
            let v = criterion(&raw)?;
            if v <= uniform_value {
                (raw, v)
            } else {
                (uniform, uniform_value)
            }
        }
    };
    log::info!("swarm finished after {evaluations} evaluations, best {best_value:.6e}");
    Ok(SolveResult {
        best_design,
        best_value,
        history,
        evaluations,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criterion::{taylor_loss, Variant};
    use crate::exec::Sequential;
    use crate::model::RobustnessParams;
    use nalgebra::DMatrix;

    fn quick(seed: u64) -> PsoConfig {
        PsoConfig {
            swarm_size: 24,
            iterations: 200,
            restarts: 2,
            seed,
            ..PsoConfig::default()
        }
    }

    #[test]
    fn quadratic_bowl_optimum_is_uniform() {
        let n_points = 6;
        let crit =
            |d: &Design| -> Result<f64> { Ok(d.weights().iter().map(|w| (w - 1.0 / n_points as f64).powi(2)).sum()) };
        let r = minimize_over_simplex(crit, n_points, 10, 1, &quick(1), &Sequential).unwrap();
        assert!(r.best_value <= 1e-8);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    fn toy_problem() -> (DMatrix<f64>, Vec<f64>, RobustnessParams) {
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let z = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let probs = vec![0.7, 0.8, 0.9, 0.85, 0.95];
        (z, probs, RobustnessParams::new(0.5, 0.1).unwrap())
    }

    #[test]
    fn beats_simplex_grid_on_five_points() {
        let (z, probs, params) = toy_problem();
        let n = 20;
        let crit = |d: &Design| taylor_loss(&z, d, &probs, params, Variant::DerivationConsistent).map(|r| r.total);
        let mut grid_best = f64::INFINITY;
        let steps = 20usize;
        for a in 0..=steps {
            for b in 0..=steps - a {
                for c in 0..=steps - a - b {
                    for d in 0..=steps - a - b - c {
                        let e = steps - a - b - c - d;
                        let w: Vec<f64> = [a, b, c, d, e].iter().map(|&k| k as f64 / steps as f64).collect();
                        let design = Design::from_masses(&w, n).unwrap();
                        if let Ok(v) = crit(&design) {
                            grid_best = grid_best.min(v);
                        }
                    }
                }
            }
        }
        for topology in [Topology::Global, Topology::Ring] {
            let config = PsoConfig {
                seed: 3,
                topology,
                ..PsoConfig::default()
            };
            let r = minimize_over_simplex(crit, 5, n, 2, &config, &Sequential).unwrap();
            assert!(
                r.best_value <= grid_best,
                "{topology:?}: {} > {}",
                r.best_value,
                grid_best
            );
            let again = crit(&r.best_design).unwrap();
            assert!((again - r.best_value).abs() <= 1e-12);
        }
    }

    #[test]
    fn ring_leader_wraps_and_prefers_self_on_ties() {
        let f = [3.0, 1.0, 2.0, 2.0, 0.5];
        assert_eq!(ring_leader(&f, 0), 4);
        assert_eq!(ring_leader(&f, 2), 1);
        assert_eq!(ring_leader(&f, 3), 4);
        assert_eq!(ring_leader(&[1.0, 1.0, 1.0], 1), 1);
    }

    #[test]
    fn equal_seeds_are_bit_identical() {
        let (z, probs, params) = toy_problem();
        let crit = |d: &Design| taylor_loss(&z, d, &probs, params, Variant::PaperLiteral).map(|r| r.total);
        let a = minimize_over_simplex(crit, 5, 12, 2, &quick(9), &Sequential).unwrap();
        let b = minimize_over_simplex(crit, 5, 12, 2, &quick(9), &Sequential).unwrap();
        assert_eq!(a, b);
        let c = minimize_over_simplex(crit, 5, 12, 2, &quick(10), &Sequential).unwrap();
        assert_eq!(c.seed, 10);
    }

    #[test]
    fn infeasible_particles_are_soft_rejected() {
        let (z, probs, params) = toy_problem();
        let crit = |d: &Design| {
            if d.weights()[0] > 0.5 {
                Err(Error::SingularInformation { pivot: 0 })
            } else {
                taylor_loss(&z, d, &probs, params, Variant::default()).map(|r| r.total)
            }
        };
        let r = minimize_over_simplex(crit, 5, 12, 2, &quick(4), &Sequential).unwrap();
        assert!(r.best_value.is_finite());
        let uniform = crit(&Design::uniform(5, 12).unwrap()).unwrap();
        assert!(r.best_value <= uniform);
    }

    #[test]
    fn all_infeasible_swarm_is_error() {
        let calls = core::sync::atomic::AtomicUsize::new(0);
        let crit = |_: &Design| {
            if calls.fetch_add(1, core::sync::atomic::Ordering::Relaxed) == 0 {
                Ok(1.0)
            } else {
                Err(Error::SingularInformation { pivot: 0 })
            }
        };
        let err = minimize_over_simplex(crit, 4, 8, 1, &quick(0), &Sequential).unwrap_err();
        assert_eq!(err, Error::InfeasibleSwarm);
    }

    #[test]
    fn reported_design_is_on_simplex() {
        let (z, probs, params) = toy_problem();
        let crit = |d: &Design| taylor_loss(&z, d, &probs, params, Variant::default()).map(|r| r.total);
        let r = minimize_over_simplex(crit, 5, 30, 2, &quick(5), &Sequential).unwrap();
        let w = r.best_design.weights();
        assert!(w.iter().all(|&x| x == 0.0 || x >= TRUNCATION_FLOOR));
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn seed_particles_cover_sparse_supports() {
        let seeds = seed_particles(10, 2);
        assert_eq!(seeds.len(), 3);
        assert_eq!(seeds[1].iter().filter(|&&u| u > 0.0).count(), 2);
        assert_eq!((seeds[1][0], seeds[1][9]), (1.0, 1.0));
        assert_eq!(seeds[2].iter().filter(|&&u| u > 0.0).count(), 4);
        assert_eq!(spread(100, 4), vec![0, 33, 66, 99]);
    }

    #[test]
    fn rejects_bad_config() {
        let crit = |_: &Design| Ok(0.0);
        let bad = PsoConfig {
            inertia: 1.0,
            ..PsoConfig::default()
        };
        assert!(minimize_over_simplex(crit, 3, 3, 1, &bad, &Sequential).is_err());
    }
}

//! Verification oracles: full data-generation simulation of the MMPE with its
//! bias/variance decomposition, and the Taylor-versus-exact comparison table.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // float math on no_std
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::criterion::{expected_mmpe_max, taylor_loss, ExpectationMode, Variant};
use crate::error::{Error, Result};
use crate::exec::{job_rng, Executor};
use crate::model::{design_matrix, DesignSpace, ExactDesign, ModelSpec, RobustnessParams};
use crate::numerics::linalg::{symmetrize, Cholesky};
use crate::stats::Moments;

/// Gauss–Newton iteration cap per fit.
pub const MAX_GAUSS_NEWTON_ITERS: usize = 50;
const MAX_HALVINGS: usize = 30;
const CHUNK: usize = 256;

/// Simulated MMPE and its decomposition, each with a standard error.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecompositionReport {
    pub mmpe_hat: f64,
    pub mb_hat: f64,
    pub mv_hat: f64,
    pub cross_hat: f64,
    pub psi_norm_term: f64,
    pub se_mmpe: f64,
    pub se_mb: f64,
    pub se_mv: f64,
    pub se_cross: f64,
    /// Replicates used after discarding singular ones.
    pub replicates: usize,
    pub singular: usize,
    pub non_converged: usize,
}

impl DecompositionReport {
    pub fn term_sum(&self) -> f64 {
        self.mb_hat + self.mv_hat + self.cross_hat + self.psi_norm_term
    }

    /// Root sum of squares of the per-term standard errors.
    pub fn combined_se(&self) -> f64 {
        (self.se_mmpe.powi(2) + self.se_mb.powi(2) + self.se_mv.powi(2) + self.se_cross.powi(2)).sqrt()
    }

    /// `|mmpe − Σ terms| ≤ 3 · combined SE`, with a rounding allowance.
    pub fn identity_holds(&self) -> bool {
        let gap = (self.mmpe_hat - self.term_sum()).abs();
        gap <= 3.0 * self.combined_se() + 1e-12 * self.mmpe_hat.abs().max(self.term_sum().abs())
    }
}

/// Inputs of one simulation study.
#[derive(Debug, Clone)]
pub struct SimulationSetup<'a> {
    pub model: &'a ModelSpec,
    pub space: &'a DesignSpace,
    pub exact: &'a ExactDesign,
    pub probs: &'a [f64],
    pub psi: &'a [f64],
    pub beta_true: &'a [f64],
    pub sigma2: f64,
}

enum FitError {
    Singular,
    NotConverged,
    Other(Error),
}

impl From<Error> for FitError {
    fn from(e: Error) -> Self {
        match e {
            Error::SingularInformation { .. } => FitError::Singular,
            other => FitError::Other(other),
        }
    }
}

/// Complete-case least-squares fit from observed counts `k` and per-point
/// response means, returning fitted means at every candidate point.
struct Fitter<'a> {
    setup: &'a SimulationSetup<'a>,
    /// Fixed design matrix for linear models.
    z_linear: Option<DMatrix<f64>>,
}

impl<'a> Fitter<'a> {
    fn new(setup: &'a SimulationSetup<'a>) -> Result<Self> {
        let z_linear = match setup.model {
            ModelSpec::Linear(_) => Some(design_matrix(setup.model, setup.space, None)?),
            ModelSpec::Nonlinear(_) => None,
        };
        Ok(Fitter { setup, z_linear })
    }

    fn means(&self, beta: &[f64]) -> DVector<f64> {
        let pts = self.setup.space.points();
        DVector::from_iterator(pts.len(), pts.iter().map(|x| self.setup.model.mean(x, beta)))
    }

    fn weighted_solve(z: &DMatrix<f64>, k: &[f64], rhs: &DVector<f64>) -> core::result::Result<DVector<f64>, FitError> {
        let mut zk = z.clone();
        for (i, &w) in k.iter().enumerate() {
            zk.row_mut(i).scale_mut(w);
        }
        let mut info = z.transpose() * &zk;
        symmetrize(&mut info);
        let chol = Cholesky::factor(&info)?;
        let b = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        let sol = chol.solve(&(z.transpose() * b));
        Ok(sol.column(0).into_owned())
    }

    /// `ȳ_i = s_i / k_i` on observed points; the objective is `Σ k_i (ȳ_i − f_i)²`.
    fn fit(&self, k: &[f64], ybar: &DVector<f64>) -> core::result::Result<DVector<f64>, FitError> {
        match &self.z_linear {
            Some(z) => {
                let rhs = DVector::from_iterator(k.len(), k.iter().zip(ybar.iter()).map(|(a, b)| a * b));
                let beta = Self::weighted_solve(z, k, &rhs)?;
                Ok(z * beta)
            }
            None => self.gauss_newton(k, ybar),
        }
    }

    fn sse(k: &[f64], ybar: &DVector<f64>, fitted: &DVector<f64>) -> f64 {
        k.iter()
            .zip(ybar.iter().zip(fitted.iter()))
            .map(|(w, (y, f))| w * (y - f) * (y - f))
            .sum()
    }

    fn gauss_newton(&self, k: &[f64], ybar: &DVector<f64>) -> core::result::Result<DVector<f64>, FitError> {
        let mut beta = self.setup.beta_true.to_vec();
        let mut fitted = self.means(&beta);
        let mut sse = Self::sse(k, ybar, &fitted);
        for _ in 0..MAX_GAUSS_NEWTON_ITERS {
            let jac = design_matrix(self.setup.model, self.setup.space, Some(&beta))?;
            let resid = DVector::from_iterator(k.len(), (0..k.len()).map(|i| k[i] * (ybar[i] - fitted[i])));
            let step = Self::weighted_solve(&jac, k, &resid)?;
            let step_norm = step.norm();
            let beta_norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                let trial_fit = self.means(&trial);
                let trial_sse = Self::sse(k, ybar, &trial_fit);
                if trial_sse.is_finite() && trial_sse <= sse {
                    let improvement = sse - trial_sse;
                    beta = trial;
                    fitted = trial_fit;
                    sse = trial_sse;
                    accepted = true;
                    if t * step_norm <= 1e-10 * (1.0 + beta_norm) || improvement <= 1e-14 * sse.max(f64::MIN_POSITIVE) {
                        return Ok(fitted);
                    }
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No descent along the Gauss–Newton direction: a stationary point to working precision.
                if step_norm <= 1e-6 * (1.0 + beta_norm) {
                    return Ok(fitted);
                }
                return Err(FitError::NotConverged);
            }
        }
        Err(FitError::NotConverged)
    }
}

struct Replicate {
    loss: f64,
    mb: f64,
    mv: f64,
    cross: f64,
}

enum Outcome {
    Done(Replicate),
    Singular,
    NotConverged,
}

/// Simulates responses `y = f(x; β) + ψ/√n + ε` on `exact`, fits by complete-case
/// least squares and decomposes the averaged squared prediction error.
pub fn simulate_mmpe<E: Executor>(
    setup: &SimulationSetup<'_>,
    reps: usize,
    seed: u64,
    exec: &E,
) -> Result<DecompositionReport> {
    let big_n = setup.space.len();
    let counts = setup.exact.counts();
    if counts.len() != big_n || setup.probs.len() != big_n || setup.psi.len() != big_n {
        return Err(Error::invalid(
            "design, probabilities and contamination must match the space",
        ));
    }
    if setup.beta_true.len() != setup.model.n_params() {
        return Err(Error::invalid("beta_true has the wrong length"));
    }
    if !(setup.sigma2.is_finite() && setup.sigma2 >= 0.0) {
        return Err(Error::invalid("sigma2 must be finite and non-negative"));
    }
    if reps == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let n = setup.exact.n();
    let root_n = (n as f64).sqrt();
    let z_true = design_matrix(setup.model, setup.space, Some(setup.beta_true))?;
    let psi = DVector::from_column_slice(setup.psi);
    let ortho = (z_true.transpose() * &psi).amax();
    if ortho > 1e-6 * psi.norm().max(1.0) * z_true.norm() {
        log::warn!("contamination is not orthogonal to the model columns (max |Zᵀψ| = {ortho:e})");
    }
    let fitter = Fitter::new(setup)?;
    let f_true = fitter.means(setup.beta_true);
    let target = &f_true + &psi / root_n;
    let sigma = setup.sigma2.sqrt();
    let inv_n = 1.0 / big_n as f64;

    let run = |rep: usize| -> Result<Outcome> {
        let mut rng = job_rng(seed, rep as u64);
        let mut k = vec![0.0; big_n];
        let mut ybar = DVector::<f64>::zeros(big_n);
        for i in 0..big_n {
            let mut sum = 0.0;
            for _ in 0..counts[i] {
                let observed = rng.random::<f64>() < setup.probs[i];
                let eps: f64 = rng.sample(StandardNormal);
                if observed {
                    k[i] += 1.0;
                    sum += target[i] + sigma * eps;
                }
            }
            ybar[i] = if k[i] > 0.0 { sum / k[i] } else { 0.0 };
        }
        let fitted = match fitter.fit(&k, &ybar) {
            Ok(f) => f,
            Err(FitError::Singular) => return Ok(Outcome::Singular),
            Err(FitError::NotConverged) => return Ok(Outcome::NotConverged),
            Err(FitError::Other(e)) => return Err(e),
        };
        let noiseless = match fitter.fit(&k, &target) {
            Ok(f) => f,
            Err(FitError::Singular) => return Ok(Outcome::Singular),
            Err(FitError::NotConverged) => return Ok(Outcome::NotConverged),
            Err(FitError::Other(e)) => return Err(e),
        };
        let bias = &noiseless - &f_true;
        Ok(Outcome::Done(Replicate {
            loss: (&fitted - &target).norm_squared() * inv_n,
            mb: bias.norm_squared() * inv_n,
            mv: (&fitted - &noiseless).norm_squared() * inv_n,
            cross: -2.0 * inv_n * bias.dot(&psi) / root_n,
        }))
    };

    let chunks = reps.div_ceil(CHUNK);
    let partials = exec.map(chunks, |c| -> Result<(Moments, usize, usize)> {
        let mut m = Moments::new(4);
        let (mut singular, mut failed) = (0, 0);
        for rep in c * CHUNK..((c + 1) * CHUNK).min(reps) {
            match run(rep)? {
                Outcome::Done(r) => m.push(1.0, &[r.loss, r.mb, r.mv, r.cross]),
                Outcome::Singular => singular += 1,
                Outcome::NotConverged => failed += 1,
            }
        }
        Ok((m, singular, failed))
    });
    let mut moments = Moments::new(4);
    let (mut singular, mut failed) = (0usize, 0usize);
    for p in partials {
        let (m, s, f) = p?;
        moments.merge(&m);
        singular += s;
        failed += f;
    }
    if 2 * singular > reps {
        return Err(Error::TooManySingular { singular, total: reps });
    }
    if 100 * failed > reps {
        return Err(Error::NonConvergence { failed, total: reps });
    }
    if moments.count == 0 {
        return Err(Error::AllPatternsSingular);
    }
    Ok(DecompositionReport {
        mmpe_hat: moments.mean[0],
        mb_hat: moments.mean[1],
        mv_hat: moments.mean[2],
        cross_hat: moments.mean[3],
        psi_norm_term: psi.norm_squared() / (big_n as f64 * n as f64),
        se_mmpe: moments.std_error(0),
        se_mb: moments.std_error(1),
        se_mv: moments.std_error(2),
        se_cross: moments.std_error(3),
        replicates: moments.count,
        singular,
        non_converged: failed,
    })
}

/// One row of the Taylor-versus-exact table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonRow {
    pub variant: Variant,
    pub taylor: f64,
    pub exact: f64,
    pub relative_gap: f64,
}

/// Taylor criterion of each variant against the enumerated expectation.
pub fn taylor_vs_exact_report<E: Executor>(
    z: &DMatrix<f64>,
    exact: &ExactDesign,
    probs: &[f64],
    params: RobustnessParams,
    variants: &[Variant],
    exec: &E,
) -> Result<Vec<ComparisonRow>> {
    if exact.len() != z.nrows() {
        return Err(Error::invalid(format!(
            "exact design has {} points, design matrix {}",
            exact.len(),
            z.nrows()
        )));
    }
    let truth = expected_mmpe_max(z, exact.counts(), probs, params, ExpectationMode::Enumerate, exec)?
        .value
        .mean;
    let design = exact.to_design();
    variants
        .iter()
        .map(|&v| {
            let taylor = taylor_loss(z, &design, probs, params, v)?.total;
            Ok(ComparisonRow {
                variant: v,
                taylor,
                exact: truth,
                relative_gap: (taylor - truth).abs() / truth.abs(),
            })
        })
        .collect()
}

//! Loss machinery: hat matrices, the maximized MMPE for a realized missing
//! pattern and its expectation, the Taylor-approximated design criteria, prior
//! averaging for nonlinear models, and the least-favorable contamination.
//!
//! Every criterion works with `R = Z (Zᵀ D Z)⁻¹ Zᵀ`. Evaluation goes through
//! [`Projector`], which stores an orthonormal basis `Q` of the column space so
//! that `R = Q (QᵀDQ)⁻¹ Qᵀ` and all eigen work happens on `p × p` matrices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // float math on no_std
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{job_rng, Executor, Sequential};
use crate::model::{design_matrix, Design, DesignSpace, MissingPattern, ModelSpec, NonlinearModel, RobustnessParams};
use crate::numerics::linalg::{orient, symmetrize, Cholesky};
use crate::numerics::quadrature::{quadrature_rule, tensor_product, QuadratureRule};
use crate::numerics::{orthonormal_complement, sym_top_eig};
use crate::stats::Moments;

/// Relative size of an `R` factor pivot below which `Z` is rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Largest number of missing patterns [`ExpectationMode::Enumerate`] will visit.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

const CHUNK: usize = 2048;

/// Which correction weight the Taylor criterion uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Variant {
    /// `C = I − D_ξ P`.
    #[cfg_attr(feature = "serde", serde(alias = "paper"))]
    PaperLiteral,
    /// `C = D_ξ (I − P)`; vanishes without missingness.
    #[default]
    #[cfg_attr(feature = "serde", serde(alias = "derivation"))]
    DerivationConsistent,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::PaperLiteral, Variant::DerivationConsistent];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::PaperLiteral => "paper-literal",
            Variant::DerivationConsistent => "derivation-consistent",
        }
    }

    /// Diagonal of `C` for scaled counts `d` and retention probabilities `p`.
    pub fn correction_weight(&self, d: f64, p: f64) -> f64 {
        match self {
            Variant::PaperLiteral => 1.0 - d * p,
            Variant::DerivationConsistent => d * (1.0 - p),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper-literal" => Ok(Variant::PaperLiteral),
            "derivation" | "derivation-consistent" => Ok(Variant::DerivationConsistent),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// `R = Z (ZᵀDZ)⁻¹ Zᵀ` together with the diagonal and information matrix used.
#[derive(Debug, Clone, PartialEq)]
pub struct HatMatrices {
    pub r: DMatrix<f64>,
    pub d: Vec<f64>,
    pub info: DMatrix<f64>,
}

fn check_diagonal(d: &[f64], n: usize) -> Result<()> {
    if d.len() != n {
        return Err(Error::invalid(format!(
            "diagonal has {} entries, expected {n}",
            d.len()
        )));
    }
    if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("diagonal entries must be finite and non-negative"));
    }
    Ok(())
}

fn check_probs(probs: &[f64], n: usize) -> Result<()> {
    if probs.len() != n {
        return Err(Error::invalid(format!(
            "{} retention probabilities for {n} points",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("retention probabilities must lie in [0, 1]"));
    }
    Ok(())
}

/// Hat matrix for design matrix `z` and weight diagonal `d`, formed densely.
pub fn hat(z: &DMatrix<f64>, d: &[f64]) -> Result<HatMatrices> {
    check_diagonal(d, z.nrows())?;
    let mut zd = z.clone();
    for (i, &w) in d.iter().enumerate() {
        zd.row_mut(i).scale_mut(w);
    }
    let mut info = z.transpose() * zd;
    symmetrize(&mut info);
    let chol = Cholesky::factor(&info)?;
    let a = chol.inverse();
    let mut r = z * a * z.transpose();
    symmetrize(&mut r);
    Ok(HatMatrices { r, d: d.to_vec(), info })
}

/// `Ch_max` and trace of `R` for one weight diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternTerms {
    pub ch_max: f64,
    pub trace_r: f64,
}

/// Five-term breakdown of the Taylor criterion.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossReport {
    pub total: f64,
    pub bias_eig_term: f64,
    pub variance_term: f64,
    pub constant_term: f64,
    pub bias_correction: f64,
    pub variance_correction: f64,
    pub variant: Variant,
    pub eig_gap_ratio: f64,
}

impl LossReport {
    fn from_terms(
        bias_eig_term: f64,
        variance_term: f64,
        constant_term: f64,
        bias_correction: f64,
        variance_correction: f64,
        variant: Variant,
        eig_gap_ratio: f64,
    ) -> Self {
        LossReport {
            total: bias_eig_term + variance_term + constant_term + bias_correction + variance_correction,
            bias_eig_term,
            variance_term,
            constant_term,
            bias_correction,
            variance_correction,
            variant,
            eig_gap_ratio,
        }
    }
}

/// Orthonormal basis of the column space of a design matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    q: DMatrix<f64>,
}

struct Weighted {
    /// `Q (QᵀDQ)⁻¹`, so `R = Y Qᵀ` and `(R²)_ii = ‖Y_i‖²`.
    y: DMatrix<f64>,
    winv: DMatrix<f64>,
}

struct TopPair {
    lambda: f64,
    v1: DVector<f64>,
    gap_ratio: f64,
}

impl Projector {
    /// Fails with `SingularInformation` when `z` is rank deficient.
    pub fn new(z: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = z.shape();
        if p == 0 || p > n {
            return Err(Error::invalid(format!("design matrix is {n}×{p}; need 1 ≤ p ≤ N")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design matrix has non-finite entries"));
        }
        let qr = z.clone().qr();
        let r = qr.r();
        let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
        for j in 0..p {
            let diag = r[(j, j)].abs();
            if diag.is_nan() || diag <= RANK_TOL * scale {
                return Err(Error::SingularInformation { pivot: j });
            }
        }
        Ok(Projector { q: qr.q() })
    }

    pub fn n_points(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.q.ncols()
    }

    fn weigh(&self, d: &[f64]) -> Result<Weighted> {
        check_diagonal(d, self.n_points())?;
        let mut qd = self.q.clone();
        for (i, &w) in d.iter().enumerate() {
            qd.row_mut(i).scale_mut(w);
        }
        let mut w = self.q.transpose() * qd;
        symmetrize(&mut w);
        let winv = Cholesky::factor(&w)?.inverse();
        let y = &self.q * &winv;
        Ok(Weighted { y, winv })
    }

    /// `D Y`, whose Gram matrix `YᵀD²Y` shares the non-zero spectrum of `D R² D`.
    fn scaled(y: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
        let mut b = y.clone();
        for (i, &w) in d.iter().enumerate() {
            b.row_mut(i).scale_mut(w);
        }
        b
    }

    fn top_pair(&self, wt: &Weighted, d: &[f64]) -> Result<TopPair> {
        let b = Self::scaled(&wt.y, d);
        let mut s = b.transpose() * &b;
        symmetrize(&mut s);
        let eig = sym_top_eig(&s)?;
        let lambda = eig.lambda_max;
        let mut v1 = &b * &eig.v1;
        let norm = v1.norm();
        if norm > 0.0 {
            v1 /= norm;
        }
        orient(&mut v1);
        Ok(TopPair {
            lambda,
            v1,
            gap_ratio: eig.gap_ratio,
        })
    }

    fn ch_max_only(&self, wt: &Weighted, d: &[f64]) -> Result<(f64, f64)> {
        let b = Self::scaled(&wt.y, d);
        let mut s = b.transpose() * &b;
        symmetrize(&mut s);
        let eig = sym_top_eig(&s)?;
        Ok((eig.lambda_max, eig.gap_ratio))
    }

    /// `R v` without forming `R`.
    fn apply_r(&self, wt: &Weighted, v: &DVector<f64>) -> DVector<f64> {
        &wt.y * (self.q.transpose() * v)
    }

    /// `Ch_max(D R² D)` and `tr R` for the diagonal `d`.
    pub fn pattern_terms(&self, d: &[f64]) -> Result<PatternTerms> {
        let wt = self.weigh(d)?;
        let (ch_max, _) = self.ch_max_only(&wt, d)?;
        Ok(PatternTerms {
            ch_max,
            trace_r: wt.winv.trace(),
        })
    }

    /// Dense `R` for diagonal `d`.
    pub fn hat_matrix(&self, d: &[f64]) -> Result<DMatrix<f64>> {
        let wt = self.weigh(d)?;
        let mut r = &wt.y * self.q.transpose();
        symmetrize(&mut r);
        Ok(r)
    }

    /// Dense `D R² D` and `tr R` for diagonal `d`.
    fn bias_matrix(&self, d: &[f64]) -> Result<(DMatrix<f64>, f64)> {
        let wt = self.weigh(d)?;
        let b = Self::scaled(&wt.y, d);
        let mut m = &b * b.transpose();
        symmetrize(&mut m);
        Ok((m, wt.winv.trace()))
    }

    /// `2·((I − R D) v₁ v₁ᵀ R)_ii` for every point.
    pub fn correction_sensitivity(&self, d: &[f64]) -> Result<Vec<f64>> {
        let wt = self.weigh(d)?;
        let top = self.top_pair(&wt, d)?;
        Ok(self
            .correction_diag(&wt, d, &top.v1)
            .into_iter()
            .map(|a| 2.0 * a)
            .collect())
    }

    /// Exact gradient of `Ch_max(D R² D)` with respect to each diagonal entry of `D`.
    ///
    /// Equals `λ₁` times [`Projector::correction_sensitivity`].
    pub fn ch_max_gradient(&self, d: &[f64]) -> Result<Vec<f64>> {
        let wt = self.weigh(d)?;
        let top = self.top_pair(&wt, d)?;
        Ok(self
            .correction_diag(&wt, d, &top.v1)
            .into_iter()
            .map(|a| 2.0 * top.lambda * a)
            .collect())
    }

    /// Diagonal of `A = (I − R D) v₁ v₁ᵀ R`.
    fn correction_diag(&self, wt: &Weighted, d: &[f64], v1: &DVector<f64>) -> Vec<f64> {
        let rv = self.apply_r(wt, v1);
        let dv = DVector::from_iterator(d.len(), v1.iter().zip(d).map(|(v, w)| v * w));
        let rdv = self.apply_r(wt, &dv);
        (0..d.len()).map(|i| (v1[i] - rdv[i]) * rv[i]).collect()
    }

    /// Taylor criterion at the continuous design `design`.
    pub fn taylor(
        &self,
        design: &Design,
        probs: &[f64],
        params: RobustnessParams,
        variant: Variant,
    ) -> Result<LossReport> {
        let n_pts = self.n_points();
        if design.len() != n_pts {
            return Err(Error::invalid(format!(
                "design has {} weights for {n_pts} points",
                design.len()
            )));
        }
        check_probs(probs, n_pts)?;
        let d = design.scaled_counts();
        let wt = self.weigh(&d)?;
        let top = self.top_pair(&wt, &d)?;
        let a_diag = self.correction_diag(&wt, &d, &top.v1);

        let big_n = n_pts as f64;
        let bias_scale = params.eta2() / (big_n * design.n() as f64);
        let var_scale = params.sigma2() / big_n;

        let mut ca = 0.0;
        let mut cr2 = 0.0;
        for i in 0..n_pts {
            let c = variant.correction_weight(d[i], probs[i]);
            if c == 0.0 {
                continue;
            }
            let r2_ii = wt.y.row(i).norm_squared();
            ca += c * a_diag[i];
            cr2 += c * r2_ii;
        }
        Ok(LossReport::from_terms(
            bias_scale * top.lambda,
            var_scale * wt.winv.trace(),
            bias_scale,
            -2.0 * bias_scale * ca,
            var_scale * cr2,
            variant,
            top.gap_ratio,
        ))
    }
}

/// Maximized MMPE for one realized pattern:
/// `(η²/(Nn))·(Ch_max(D R² D) + 1) + (σ²/N)·tr R` with `D = diag(k)`.
pub fn mmpe_max_given_pattern(
    z: &DMatrix<f64>,
    pattern: &MissingPattern,
    params: RobustnessParams,
    n: usize,
) -> Result<f64> {
    let proj = Projector::new(z)?;
    let terms = proj.pattern_terms(&pattern.diagonal())?;
    Ok(pattern_value(terms, params, z.nrows(), n))
}

fn pattern_value(t: PatternTerms, params: RobustnessParams, big_n: usize, n: usize) -> f64 {
    let a = params.eta2() / (big_n as f64 * n as f64);
    a * t.ch_max + a + params.sigma2() / big_n as f64 * t.trace_r
}

/// How the expectation over missing patterns is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "snake_case"))]
pub enum ExpectationMode {
    /// Every count vector, weighted by its product-binomial probability.
    Enumerate,
    /// `reps` seeded draws of the observed counts.
    MonteCarlo { reps: usize, seed: u64 },
}

/// Mean with its Monte-Carlo standard error (zero for enumeration).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Expected maximized MMPE with its two random ingredients.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpectedMmpe {
    pub value: Estimate,
    pub ch_max: Estimate,
    pub trace_r: Estimate,
    /// Probability mass (enumeration) or fraction of draws (Monte Carlo) that were singular.
    pub singular_fraction: f64,
    pub patterns: usize,
}

struct Partial {
    moments: Moments,
    singular_weight: f64,
    singular: usize,
    visited_weight: f64,
}

/// Pattern expectation of `eval(diag(k))` over observed counts `k`.
struct PatternSummary {
    moments: Moments,
    singular_fraction: f64,
    monte_carlo: bool,
}

impl PatternSummary {
    fn estimate(&self, k: usize) -> Estimate {
        Estimate {
            mean: self.moments.mean[k],
            std_error: if self.monte_carlo {
                self.moments.std_error(k)
            } else {
                0.0
            },
        }
    }
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut coef = 1.0f64;
    (0..=n)
        .map(|k| {
            if k > 0 {
                coef = coef * (n - k + 1) as f64 / k as f64;
            }
            coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
        })
        .collect()
}

/// Number of count vectors enumerated for replicate counts `counts`.
pub fn pattern_count(counts: &[usize]) -> Option<u128> {
    counts.iter().try_fold(1u128, |acc, &c| acc.checked_mul(c as u128 + 1))
}

fn pattern_expectation<E, F>(
    counts: &[usize],
    probs: &[f64],
    mode: ExpectationMode,
    width: usize,
    exec: &E,
    eval: F,
) -> Result<PatternSummary>
where
    E: Executor,
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync + Send,
{
    check_probs(probs, counts.len())?;
    let accumulate = |partial: &mut Partial, w: f64, diag: &[f64]| -> Result<()> {
        partial.visited_weight += w;
        match eval(diag) {
            Ok(x) => {
                partial.moments.push(w, &x);
                Ok(())
            }
            Err(Error::SingularInformation { .. }) => {
                partial.singular_weight += w;
                partial.singular += 1;
                Ok(())
            }
            Err(e) => Err(e),
        }
    };
    let new_partial = || Partial {
        moments: Moments::new(width),
        singular_weight: 0.0,
        singular: 0,
        visited_weight: 0.0,
    };

    let (partials, monte_carlo, total_jobs) = match mode {
        ExpectationMode::Enumerate => {
            let total = match pattern_count(counts) {
                Some(t) if t <= ENUMERATION_LIMIT => t as usize,
                Some(t) => {
                    return Err(Error::EnumerationTooLarge {
                        patterns: t,
                        limit: ENUMERATION_LIMIT,
                    })
                }
                None => {
                    return Err(Error::EnumerationTooLarge {
                        patterns: u128::MAX,
                        limit: ENUMERATION_LIMIT,
                    })
                }
            };
            let pmfs: Vec<Vec<f64>> = counts.iter().zip(probs).map(|(&c, &p)| binomial_pmf(c, p)).collect();
            let chunks = total.div_ceil(CHUNK);
            let partials = exec.map(chunks, |c| -> Result<Partial> {
                let mut partial = new_partial();
                let mut diag = vec![0.0; counts.len()];
                for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                    let mut rest = idx;
                    let mut w = 1.0;
                    for (i, &ni) in counts.iter().enumerate() {
                        let k = rest % (ni + 1);
                        rest /= ni + 1;
                        diag[i] = k as f64;
                        w *= pmfs[i][k];
                    }
                    if w > 0.0 {
                        accumulate(&mut partial, w, &diag)?;
                    }
                }
                Ok(partial)
            });
            (partials, false, total)
        }
        ExpectationMode::MonteCarlo { reps, seed } => {
            if reps == 0 {
                return Err(Error::invalid("Monte Carlo needs at least one replicate"));
            }
            let chunks = reps.div_ceil(CHUNK);
            let partials = exec.map(chunks, |c| -> Result<Partial> {
                let mut partial = new_partial();
                let mut diag = vec![0.0; counts.len()];
                for rep in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                    let mut rng = job_rng(seed, rep as u64);
                    for (i, (&ni, &p)) in counts.iter().zip(probs).enumerate() {
                        let k = (0..ni).filter(|_| rng.random::<f64>() < p).count();
                        diag[i] = k as f64;
                    }
                    accumulate(&mut partial, 1.0, &diag)?;
                }
                Ok(partial)
            });
            (partials, true, reps)
        }
    };

    let mut moments = Moments::new(width);
    let mut singular_weight = 0.0;
    let mut singular = 0usize;
    let mut visited = 0.0;
    for p in partials {
        let p = p?;
        moments.merge(&p.moments);
        singular_weight += p.singular_weight;
        singular += p.singular;
        visited += p.visited_weight;
    }
    if moments.weight == 0.0 {
        return Err(Error::AllPatternsSingular);
    }
    if monte_carlo && 2 * singular > total_jobs {
        return Err(Error::TooManySingular {
            singular,
            total: total_jobs,
        });
    }
    let singular_fraction = singular_weight / visited;
    if singular_fraction > 0.0 {
        log::debug!("conditioning on nonsingular patterns; singular mass {singular_fraction:e}");
    }
    Ok(PatternSummary {
        moments,
        singular_fraction,
        monte_carlo,
    })
}

/// `E_M[(η²/(Nn))(Ch_max(D_M R_M² D_M) + 1) + (σ²/N) tr R_M]` over patterns
/// drawn from the replicate counts `counts`, conditioned on a nonsingular fit.
pub fn expected_mmpe_max<E: Executor>(
    z: &DMatrix<f64>,
    counts: &[usize],
    probs: &[f64],
    params: RobustnessParams,
    mode: ExpectationMode,
    exec: &E,
) -> Result<ExpectedMmpe> {
    if counts.len() != z.nrows() {
        return Err(Error::invalid("one replicate count per design point required"));
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::invalid("replicate counts are all zero"));
    }
    let proj = Projector::new(z)?;
    let big_n = z.nrows();
    let summary = pattern_expectation(counts, probs, mode, 3, exec, |diag| {
        let t = proj.pattern_terms(diag)?;
        Ok(vec![t.ch_max, t.trace_r, pattern_value(t, params, big_n, n)])
    })?;
    Ok(ExpectedMmpe {
        value: summary.estimate(2),
        ch_max: summary.estimate(0),
        trace_r: summary.estimate(1),
        singular_fraction: summary.singular_fraction,
        patterns: summary.moments.count,
    })
}

/// Replicate counts `round(n ξ_i)`.
pub fn rounded_counts(design: &Design) -> Vec<usize> {
    design.scaled_counts().iter().map(|v| v.round() as usize).collect()
}

/// Taylor criterion for a linear model or any fixed design matrix.
pub fn taylor_loss(
    z: &DMatrix<f64>,
    design: &Design,
    probs: &[f64],
    params: RobustnessParams,
    variant: Variant,
) -> Result<LossReport> {
    Projector::new(z)?.taylor(design, probs, params, variant)
}

/// Taylor criterion with `Z` replaced by the Jacobian `Z(β)`.
pub fn nonlinear_taylor_loss(
    model: &NonlinearModel,
    space: &DesignSpace,
    beta: &[f64],
    design: &Design,
    probs: &[f64],
    params: RobustnessParams,
    variant: Variant,
) -> Result<LossReport> {
    let z = design_matrix(&ModelSpec::Nonlinear(model.clone()), space, Some(beta))?;
    taylor_loss(&z, design, probs, params, variant)
}

#[derive(Debug, Clone)]
struct BayesNode {
    beta: Vec<f64>,
    weight: f64,
    proj: Projector,
}

/// Prior-averaged Taylor criterion with the Jacobian basis cached per node.
#[derive(Debug, Clone)]
pub struct BayesianCriterion {
    nodes: Vec<BayesNode>,
    weight_sum: f64,
}

impl BayesianCriterion {
    /// One rule per parameter; nodes form their tensor product.
    pub fn new(model: &NonlinearModel, space: &DesignSpace, rules: &[QuadratureRule]) -> Result<Self> {
        if rules.len() != model.n_params() {
            return Err(Error::invalid(format!(
                "{} quadrature rules for {} parameters",
                rules.len(),
                model.n_params()
            )));
        }
        let spec = ModelSpec::Nonlinear(model.clone());
        let mut nodes = Vec::new();
        for (k, (t, weight)) in tensor_product(rules).into_iter().enumerate() {
            let beta = model.transform().apply(&t);
            let proj = design_matrix(&spec, space, Some(&beta)).and_then(|z| Projector::new(&z));
            match proj {
                Ok(proj) => nodes.push(BayesNode { beta, weight, proj }),
                Err(e) => {
                    return Err(Error::QuadratureNode {
                        node: k,
                        beta,
                        source: alloc::boxed::Box::new(e),
                    })
                }
            }
        }
        let weight_sum = nodes.iter().map(|n| n.weight).sum();
        Ok(BayesianCriterion { nodes, weight_sum })
    }

    /// Rules built from the model's own priors with `k` nodes per coordinate.
    pub fn from_priors(model: &NonlinearModel, space: &DesignSpace, k: usize) -> Result<Self> {
        let rules = model
            .priors()
            .iter()
            .map(|&p| quadrature_rule(p, k))
            .collect::<Result<Vec<_>>>()?;
        Self::new(model, space, &rules)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameter vector at node `k`.
    pub fn node_beta(&self, k: usize) -> &[f64] {
        &self.nodes[k].beta
    }

    /// Weighted average of each loss term over the nodes.
    ///
    /// `eig_gap_ratio` is the smallest gap seen at any node.
    pub fn evaluate<E: Executor>(
        &self,
        design: &Design,
        probs: &[f64],
        params: RobustnessParams,
        variant: Variant,
        exec: &E,
    ) -> Result<LossReport> {
        let reports = exec.map(self.nodes.len(), |k| {
            let node = &self.nodes[k];
            node.proj
                .taylor(design, probs, params, variant)
                .map_err(|e| Error::QuadratureNode {
                    node: k,
                    beta: node.beta.clone(),
                    source: alloc::boxed::Box::new(e),
                })
        });
        let mut acc = [0.0f64; 5];
        let mut gap = f64::INFINITY;
        for (node, report) in self.nodes.iter().zip(reports) {
            let r = report?;
            let w = node.weight;
            acc[0] += w * r.bias_eig_term;
            acc[1] += w * r.variance_term;
            acc[2] += w * r.constant_term;
            acc[3] += w * r.bias_correction;
            acc[4] += w * r.variance_correction;
            gap = gap.min(r.eig_gap_ratio);
        }
        let s = self.weight_sum;
        Ok(LossReport::from_terms(
            acc[0] / s,
            acc[1] / s,
            acc[2] / s,
            acc[3] / s,
            acc[4] / s,
            variant,
            gap,
        ))
    }
}

/// Prior-averaged nonlinear Taylor criterion, evaluated sequentially.
pub fn bayesian_loss(
    model: &NonlinearModel,
    space: &DesignSpace,
    design: &Design,
    probs: &[f64],
    params: RobustnessParams,
    rules: &[QuadratureRule],
    variant: Variant,
) -> Result<LossReport> {
    BayesianCriterion::new(model, space, rules)?.evaluate(design, probs, params, variant, &Sequential)
}

/// How [`worst_case_contamination`] treats the missing patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorstCaseMode {
    /// No missingness: `D_ξ R² D_ξ` at the continuous design.
    Plugin,
    /// Expectation over patterns of the rounded counts `round(n ξ_i)`.
    Expected(ExpectationMode),
}

/// Moments of the hat matrix over missing patterns.
#[derive(Debug, Clone)]
pub struct HatMoments {
    /// `E[D R² D]`.
    pub bias_matrix: DMatrix<f64>,
    pub trace_r: Estimate,
    pub ch_max: Estimate,
    pub singular_fraction: f64,
    pub n: usize,
}

/// `E[D R² D]`, `E tr R` and `E Ch_max(D R² D)` under `mode`.
pub fn hat_moments<E: Executor>(
    z: &DMatrix<f64>,
    design: &Design,
    probs: &[f64],
    mode: WorstCaseMode,
    exec: &E,
) -> Result<HatMoments> {
    let proj = Projector::new(z)?;
    let big_n = z.nrows();
    if design.len() != big_n {
        return Err(Error::invalid("design length differs from the design matrix"));
    }
    match mode {
        WorstCaseMode::Plugin => {
            let d = design.scaled_counts();
            let (m, tr) = proj.bias_matrix(&d)?;
            let ch = proj.pattern_terms(&d)?.ch_max;
            Ok(HatMoments {
                bias_matrix: m,
                trace_r: Estimate {
                    mean: tr,
                    std_error: 0.0,
                },
                ch_max: Estimate {
                    mean: ch,
                    std_error: 0.0,
                },
                singular_fraction: 0.0,
                n: design.n(),
            })
        }
        WorstCaseMode::Expected(em) => {
            let counts = rounded_counts(design);
            let n: usize = counts.iter().sum();
            if n == 0 {
                return Err(Error::invalid("rounded design has no replicates"));
            }
            let nn = big_n * big_n;
            let summary = pattern_expectation(&counts, probs, em, nn + 2, exec, |diag| {
                let (m, tr) = proj.bias_matrix(diag)?;
                let ch = proj.pattern_terms(diag)?.ch_max;
                let mut out = Vec::with_capacity(nn + 2);
                out.extend_from_slice(m.as_slice());
                out.push(tr);
                out.push(ch);
                Ok(out)
            })?;
            let mut m = DMatrix::from_column_slice(big_n, big_n, &summary.moments.mean[..nn]);
            symmetrize(&mut m);
            Ok(HatMoments {
                bias_matrix: m,
                trace_r: summary.estimate(nn),
                ch_max: summary.estimate(nn + 1),
                singular_fraction: summary.singular_fraction,
                n,
            })
        }
    }
}

/// `(1/(Nn)) Ψᵀ(E[D R² D] + I)Ψ + (σ²/N) E tr R` for a contamination `psi`.
pub fn contaminated_mmpe(moments: &HatMoments, psi: &[f64], sigma2: f64) -> f64 {
    let big_n = moments.bias_matrix.nrows();
    let v = DVector::from_column_slice(psi);
    let quad = v.dot(&(&moments.bias_matrix * &v)) + v.norm_squared();
    quad / (big_n as f64 * moments.n as f64) + sigma2 / big_n as f64 * moments.trace_r.mean
}

/// Least-favorable contamination and the MMPE it attains.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorstCase {
    pub psi: Vec<f64>,
    /// MMPE attained by `psi`, maximized over the orthogonal complement of `Z`.
    pub value: f64,
    /// `(η²/(Nn))(E Ch_max(D R² D) + 1) + (σ²/N) E tr R`, the full-matrix bound.
    pub bound: f64,
    /// `N = p`: the only admissible contamination is zero.
    pub saturated: bool,
}

/// Maximizes the MMPE over contaminations `Ψ = K v`, `‖v‖ = η`, where `K`
/// spans the orthogonal complement of the columns of `z`.
pub fn worst_case_contamination<E: Executor>(
    z: &DMatrix<f64>,
    design: &Design,
    probs: &[f64],
    params: RobustnessParams,
    mode: WorstCaseMode,
    exec: &E,
) -> Result<WorstCase> {
    check_probs(probs, z.nrows())?;
    let moments = hat_moments(z, design, probs, mode, exec)?;
    let big_n = z.nrows() as f64;
    let scale = params.eta2() / (big_n * moments.n as f64);
    let variance = params.sigma2() / big_n * moments.trace_r.mean;
    let bound = scale * (moments.ch_max.mean + 1.0) + variance;
    let eta = params.eta2().sqrt();

    let k = orthonormal_complement(z);
    if k.ncols() == 0 {
        log::warn!("design matrix is square and nonsingular; the only admissible contamination is zero");
        return Ok(WorstCase {
            psi: vec![0.0; z.nrows()],
            value: variance,
            bound,
            saturated: true,
        });
    }
    let mut g = k.transpose() * &moments.bias_matrix * &k;
    for i in 0..g.nrows() {
        g[(i, i)] += 1.0;
    }
    symmetrize(&mut g);
    let top = sym_top_eig(&g)?;
    let psi = (&k * &top.v1) * eta;
    Ok(WorstCase {
        psi: psi.iter().copied().collect(),
        value: scale * top.lambda_max + variance,
        bound,
        saturated: false,
    })
}

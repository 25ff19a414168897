//! Problem statement: candidate points, designs, regression models and the
//! MCAR retention mechanism.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // float math on no_std
use num_traits::Float;

use crate::error::{Error, Result};
use crate::numerics::quadrature::{quadrature_rule, Prior};

/// Tolerance on `Σ ξ_i = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Finite set of candidate covariate vectors.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DesignSpace {
    points: Vec<Vec<f64>>,
}

impl DesignSpace {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("design space needs at least one point"))?;
        let q = first.len();
        if q == 0 {
            return Err(Error::invalid("design points must have at least one coordinate"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != q {
                return Err(Error::invalid(format!(
                    "point {i} has dimension {} but point 0 has {q}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a]
                .iter()
                .zip(&points[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(core::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if points[w[0]] == points[w[1]] {
                return Err(Error::invalid(format!(
                    "points {} and {} coincide",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        Ok(DesignSpace { points })
    }

    /// `count` equally spaced points on `[lo, hi]`, endpoints included.
    pub fn grid_1d(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::grid(&[(lo, hi, count)])
    }

    /// Cartesian grid; the last axis varies fastest.
    pub fn grid(axes: &[(f64, f64, usize)]) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("grid needs at least one axis"));
        }
        let mut coords: Vec<Vec<f64>> = Vec::new();
        for &(lo, hi, count) in axes {
            if count == 0 || !(lo.is_finite() && hi.is_finite()) || (count > 1 && hi <= lo) {
                return Err(Error::invalid("grid axis needs finite lo < hi and count >= 1"));
            }
            let c = (0..count)
                .map(|i| {
                    if count == 1 {
                        lo
                    } else {
                        lo + (hi - lo) * i as f64 / (count - 1) as f64
                    }
                })
                .collect();
            coords.push(c);
        }
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &coords {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            points = next;
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Continuous design: probability weights on the candidate points plus the total sample size.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Design {
    weights: Vec<f64>,
    n: usize,
}

impl Design {
    pub fn new(weights: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample size n must be positive"));
        }
        if weights.is_empty() {
            return Err(Error::invalid("design needs at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("design weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("design weights sum to {total}, not 1")));
        }
        Ok(Design { weights, n })
    }

    /// Normalizes non-negative masses onto the simplex; all-zero input maps to uniform.
    pub fn from_masses(masses: &[f64], n: usize) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        let weights = if total > 0.0 {
            masses.iter().map(|m| m / total).collect()
        } else {
            vec![1.0 / masses.len() as f64; masses.len()]
        };
        Self::new(weights, n)
    }

    pub fn uniform(size: usize, n: usize) -> Result<Self> {
        Self::from_masses(&vec![1.0; size], n)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Diagonal of `D_ξ = diag(n ξ)`.
    pub fn scaled_counts(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.weights.iter().map(|w| n * w).collect()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    /// Zeroes weights below `floor` and renormalizes.
    pub fn truncated(&self, floor: f64) -> Result<Self> {
        let kept: Vec<f64> = self.weights.iter().map(|&w| if w < floor { 0.0 } else { w }).collect();
        if kept.iter().all(|&w| w == 0.0) {
            return Ok(self.clone());
        }
        Self::from_masses(&kept, self.n)
    }
}

/// Integer replicate counts summing to `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExactDesign {
    counts: Vec<usize>,
}

impl ExactDesign {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() || counts.iter().all(|&c| c == 0) {
            return Err(Error::invalid("exact design needs at least one replicate"));
        }
        Ok(ExactDesign { counts })
    }

    /// Checks `support(counts) ⊆ support(parent)` and the sample size.
    pub fn new_for(counts: Vec<usize>, parent: &Design) -> Result<Self> {
        if counts.len() != parent.len() {
            return Err(Error::invalid("exact design length differs from its parent"));
        }
        if counts.iter().sum::<usize>() != parent.n() {
            return Err(Error::invalid("exact design counts do not sum to n"));
        }
        for (i, (&c, &w)) in counts.iter().zip(parent.weights()).enumerate() {
            if c > 0 && w == 0.0 {
                return Err(Error::invalid(format!(
                    "point {i} has replicates but zero design weight"
                )));
            }
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn to_design(&self) -> Design {
        let n = self.n();
        let weights = self.counts.iter().map(|&c| c as f64 / n as f64).collect();
        Design { weights, n }
    }
}

/// Realized number of observed responses at each point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingPattern {
    observed: Vec<usize>,
}

impl MissingPattern {
    pub fn new(observed: Vec<usize>, exact: &ExactDesign) -> Result<Self> {
        if observed.len() != exact.len() {
            return Err(Error::invalid("pattern length differs from the design"));
        }
        if observed.iter().zip(exact.counts()).any(|(k, n)| k > n) {
            return Err(Error::invalid("observed count exceeds replicate count"));
        }
        Ok(MissingPattern { observed })
    }

    /// Every response observed.
    pub fn complete(exact: &ExactDesign) -> Self {
        MissingPattern {
            observed: exact.counts().to_vec(),
        }
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Diagonal of `D_ξM`.
    pub fn diagonal(&self) -> Vec<f64> {
        self.observed.iter().map(|&k| k as f64).collect()
    }
}

/// Logistic retention probability `exp(η)/(1+exp(η))`, `η = γ₀ + γᵀx`.
pub fn retention_probability(x: &[f64], gamma: &[f64]) -> Result<f64> {
    if gamma.len() != x.len() + 1 {
        return Err(Error::invalid(format!(
            "gamma has {} entries; expected intercept plus {} slopes",
            gamma.len(),
            x.len()
        )));
    }
    if x.iter().chain(gamma).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite covariate or gamma"));
    }
    let eta = gamma[0] + x.iter().zip(&gamma[1..]).map(|(a, b)| a * b).sum::<f64>();
    Ok(if eta < 0.0 {
        let e = eta.exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + (-eta).exp())
    })
}

/// Logistic MCAR mechanism with intercept `γ₀` and one slope per covariate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MissingnessModel {
    gamma: Vec<f64>,
}

impl MissingnessModel {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() || gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("gamma must be non-empty and finite"));
        }
        Ok(MissingnessModel { gamma })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Diagonal of `P`: `p(x_i, γ)` for every candidate point.
    ///
    /// Fails unless every probability lies strictly inside (0, 1).
    pub fn probabilities(&self, space: &DesignSpace) -> Result<Vec<f64>> {
        space
            .points()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let p = retention_probability(x, &self.gamma)?;
                if p > 0.0 && p < 1.0 {
                    Ok(p)
                } else {
                    Err(Error::invalid(format!(
                        "retention probability at point {i} rounds to {p}"
                    )))
                }
            })
            .collect()
    }
}

/// Neighborhood radius `η²` and error variance `σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustnessParams {
    eta2: f64,
    sigma2: f64,
}

impl RobustnessParams {
    pub fn new(eta2: f64, sigma2: f64) -> Result<Self> {
        if !(eta2.is_finite() && eta2 >= 0.0) {
            return Err(Error::invalid("eta2 must be finite and >= 0"));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::invalid("sigma2 must be finite and > 0"));
        }
        Ok(RobustnessParams { eta2, sigma2 })
    }

    /// Skips validation; the oracle tests use `σ² = 0`.
    pub fn new_unchecked(eta2: f64, sigma2: f64) -> Self {
        RobustnessParams { eta2, sigma2 }
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

pub type BasisTerm = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Regressors `z(x)` of a linear model.
#[derive(Clone)]
pub struct LinearBasis {
    name: String,
    terms: Vec<BasisTerm>,
}

impl core::fmt::Debug for LinearBasis {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LinearBasis")
            .field("name", &self.name)
            .field("terms", &self.terms.len())
            .finish()
    }
}

impl LinearBasis {
    pub fn new(name: impl Into<String>, terms: Vec<BasisTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("basis needs at least one term"));
        }
        Ok(LinearBasis {
            name: name.into(),
            terms,
        })
    }

    /// `1, x, …, x^degree` in the first coordinate.
    pub fn polynomial(degree: usize) -> Self {
        let terms = (0..=degree)
            .map(|k| Arc::new(move |x: &[f64]| x[0].powi(k as i32)) as BasisTerm)
            .collect();
        LinearBasis {
            name: format!("polynomial{degree}"),
            terms,
        }
    }

    /// `1, x₁, x₂, x₁x₂, x₁², x₂²`.
    pub fn full_quadratic_2d() -> Self {
        let terms: Vec<BasisTerm> = vec![
            Arc::new(|_: &[f64]| 1.0),
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|x: &[f64]| x[1]),
            Arc::new(|x: &[f64]| x[0] * x[1]),
            Arc::new(|x: &[f64]| x[0] * x[0]),
            Arc::new(|x: &[f64]| x[1] * x[1]),
        ];
        LinearBasis {
            name: "full_quadratic_2d".into(),
            terms,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t(x);
        }
    }
}

/// Mean response `f(x; β)` with its analytic gradient in `β`.
pub trait Response: Send + Sync {
    fn n_params(&self) -> usize;
    fn value(&self, x: &[f64], beta: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], beta: &[f64], out: &mut [f64]);
}

/// `f(x; β) = β₀ exp(β₁ x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exponential;

impl Response for Exponential {
    fn n_params(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64], beta: &[f64]) -> f64 {
        beta[0] * (beta[1] * x[0]).exp()
    }

    fn gradient(&self, x: &[f64], beta: &[f64], out: &mut [f64]) {
        let e = (beta[1] * x[0]).exp();
        out[0] = e;
        out[1] = beta[0] * x[0] * e;
    }
}

/// `f(x; β) = z(x)ᵀβ` viewed through the nonlinear interface.
#[derive(Debug, Clone)]
pub struct LinearResponse(pub LinearBasis);

impl Response for LinearResponse {
    fn n_params(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &[f64], beta: &[f64]) -> f64 {
        let mut z = vec![0.0; self.0.dim()];
        self.0.eval_into(x, &mut z);
        z.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, x: &[f64], _beta: &[f64], out: &mut [f64]) {
        self.0.eval_into(x, out);
    }
}

/// Affine map from the unit cube to parameters: `β_j = offset_j + scale_j · t_j`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamTransform {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ParamTransform {
    pub fn new(offset: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if offset.len() != scale.len() || offset.is_empty() {
            return Err(Error::invalid(
                "transform offset and scale must have equal, non-zero length",
            ));
        }
        if offset.iter().chain(&scale).any(|v| !v.is_finite()) {
            return Err(Error::invalid("transform coefficients must be finite"));
        }
        Ok(ParamTransform { offset, scale })
    }

    /// `β₀ = 57(t₁ + 0.5)`, `β₁ = −(t₂ + 0.5)/25`.
    pub fn recovery_example() -> Self {
        ParamTransform {
            offset: vec![28.5, -0.02],
            scale: vec![57.0, -0.04],
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, t: &[f64]) -> Vec<f64> {
        self.offset
            .iter()
            .zip(&self.scale)
            .zip(t)
            .map(|((o, s), t)| o + s * t)
            .collect()
    }
}

/// Nonlinear model with parameter priors on the unit cube.
#[derive(Clone)]
pub struct NonlinearModel {
    name: String,
    response: Arc<dyn Response>,
    transform: ParamTransform,
    priors: Vec<Prior>,
}

impl core::fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("name", &self.name)
            .field("transform", &self.transform)
            .field("priors", &self.priors)
            .finish()
    }
}

/// Node count used to check that prior densities integrate to one.
const PRIOR_CHECK_NODES: usize = 200;

impl NonlinearModel {
    pub fn new(
        name: impl Into<String>,
        response: Arc<dyn Response>,
        transform: ParamTransform,
        priors: Vec<Prior>,
    ) -> Result<Self> {
        let p = response.n_params();
        if transform.dim() != p || priors.len() != p {
            return Err(Error::invalid(format!(
                "model has {p} parameters but transform has {} and priors {}",
                transform.dim(),
                priors.len()
            )));
        }
        for (j, prior) in priors.iter().enumerate() {
            let rule = quadrature_rule(*prior, PRIOR_CHECK_NODES)?;
            let mass = rule.mass();
            if (mass - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(format!("prior {j} integrates to {mass}, not 1")));
            }
        }
        Ok(NonlinearModel {
            name: name.into(),
            response,
            transform,
            priors,
        })
    }

    pub fn exponential(priors: Vec<Prior>) -> Result<Self> {
        Self::new(
            "exponential",
            Arc::new(Exponential),
            ParamTransform::recovery_example(),
            priors,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn response(&self) -> &dyn Response {
        &*self.response
    }

    pub fn transform(&self) -> &ParamTransform {
        &self.transform
    }

    pub fn priors(&self) -> &[Prior] {
        &self.priors
    }

    pub fn n_params(&self) -> usize {
        self.response.n_params()
    }

    /// Parameter at the centre of the unit cube.
    pub fn nominal_beta(&self) -> Vec<f64> {
        self.transform.apply(&vec![0.5; self.n_params()])
    }
}

/// Either a linear basis or a nonlinear response.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Linear(LinearBasis),
    Nonlinear(NonlinearModel),
}

impl ModelSpec {
    pub fn n_params(&self) -> usize {
        match self {
            ModelSpec::Linear(b) => b.dim(),
            ModelSpec::Nonlinear(m) => m.n_params(),
        }
    }

    /// Checks `p ≤ N` and that the regressors are finite on the space.
    pub fn validate(&self, space: &DesignSpace) -> Result<()> {
        let p = self.n_params();
        if p > space.len() {
            return Err(Error::invalid(format!(
                "model has {p} parameters but the space has only {} points",
                space.len()
            )));
        }
        let beta = match self {
            ModelSpec::Linear(_) => None,
            ModelSpec::Nonlinear(m) => Some(m.nominal_beta()),
        };
        design_matrix(self, space, beta.as_deref()).map(|_| ())
    }

    pub fn mean(&self, x: &[f64], beta: &[f64]) -> f64 {
        match self {
            ModelSpec::Linear(b) => LinearResponse(b.clone()).value(x, beta),
            ModelSpec::Nonlinear(m) => m.response.value(x, beta),
        }
    }
}

fn response_matrix(response: &dyn Response, space: &DesignSpace, beta: &[f64]) -> Result<DMatrix<f64>> {
    let n = space.len();
    let p = response.n_params();
    if beta.len() != p || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta must be finite with one entry per parameter"));
    }
    let mut z = DMatrix::<f64>::zeros(n, p);
    let mut row = vec![0.0; p];
    for (i, x) in space.points().iter().enumerate() {
        response.gradient(x, beta, &mut row);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation { index: i });
        }
        for (j, v) in row.iter().enumerate() {
            z[(i, j)] = *v;
        }
    }
    Ok(z)
}

/// `Z` (linear) or `Z(β)` (nonlinear): row `i` is `z(x_i)` or `∂f(x_i; β)/∂β`.
pub fn design_matrix(model: &ModelSpec, space: &DesignSpace, beta: Option<&[f64]>) -> Result<DMatrix<f64>> {
    match model {
        ModelSpec::Linear(basis) => {
            let n = space.len();
            let p = basis.dim();
            let mut z = DMatrix::<f64>::zeros(n, p);
            let mut row = vec![0.0; p];
            for (i, x) in space.points().iter().enumerate() {
                basis.eval_into(x, &mut row);
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ModelEvaluation { index: i });
                }
                for (j, v) in row.iter().enumerate() {
                    z[(i, j)] = *v;
                }
            }
            Ok(z)
        }
        ModelSpec::Nonlinear(m) => {
            let beta = beta.ok_or_else(|| Error::invalid("nonlinear model needs beta"))?;
            response_matrix(&*m.response, space, beta)
        }
    }
}

/// Jacobian of an arbitrary response, for models not wrapped in [`ModelSpec`].
pub fn response_design_matrix(response: &dyn Response, space: &DesignSpace, beta: &[f64]) -> Result<DMatrix<f64>> {
    response_matrix(response, space, beta)
}

/// Largest relative deviation between analytic gradients and central
/// differences with step `1e-6·(1 + |β_j|)`.
///
/// Entries are compared relative to the largest magnitude in their column.
pub fn jacobian_check(response: &dyn Response, beta: &[f64], space: &DesignSpace) -> f64 {
    let p = response.n_params();
    let mut analytic = vec![0.0; p];
    let mut worst = 0.0f64;
    let mut col_scale = vec![0.0f64; p];
    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(space.len());
    for x in space.points() {
        response.gradient(x, beta, &mut analytic);
        let mut numeric = vec![0.0; p];
        let mut b = beta.to_vec();
        for j in 0..p {
            let h = 1e-6 * (1.0 + beta[j].abs());
            b[j] = beta[j] + h;
            let up = response.value(x, &b);
            b[j] = beta[j] - h;
            let down = response.value(x, &b);
            b[j] = beta[j];
            numeric[j] = (up - down) / (2.0 * h);
        }
        for j in 0..p {
            col_scale[j] = col_scale[j].max(analytic[j].abs()).max(numeric[j].abs());
        }
        rows.push((analytic.clone(), numeric));
    }
    for (a, num) in &rows {
        for j in 0..p {
            let scale = col_scale[j].max(f64::MIN_POSITIVE);
            let dev = (a[j] - num[j]).abs() / scale;
            if !dev.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(dev);
        }
    }
    worst
}

/// Boxed response for callers building models at runtime.
pub fn boxed<R: Response + 'static>(r: R) -> Arc<dyn Response> {
    Arc::new(r)
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<ModelSpec>();
    check::<Box<dyn Response>>();
}

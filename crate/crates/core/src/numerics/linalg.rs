//! Dense kernels for the small symmetric problems the criteria reduce to.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR, SVD};
#[allow(unused_imports)] // float math on no_std
use num_traits::Float;

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Cholesky factorization is rejected.
pub const SINGULAR_EPS: f64 = 1e-12;
/// Relative asymmetry tolerated by the symmetric kernels.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Top-eigenvalue gap ratio below which the eigenvector is considered ambiguous.
pub const DEGENERATE_GAP: f64 = 1e-8;
/// Largest matrix handled by a full eigendecomposition in [`sym_top_eig`].
pub const DENSE_EIG_LIMIT: usize = 512;

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Largest `|a_ij - a_ji|` relative to the largest entry.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

fn check_square_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("matrix must be square"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let asym = asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric positive-definite matrix. Only the lower triangle is read.
    ///
    /// A pivot `d_j` is rejected when `d_j <= SINGULAR_EPS * trace(A) / p`.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let p = a.nrows();
        if p == 0 || a.ncols() != p {
            return Err(Error::invalid("Cholesky needs a non-empty square matrix"));
        }
        let trace: f64 = (0..p).map(|i| a[(i, i)]).sum();
        if !trace.is_finite() {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let floor = SINGULAR_EPS * trace.abs() / p as f64;
        let mut l = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d.is_nan() || d <= floor {
                return Err(Error::SingularInformation { pivot: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..p {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A X = B` in place by forward and back substitution.
    pub fn solve_mut(&self, b: &mut DMatrix<f64>) {
        let p = self.dim();
        let l = &self.l;
        for c in 0..b.ncols() {
            for i in 0..p {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
            for i in (0..p).rev() {
                let mut s = b[(i, c)];
                for k in (i + 1)..p {
                    s -= l[(k, i)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
        }
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_mut(&mut x);
        x
    }

    /// `A⁻¹`, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut inv = DMatrix::<f64>::identity(p, p);
        self.solve_mut(&mut inv);
        symmetrize(&mut inv);
        inv
    }
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Solves `A X = B` for symmetric positive-definite `A` without forming `A⁻¹`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_symmetric(a)?;
    if b.nrows() != a.nrows() {
        return Err(Error::invalid("right-hand side has the wrong number of rows"));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

/// Largest eigenpair of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTopEig {
    pub lambda_max: f64,
    pub v1: DVector<f64>,
    /// `(λ₁ − λ₂) / max(λ₁, ε)`; `1` when there is no second eigenvalue.
    pub gap_ratio: f64,
}

impl SymTopEig {
    pub fn is_degenerate(&self) -> bool {
        self.gap_ratio < DEGENERATE_GAP
    }
}

/// Flips `v` so that its largest-magnitude component (first one on ties) is non-negative.
pub fn orient(v: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut mag = -1.0f64;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > mag {
            mag = x.abs();
            best = i;
        }
    }
    if mag > 0.0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

pub(crate) fn gap_ratio(l1: f64, l2: Option<f64>) -> f64 {
    match l2 {
        None => 1.0,
        Some(l2) => (l1 - l2) / l1.max(f64::MIN_POSITIVE),
    }
}

/// Top eigenvalue and unit eigenvector of a symmetric matrix.
///
/// Uses a full symmetric eigendecomposition up to [`DENSE_EIG_LIMIT`] rows and
/// shifted power iteration above it.
pub fn sym_top_eig(a: &DMatrix<f64>) -> Result<SymTopEig> {
    check_square_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let out = if n <= DENSE_EIG_LIMIT {
        dense_top_eig(a.clone())
    } else {
        power_top_eig(a)
    };
    if out.is_degenerate() {
        log::debug!(
            "top eigenvalue is not simple (gap ratio {:e}); eigenvector fixed by sign convention",
            out.gap_ratio
        );
    }
    Ok(out)
}

pub(crate) fn dense_top_eig(a: DMatrix<f64>) -> SymTopEig {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = order[0];
    let l1 = eig.eigenvalues[top];
    let l2 = order.get(1).map(|&i| eig.eigenvalues[i]);
    let mut v1 = eig.eigenvectors.column(top).into_owned();
    let norm = v1.norm();
    v1 /= norm;
    orient(&mut v1);
    SymTopEig {
        lambda_max: l1,
        v1,
        gap_ratio: gap_ratio(l1, l2),
    }
}

fn power_iterate(a: &DMatrix<f64>, shift: f64, deflate: Option<(&DVector<f64>, f64)>) -> (f64, DVector<f64>) {
    let n = a.nrows();
    // Deterministic start that is unlikely to be orthogonal to the top eigenvector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    if let Some((u, _)) = deflate {
        let c = u.dot(&v);
        v.axpy(-c, u, 1.0);
    }
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut w = a * &v;
        w.axpy(shift, &v, 1.0);
        if let Some((u, mu)) = deflate {
            let c = u.dot(&v);
            w.axpy(-(mu + shift) * c, u, 1.0);
        }
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return (-shift, v);
        }
        w /= norm;
        let done = (next - lambda).abs() <= 1e-15 * next.abs().max(1.0) && (&w - &v).norm() < 1e-12;
        v = w;
        lambda = next;
        if done {
            break;
        }
    }
    (lambda - shift, v)
}

fn power_top_eig(a: &DMatrix<f64>) -> SymTopEig {
    let n = a.nrows();
    // Gershgorin bound: A + sI is positive semi-definite, so the dominant
    // eigenvalue of the shifted matrix is the algebraically largest of A.
    let shift = (0..n)
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let (l1, mut v1) = power_iterate(a, shift, None);
    let l2 = if n > 1 {
        Some(power_iterate(a, shift, Some((&v1, l1))).0)
    } else {
        None
    };
    orient(&mut v1);
    SymTopEig {
        lambda_max: l1,
        v1,
        gap_ratio: gap_ratio(l1, l2),
    }
}

/// Numerical rank of `z` at relative tolerance `1e-10·‖Z‖₂`.
pub fn numerical_rank(z: &DMatrix<f64>) -> usize {
    if z.ncols() == 0 || z.nrows() == 0 {
        return 0;
    }
    let svd = SVD::new(z.clone(), false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
}

/// Orthonormal basis `K` (N × (N − r)) of the orthogonal complement of the column space of `z`.
///
/// `r` is the numerical rank at tolerance `1e-10·‖Z‖₂`; a full-rank square
/// `z` yields an `N × 0` matrix.
pub fn orthonormal_complement(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    if z.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = SVD::new(z.clone(), true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let range: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > 1e-10 * smax)
        .collect();
    let r = range.len();
    if r >= n {
        return DMatrix::zeros(n, 0);
    }
    // Householder QR of [U_r | I]: the trailing N − r columns of the full Q
    // are orthonormal and orthogonal to the leading r, which span range(Z).
    let mut aug = DMatrix::<f64>::zeros(n, r + n);
    for (c, &i) in range.iter().enumerate() {
        aug.set_column(c, &u.column(i));
    }
    for i in 0..n {
        aug[(i, r + i)] = 1.0;
    }
    let q = QR::new(aug).q();
    q.columns(r, n - r).into_owned()
}

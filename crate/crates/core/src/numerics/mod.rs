//! Numerical kernels: SPD solves, top eigenpairs, orthogonal complements and
//! prior-weighted quadrature.

pub mod linalg;
pub mod quadrature;

pub use linalg::{numerical_rank, orthonormal_complement, spd_solve, sym_top_eig, Cholesky, SymTopEig};
pub use quadrature::{quadrature_rule, tensor_product, Prior, QuadratureRule};

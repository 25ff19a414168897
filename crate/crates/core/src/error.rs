use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised by the design kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// The weighted information matrix has no Cholesky factor; `pivot` is the
    /// first column whose pivot fell below the relative threshold.
    #[error("information matrix is singular at pivot {pivot}")]
    SingularInformation { pivot: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    /// The basis or Jacobian produced a non-finite value at design point `index`.
    #[error("model evaluation failed at design point {index}")]
    ModelEvaluation { index: usize },

    #[error("pattern enumeration needs {patterns} patterns (limit {limit})")]
    EnumerationTooLarge { patterns: u128, limit: u128 },

    #[error("every missingness pattern leaves the information matrix singular")]
    AllPatternsSingular,

    #[error("{singular} of {total} draws were singular; design is incompatible with the missingness model")]
    TooManySingular { singular: usize, total: usize },

    #[error("Gauss-Newton failed to converge in {failed} of {total} replicates")]
    NonConvergence { failed: usize, total: usize },

    #[error("criterion is infeasible for every particle of the initial swarm")]
    InfeasibleSwarm,

    #[error("quadrature node {node} (beta = {beta:?}): {source}")]
    QuadratureNode {
        node: usize,
        beta: alloc::vec::Vec<f64>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors that mean "this design cannot be fitted", which the
    /// optimizer treats as an infinitely bad candidate rather than a failure.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::SingularInformation { .. } => true,
            Error::QuadratureNode { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

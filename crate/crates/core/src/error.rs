use nalgebra::DVector;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration produced a non-finite state: {state:?}")]
    IntegrationBlowup { state: DVector<f64> },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("eigenvalue {index} is not simple at this state (gap {gap:e})")]
    NondifferentiablePoint { index: usize, gap: f64 },

    #[error(
        "a regularization matrix is required when the task dimension is below the input dimension"
    )]
    MissingRegularization,

    #[error("cost matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCost { min_eigenvalue: f64 },

    #[error("safety-filter QP is infeasible ({rows} constraint rows)")]
    QpInfeasible { rows: usize },

    #[error(
        "closed-form eigenvalues are only available for unit link lengths (l1 = {l1}, l2 = {l2})"
    )]
    UnsupportedParameters { l1: f64, l2: f64 },

    #[error("query point is within {distance:e} m of a dipole source")]
    TooCloseToSource { distance: f64 },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("triangle is degenerate (area {area:e})")]
    DegenerateTriangle { area: f64 },

    #[error("mesh has no component {0}")]
    UnknownComponent(usize),

    #[error("trajectory logs are not aligned: {0}")]
    MisalignedLogs(String),

    #[error("malformed grid field: {0}")]
    MalformedGrid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        })
    }
}

pub(crate) fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        })
    }
}

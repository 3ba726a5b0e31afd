use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid curvature bound {delta}: {reason}")]
    InvalidDelta { delta: f64, reason: &'static str },

    #[error("invalid ambient point: {0}")]
    InvalidPoint(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("frame is not orthonormal (Gram deviation {deviation:.3e})")]
    FrameNotOrthonormal { deviation: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate face {face}: {reason}")]
    DegenerateFace { face: usize, reason: String },

    #[error("mesh is disconnected ({components} components)")]
    DisconnectedMesh { components: usize },

    #[error("tensor is not symmetric positive definite at vertex {vertex} (min eigenvalue {min_eigenvalue:.3e})")]
    NonSpdTensor { vertex: usize, min_eigenvalue: f64 },

    #[error("underdetermined curvature fit at vertex {vertex}: {points} neighbours")]
    UnderdeterminedFit { vertex: usize, points: usize },

    #[error("tensor frame does not match the tangent plane at vertex {vertex}")]
    FrameMismatch { vertex: usize },

    #[error("surface is not convex at vertex {vertex}; Newton tensor loses definiteness")]
    NonConvex { vertex: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("interior stiffness block is singular; interior is disconnected from the boundary")]
    SingularInterior,

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

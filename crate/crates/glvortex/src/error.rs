use thiserror::Error;

/// Errors raised by the solvers and builders in this crate.
#[derive(Debug, Error)]
pub enum GlError {
    #[error("grid too coarse: spacing {spacing} exceeds {limit}")]
    GridTooCoarse { spacing: f64, limit: f64 },
    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("point at radius {radius} lies outside the profile domain (R_max = {r_max})")]
    OutOfDomain { radius: f64, r_max: f64 },
    #[error("pair does not decay at the boundary: boundary magnitude {magnitude:e}")]
    BoundaryLeak { magnitude: f64 },
    #[error("eigensolver failed after {iterations} iterations: {reason}")]
    EigsolverFailure { iterations: usize, reason: String },
    #[error("projected operator is singular (smallest value {value:e})")]
    SubspaceDeficient { value: f64 },
    #[error("point |y| = {radius} lies outside the Fermi tube of radius {tube}")]
    OutsideTube { radius: f64, tube: f64 },
    #[error("Jacobi operator is degenerate: smallest singular value {sigma:e}")]
    Degenerate { sigma: f64 },
    #[error("tube radius {tube} is narrower than the required {required}")]
    TubeTooNarrow { tube: f64, required: f64 },
    #[error("normal field too large: C^2 norm {norm} exceeds {limit}")]
    VTooLarge { norm: f64, limit: f64 },
    #[error("Gram matrix of slice {slice} is near singular (condition {condition:e})")]
    GramSingular { slice: usize, condition: f64 },
    #[error("Newton iteration diverged: residual trace {trace:?}")]
    NewtonDiverged { trace: Vec<f64> },
    #[error("projected residual stagnated at {residual:e} above tolerance {tol:e}")]
    ProjLoss { residual: f64, tol: f64 },
    #[error("Jacobi operator of the model is degenerate (smallest singular value {sigma:e})")]
    DegenerateJacobi { sigma: f64 },
    #[error("outer balancing iteration diverged: |B(v)| trace {trace:?}")]
    OuterDiverged { trace: Vec<f64> },
    #[error("patch radius {delta} outside the admissible range [{min}, {max}]")]
    PatchTooSmall { delta: f64, min: f64, max: f64 },
    #[error("linear solver failure: {0}")]
    LinearSolver(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GlError>;

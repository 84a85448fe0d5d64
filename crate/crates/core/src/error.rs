use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsoError {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("interpolation system is singular (condition number {condition:e}) for k={k}, degree={degree}")]
    SingularInterpolation { k: usize, degree: usize, condition: f64 },

    #[error("j-maps are not isospectral at z (canonical forms differ by {deviation:e})")]
    NotIsospectral { deviation: f64 },

    #[error("matrix is not orthogonal (|M^T M - I| = {residual:e})")]
    NotOrthogonal { residual: f64 },

    #[error("corrector failed to converge: {0}")]
    StepFailure(String),

    #[error("no isospectral deformation directions at this j-map (excess = 0)")]
    NoDeformation,

    #[error("genericity hypothesis fails: commutant dimension {0}")]
    NotGeneric(usize),

    #[error("no generic j-map found after {attempts} reseeds starting at seed {seed}")]
    GenericityUnobtainable { seed: u64, attempts: u32 },

    #[error("point outside chart domain: |p|^2 = {norm_sq}, limit {limit}")]
    ChartDomain { norm_sq: f64, limit: f64 },

    #[error("metric is near-singular (condition number {0:e})")]
    NearSingularMetric(f64),

    #[error("degenerate plane (Gram determinant {0:e})")]
    DegeneratePlane(f64),

    #[error("orbit is not principal at this point (Gram determinant {0:e})")]
    DegenerateOrbit(f64),

    #[error("non-positive scale factor {0}")]
    NonPositiveScale(f64),

    #[error("integrand is not torus-invariant (deviation {0:e})")]
    InvariantViolation(f64),

    #[error("curvature numerics flagged at {count} of {total} points (Bianchi residual above {tolerance:e})")]
    CurvatureFlagged { count: usize, total: usize, tolerance: f64 },

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Io(String),

    #[error("integrity check failed for {path}: {detail}")]
    Integrity { path: String, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, IsoError>;

impl From<std::io::Error> for IsoError {
    fn from(e: std::io::Error) -> Self {
        IsoError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for IsoError {
    fn from(e: serde_json::Error) -> Self {
        IsoError::Io(format!("json: {e}"))
    }
}

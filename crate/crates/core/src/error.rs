use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("branch points {0} and {1} coincide")]
    DuplicateBranchPoint(usize, usize),
    #[error("hyperelliptic curves need an even number of branch points, got {0}")]
    OddPointCount(usize),
    #[error("at least 4 branch points are required, got {0}")]
    TooFewPoints(usize),
    #[error("{points} branch points cannot carry a {degree}-sheeted cyclic cover")]
    DegreeMismatch { points: usize, degree: usize },
    #[error("path passes within {distance:.3e} of branch point {index}")]
    PathTooCloseToBranchPoint { index: usize, distance: f64 },
    #[error("analytic continuation ambiguous near lambda = {0}")]
    ContinuationAmbiguous(String),
    #[error("branch points do not form a simple chain; cannot draw the cycle basis")]
    UnsupportedCutLayout,
    #[error("quadrature did not converge (estimated error {0:.3e})")]
    QuadratureNotConverged(f64),
    #[error("homology basis is degenerate: {0}")]
    HomologyDegenerate(String),
    #[error("path does not start at the Abel base point")]
    PathStartMismatch,
    #[error("branch point {0} is not simple")]
    NotSimpleBranchPoint(usize),
    #[error("imaginary part of the period matrix is not positive definite")]
    NotRiemannMatrix,
    #[error("theta truncation radius {0:.1} exceeds the configured cap")]
    ToleranceUnachievable(f64),
    #[error("odd characteristic is degenerate at the requested points")]
    DegenerateOddCharacteristic,
    #[error("characteristic lies on the theta divisor (|theta(0)| = {0:.3e})")]
    OnThetaDivisor(f64),
    #[error("normalization point {0} lies on a branch cut or branch point")]
    NormalizationPointOnCut(String),
    #[error("lambda = {0} is too close to a branch point")]
    TooCloseToBranchPoint(String),
    #[error("loop for branch point {0} encloses other branch points")]
    LoopEnclosesMultiplePoints(usize),
    #[error("residue contour around branch point {0} is too small")]
    ContourTouchesCut(usize),
    #[error("finite-difference stencil crosses the theta divisor")]
    StencilCrossesThetaDivisor,
    #[error("finite-difference stencil is degenerate: {0}")]
    StencilDegenerate(String),
    #[error("Thomae subset must contain {expected} branch points, got {got}")]
    WrongSubsetSize { expected: usize, got: usize },
    #[error("characteristic attached to the subset is not even")]
    CharacteristicNotEven,
    #[error("operation requires a hyperelliptic curve")]
    NotHyperelliptic,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

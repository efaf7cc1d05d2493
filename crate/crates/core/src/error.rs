use thiserror::Error;

pub type Result<T> = std::result::Result<T, UapError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UapError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate interval [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },

    #[error("exchange iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("no sign change of the residual between {a1} and {a2}")]
    NoSignChange { a1: f64, a2: f64 },

    #[error("matrix is singular to working precision (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("polynomial has a zero coefficient at basis index {0}")]
    ZeroCoefficient(usize),

    #[error("activation fails non-polynomial probe: E_{degree} = {error:e} on [{lo}, {hi}]")]
    PolynomialActivation { degree: usize, error: f64, lo: f64, hi: f64 },

    #[error("activation value {value:e} at y0 = {y0} is too close to zero")]
    ActivationNearZero { y0: f64, value: f64 },

    #[error("degree search cap {cap} reached without meeting the tolerance")]
    DegreeCapExceeded { cap: usize },

    #[error("degenerate simplex (Cayley-Menger determinant {det:e})")]
    DegenerateSimplex { det: f64 },

    #[error("empty grid")]
    EmptyGrid,

    #[error("grid of {points} points exceeds cap {cap}")]
    GridTooLarge { points: usize, cap: usize },

    #[error("evaluation failed at {point:?}: {message}")]
    Evaluation { point: Vec<f64>, message: String },

    #[error("singular non-bias Vandermonde for drawn directions (margin {margin:e})")]
    SingularDraw { margin: f64 },

    #[error("no nonsingular direction set after {attempts} draws")]
    PersistentSingularity { attempts: usize },

    #[error("serialization: {0}")]
    Serialization(String),
}

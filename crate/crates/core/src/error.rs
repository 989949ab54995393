use thiserror::Error;

/// Errors raised by the scheduling toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovation { condition: f64 },

    #[error("t_offset {offset} outside [0, {delta}]")]
    OffsetOutOfRange { offset: f64, delta: f64 },

    #[error("schedule covers only {covered} s of a {horizon} s horizon")]
    HorizonNotCovered { covered: f64, horizon: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("chain matrix is singular (|det| = {det:.3e})")]
    SingularChain { det: f64 },

    #[error("selector returned set {id} but only {count} sets are available")]
    SelectorOutOfRange { id: usize, count: usize },

    #[error("no admissible set after {iterations} iterations (last R = {last_r:.6})")]
    NotAdmissible { iterations: usize, last_r: f64 },

    #[error("degenerate ellipsoid matrix for member {0}")]
    DegenerateMember(usize),

    #[error("coincident constraints for members {0} and {1}")]
    CoincidentConstraints(usize, usize),

    #[error("G(lambda) has nullity {nullity} for subset {subset:?}; critical points are not isolated")]
    Nullity { nullity: usize, subset: Vec<usize> },

    #[error("exact admissibility needs n <= 2, got n = {0}")]
    ExactUnsupported(usize),

    #[error("no critical points found on the union boundary")]
    NoCriticalPoints,

    #[error("recursion depth {depth} exceeds bound {bound}")]
    RecursionDepth { depth: usize, bound: usize },

    #[error("state diverged at step {step}")]
    Diverged { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("resolution {got} too coarse, need at least {min}")]
    ResolutionTooCoarse { got: usize, min: usize },

    #[error("dimension mismatch: field has {field} values, domain has {domain} nodes")]
    DimensionMismatch { field: usize, domain: usize },

    #[error("empty interior bin {bin} in pushforward histogram (under-sampled)")]
    UnderSampled { bin: usize },

    #[error("quotient map produced value {value} outside [{lo}, {hi}]")]
    QuotientValueOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("unsupported Clifford parameter q = {0}, supported range is 1..=5")]
    UnsupportedCliffordQ(usize),

    #[error("degenerate foliation: the isoparametric map is constant on the sphere")]
    DegenerateFoliation,

    #[error("input vector has norm {0}, expected a unit vector")]
    NonUnitVector(f64),

    #[error("the b-form is not coercive (mu = {0})")]
    NonCoercive(f64),

    #[error("exponent p must exceed 2, got {0}")]
    InvalidExponent(f64),

    #[error("coefficient c must be positive everywhere (min c = {0})")]
    NonPositiveC(f64),

    #[error("theta = {theta} must exceed max(1, mu, |b|_inf) = {bound}")]
    ThetaTooSmall { theta: f64, bound: f64 },

    #[error("singular linear system in Helmholtz solve (pivot {0})")]
    SingularSystem(f64),

    #[error("eigenvalue iteration failed to converge")]
    EigenNoConvergence,

    #[error("line search failed after {0} backtracks")]
    LineSearchFailed(usize),

    #[error("domain too coarse: {k} bumps need {needed} interior nodes, domain has {have}")]
    DomainTooCoarse { k: usize, needed: usize, have: usize },

    #[error("flow did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("cone trapping violated: |u-|_theta = {norm} exceeded {allowed}")]
    ConeViolation { norm: f64, allowed: f64 },

    #[error("zero field: Nehari projection is undefined")]
    ZeroField,

    #[error("no sign bracket found for shooting in [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input is not a converged solution: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;

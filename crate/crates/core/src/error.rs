use thiserror::Error;

/// Errors produced by the solver. The CLI maps each variant onto an exit code
/// through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step size underflow at r = {r:e} (last accepted radius)")]
    StepUnderflow { r: f64 },

    #[error("grazing zero near r = {r:e}: u and u' vanish together at the working tolerance")]
    GrazingZero { r: f64 },

    #[error("no zero found before r_max = {r_max:e}")]
    NoZeroFound { r_max: f64 },

    #[error("crossing indicator not bracketed: no crossing slope below alpha_cap = {alpha_cap:e}")]
    IndicatorNotBracketed { alpha_cap: f64 },

    #[error("tail too short for decay classification: {0}")]
    TailTooShort(String),

    #[error("estimate {value} escapes the admissible bracket ({lo}, {hi})")]
    BoundsViolated { value: f64, lo: f64, hi: f64 },

    #[error("gap function has constant sign on ({lo}, {hi}) at probe resolution")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("only {found} of {wanted} zeros reached before r_max")]
    ZeroCountNotReached { found: usize, wanted: usize },

    #[error("region ({a}, {b}) has no interior inflection")]
    NoInflection { a: f64, b: f64 },

    #[error("region ({a}, {b}) has {count} interior inflections")]
    MultipleInflections { a: f64, b: f64, count: usize },

    #[error("u changes sign inside region ({a}, {b})")]
    SignChangeInRegion { a: f64, b: f64 },

    #[error("decay at p = {p} is not fast (fitted exponent {fitted})")]
    DecayNotFast { p: f64, fitted: f64 },

    #[error("region {index}: {source}")]
    Region {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 1 for bad input, 2 for numerical failures, 3 for broken invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_) | Error::InvalidArgument(_) | Error::Json(_) => 1,
            Error::Invariant(_) => 3,
            Error::Region { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

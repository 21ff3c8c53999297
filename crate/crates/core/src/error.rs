use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {label} at position {position} is out of range for {num_states} states")]
    LabelOutOfRange {
        position: usize,
        label: usize,
        num_states: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid marginals: simplex violation {simplex:.3e}, consistency violation {consistency:.3e}")]
    InvalidMarginals { simplex: f64, consistency: f64 },

    #[error("entry {index} = {value:e} is on the polytope boundary")]
    BoundaryPoint { index: usize, value: f64 },

    #[error("joint table of {states} configurations exceeds the enumeration limit {limit}")]
    SizeGuard { states: f64, limit: usize },

    #[error("accelerated solver needs a smoothness bound for the energy")]
    MissingSmoothness,

    #[error("no admissible prototype for a sequence of length {length}")]
    EmptyPrototypes { length: usize },

    #[error("projection onto the local polytope failed at position {position}: residual {residual:e}")]
    Projection { position: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver failed at iteration {iteration}: {message}")]
    Solver { iteration: usize, message: String },

    #[error("example {index}: {source}")]
    Example {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged: surrogate likelihood {current} fell far below its initial value {initial}")]
    Diverged { initial: f64, current: f64 },

    #[error("generator rejected {rejected} of {attempts} samples; constraint set looks infeasible")]
    Infeasible { rejected: usize, attempts: usize },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unsupported schema `{found}`, expected `{expected}`")]
    Schema { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn at_example(self, index: usize) -> Self {
        Error::Example {
            index,
            source: Box::new(self),
        }
    }
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

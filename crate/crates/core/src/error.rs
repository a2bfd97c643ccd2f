use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, arities, indices).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("circuit needs {requested} qubits, simulator limit is {limit}")]
    Capacity { requested: usize, limit: usize },

    #[error("channel is not trace preserving (deviation {deviation:.3e})")]
    NotTracePreserving { deviation: f64 },

    #[error("density matrix invalid: {0}")]
    InvalidState(String),

    #[error("thermal relaxation requires T2 < 2*T1 (T1 = {t1}, T2 = {t2})")]
    InvalidRegime { t1: f64, t2: f64 },

    #[error("calibration inconsistent: {0}")]
    Calibration(String),

    #[error("unsupported gate for decomposition: {0}")]
    UnsupportedGate(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("structure is under-constrained or singular")]
    UnderConstrained,

    #[error("nonlinear solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("distance backend failed on database point {index}: {source}")]
    Backend {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

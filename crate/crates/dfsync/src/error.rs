use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter inequality required by the model does not hold.
    #[error("parameter condition violated: {0}")]
    ParameterCondition(String),

    /// Initial data cannot be completed into a well-defined trajectory.
    #[error("initial datum is not admissible: {0}")]
    WellPosedness(String),

    /// An activator lookup fell outside the recorded history span.
    #[error("activator history underflow: t = {t} outside covered span [{start}, {end}]")]
    HistoryUnderflow { t: f64, start: f64, end: f64 },

    /// A backward flow produced a negative activator value.
    #[error("backward activator became negative: {value} at lookback {delta}")]
    NegativeActivator { value: f64, delta: f64 },

    /// Root bracketing or iteration failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Newton continuation stopped before the target parameter value.
    #[error("continuation stalled at tau = {reached} (target {target}): {reason}")]
    ContinuationStalled {
        reached: f64,
        target: f64,
        reason: String,
    },

    /// The firing-free window [-tau, 0] required by the stability criterion is violated.
    #[error("firing-free window violated: tau = {tau} >= T - y1 = {window}")]
    WindowViolation { tau: f64, window: f64 },

    /// Malformed configuration input.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit status: 2 for parameter/input violations, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ParameterCondition(_) | Error::WellPosedness(_) | Error::Config(_) => 2,
            Error::HistoryUnderflow { .. }
            | Error::NegativeActivator { .. }
            | Error::Numerical(_)
            | Error::ContinuationStalled { .. }
            | Error::WindowViolation { .. }
            | Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

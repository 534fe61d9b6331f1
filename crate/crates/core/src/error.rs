use thiserror::Error;

/// Library-wide error type.
///
/// The CLI maps variants to process exit codes: config/input problems to 2,
/// failed convergence to 3, orientation loss during a flow to 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// det Dphi dropped to zero or below somewhere, so the map stopped being
    /// a diffeomorphism. `time` is NaN when the failure was detected outside
    /// a time integration (e.g. while composing two maps).
    #[error("degenerate flow: det Dphi = {det:.6e} at node {node:?}{}", fmt_time(.time))]
    DegenerateFlow { time: f64, node: Vec<usize>, det: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("config error at line {line}, column {column}: {message}")]
    ConfigParse { line: usize, column: usize, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_time(t: &f64) -> String {
    if t.is_nan() { String::new() } else { format!(", t = {t:.6}") }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence(_) => 3,
            Error::DegenerateFlow { .. } => 4,
            Error::InvalidInput(_)
            | Error::GridMismatch(_)
            | Error::ConfigParse { .. }
            | Error::Format(_) => 2,
            Error::Io(_) => 1,
        }
    }

    /// Short machine-readable tag written into `error.csv`.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::DegenerateFlow { .. } => "degenerate_flow",
            Error::NoConvergence(_) => "no_convergence",
            Error::ConfigParse { .. } => "config_parse",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

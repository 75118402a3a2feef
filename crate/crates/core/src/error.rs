use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The SVD did not converge; carries enough context to diagnose the input.
    #[error("numerical error: {message} (rows={rows}, cols={cols}, max_abs={max_abs}, non_finite={non_finite})")]
    Numerical {
        message: String,
        rows: usize,
        cols: usize,
        max_abs: f64,
        non_finite: usize,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("weak instrument: first-stage estimate {denominator:e} is numerically zero")]
    WeakInstrument { denominator: f64 },

    #[error("empty kernel window: every kernel weight is zero (v={v}, h={h})")]
    EmptyWindow { v: f64, h: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors that stem from how the tool was invoked rather than from the data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidSpec(_))
    }
}

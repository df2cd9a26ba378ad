use std::path::PathBuf;

/// Errors produced anywhere in the compression pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("svd did not converge after {sweeps} sweeps (matrix norm {norm:e})")]
    NoConvergence { sweeps: usize, norm: f64 },

    #[error("budget error: {0}")]
    Budget(String),

    #[error("{what} = {value} out of range {range}")]
    Range {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2: configuration or input-format problems, 3: numeric or training
    /// failures, 4: I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format { .. } | Error::Budget(_) | Error::Range { .. } => 2,
            Error::Shape { .. }
            | Error::NoConvergence { .. }
            | Error::EmptyInput(_)
            | Error::Index(_)
            | Error::Diverged { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{path}: not found")]
    NotFound { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A factorization or solve that could not be completed.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit status for the command line: 1 data, 2 I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::DimensionMismatch(_) => 1,
            Error::NotFound { .. } | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::data("x").exit_code(), 1);
        assert_eq!(Error::dims("x").exit_code(), 1);
        assert_eq!(Error::io("p", std::io::Error::from(std::io::ErrorKind::NotFound)).exit_code(), 2);
        assert_eq!(Error::io("p", std::io::Error::from(std::io::ErrorKind::PermissionDenied)).exit_code(), 2);
        assert_eq!(Error::numerical("x").exit_code(), 3);
        assert!(Error::io("p", std::io::Error::from(std::io::ErrorKind::NotFound)).to_string().ends_with("not found"));
    }
}

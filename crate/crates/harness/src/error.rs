use thiserror::Error;

/// Failures mapped to process exit codes.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("not mixed: {0}")]
    NotMixed(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Numerical(_) | HarnessError::Io(_) => 2,
            HarnessError::NotMixed(_) => 3,
        }
    }
}

impl From<liewalk::Error> for HarnessError {
    fn from(e: liewalk::Error) -> Self {
        use liewalk::Error as E;
        match e {
            E::Numerical(_)
            | E::NonContracting { .. }
            | E::Singular
            | E::Degenerate(_)
            | E::CoverageMissing { .. }
            | E::NonFinite => HarnessError::Numerical(e.to_string()),
            _ => HarnessError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

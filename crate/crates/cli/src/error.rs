use std::fmt;

use serde::Serialize;
use tsnmf::matio::MatioError;
use tsnmf::{NnlsError, PassError, SelectError, StoreError, TsqrError};

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage,
    Data,
    Numerical,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Usage => 1,
            ExitKind::Data => 2,
            ExitKind::Numerical => 3,
        }
    }
}

/// A failed stage, reported on stderr as `{"stage": …, "message": …}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ExitKind,
    pub stage: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    stage: &'a str,
    message: &'a str,
}

impl CliError {
    pub fn usage(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            stage,
            message: message.into(),
        }
    }

    pub fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            stage,
            message: message.into(),
        }
    }

    pub fn numerical(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Numerical,
            stage,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorJson {
            stage: self.stage,
            message: &self.message,
        })
        .expect("error JSON serializes")
    }

    pub fn from_matio(stage: &'static str, e: MatioError) -> Self {
        Self::data(stage, e.to_string())
    }

    pub fn from_tsqr(stage: &'static str, e: TsqrError) -> Self {
        match e {
            TsqrError::NotTriangular(_) => Self::numerical(stage, e.to_string()),
            _ => Self::data(stage, e.to_string()),
        }
    }

    pub fn from_pass(e: PassError) -> Self {
        match e {
            PassError::Read(e) => Self::from_matio("read", e),
            PassError::Tsqr(e) => Self::from_tsqr("pass", e),
            PassError::Sketch(e) => Self::numerical("sketch", e.to_string()),
            PassError::Empty => Self::data("read", e.to_string()),
        }
    }

    pub fn from_select(e: SelectError) -> Self {
        match e {
            SelectError::RankTooLarge { .. } => Self::usage("select", e.to_string()),
            SelectError::Scaling(e) => Self::from_tsqr("select", e),
            _ => Self::numerical("select", e.to_string()),
        }
    }

    pub fn from_nnls(e: NnlsError) -> Self {
        Self::numerical("nnls", e.to_string())
    }

    pub fn from_store(e: StoreError) -> Self {
        Self::data("cache", e.to_string())
    }

    pub fn io(stage: &'static str, path: &std::path::Path, e: std::io::Error) -> Self {
        Self::data(stage, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

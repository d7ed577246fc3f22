// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use vt_core::datastore::DataStoreError;
use vt_core::engine::ExecutionStoreError;
use vt_core::{EngineError, MashupError, ProvenanceError, RegistryError, UpgradeError, VersionId};

/// How an error surfaces: HTTP status on the service, exit code on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    NotFound,
    Conflict,
    Invalid,
    Internal,
}

impl Kind {
    pub fn http_status(self) -> u16 {
        match self {
            Kind::NotFound => 404,
            Kind::Conflict => 409,
            Kind::Invalid => 422,
            Kind::Internal => 500,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Internal => 2,
            _ => 1,
        }
    }
}

/// An error with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppError {
    pub code: String,
    pub detail: String,
    pub kind: Kind,
}

impl AppError {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        AppError {
            code: code.to_owned(),
            detail: detail.into(),
            kind: kind_of(code),
        }
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        AppError::new("BAD_REQUEST", detail)
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.detail)
    }
}

impl std::error::Error for AppError {}

fn kind_of(code: &str) -> Kind {
    match code {
        "UNKNOWN_VERSION" | "UNKNOWN_TAG" | "UNKNOWN_MASHUP" | "UNKNOWN_EXECUTION" | "NOT_FOUND"
        | "NOT_A_PROJECT" => Kind::NotFound,
        "LOCKED" | "DUPLICATE_PACKAGE" | "DUPLICATE_EXECUTION" | "VERSION_CONFLICT" | "PLAN_STALE"
        | "ALREADY_INITIALIZED" | "PORT_IN_USE" => Kind::Conflict,
        "IO_ERROR" | "CORRUPT" | "REPLAY_FAILED" | "PROJECT_CORRUPT" | "INTERNAL" => Kind::Internal,
        _ => Kind::Invalid,
    }
}

pub fn unknown_version(v: VersionId) -> AppError {
    AppError::new("UNKNOWN_VERSION", format!("unknown version {v}"))
}

macro_rules! from_core {
    ($($ty:ident),*) => {$(
        impl From<$ty> for AppError {
            fn from(e: $ty) -> Self {
                match e {
                    $ty::UnknownVersion(v) => unknown_version(v),
                    other => AppError::new(other.code(), other.to_string()),
                }
            }
        }
    )*};
}

from_core!(ProvenanceError, EngineError, MashupError, UpgradeError);

impl From<RegistryError> for AppError {
    fn from(e: RegistryError) -> Self {
        AppError::new(e.code(), e.to_string())
    }
}

impl From<DataStoreError> for AppError {
    fn from(e: DataStoreError) -> Self {
        AppError::new(e.code(), e.to_string())
    }
}

impl From<ExecutionStoreError> for AppError {
    fn from(e: ExecutionStoreError) -> Self {
        let code = match e {
            ExecutionStoreError::Duplicate(_) => "DUPLICATE_EXECUTION",
            ExecutionStoreError::Format(_) => "PROJECT_CORRUPT",
            ExecutionStoreError::Io(_) => "IO_ERROR",
        };
        AppError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::new("IO_ERROR", e.to_string())
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_follow_codes() {
        let e: AppError = ProvenanceError::UnknownVersion(VersionId(99)).into();
        assert_eq!((e.code.as_str(), e.kind.http_status(), e.kind.exit_code()), ("UNKNOWN_VERSION", 404, 1));
        assert_eq!(e.detail, "unknown version 99");
        assert_eq!(AppError::new("LOCKED", "").kind.http_status(), 409);
        assert_eq!(AppError::new("INVALID_OPS", "").kind.http_status(), 422);
        assert_eq!(AppError::new("IO_ERROR", "").kind.exit_code(), 2);
    }
}

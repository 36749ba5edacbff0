//! Command-line pipeline around the `eventadapt` library.

pub mod commands;
pub mod config;
pub mod logging;
pub mod manifest;

use eventadapt::Error;

/// Process exit status for each error family.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Validation(_) | Error::Dimension { .. } => 3,
        Error::Ingestion { .. } | Error::Format(_) | Error::Io { .. } | Error::Json(_) => 4,
        Error::Numeric(_) => 5,
        Error::InsufficientHistory { .. } | Error::UndefinedMetric(_) => 6,
    }
}

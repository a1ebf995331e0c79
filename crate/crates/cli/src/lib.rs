//! Experiment pipeline behind the `gustpp` binary.

pub mod config;
pub mod models;
pub mod pipeline;

pub use config::{Method, RunConfig, UsageError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gustpp_core::Error>() {
            return match e {
                gustpp_core::Error::Domain(_) | gustpp_core::Error::Optimization { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

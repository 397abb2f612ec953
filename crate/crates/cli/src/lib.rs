//! File formats, image IO, configuration and the `geoloc` subcommands.
//!
//! All numerical work lives in `geoloc-core`; this crate only moves data
//! between the filesystem and those in-memory APIs.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod imageio;
pub mod plot;

use std::fmt;

/// A problem with how the program was invoked; exits with status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Usage and configuration errors map to 2, everything else to 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<geoloc_core::Error>() {
            if matches!(
                e,
                geoloc_core::Error::Config(_) | geoloc_core::Error::NoSatelliteMappings
            ) {
                return EXIT_USAGE;
            }
        }
    }
    EXIT_RUNTIME
}

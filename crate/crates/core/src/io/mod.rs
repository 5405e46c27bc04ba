//! File formats: run configuration, pulse samples, match results and sweep
//! tables.
//!
//! Every decoder takes text and returns a typed value or
//! [`Error::Parse`](crate::Error::Parse); none of them panic on malformed
//! input.

pub mod config;
pub mod pulse;
pub mod result;
pub mod sweep;

pub use config::RunConfig;

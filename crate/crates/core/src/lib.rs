//! Event-sequence cohort analytics.

pub mod api;
pub mod error;
pub mod fhir;
pub mod hierarchy;
pub mod impute;
pub mod io;
pub mod model;
pub mod query;
pub mod session;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// Reported with every API response.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

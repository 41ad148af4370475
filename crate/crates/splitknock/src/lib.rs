//! Split knockoff variable selection with directional false discovery rate
//! control under linear transformations gamma = D beta, plus a Monte-Carlo
//! experiment harness for simulation studies.
//!
//! The pipeline: split the rows in two, trace a Split LASSO path on the
//! first half, build a knockoff copy of the transformed features on the
//! second half, race each feature against its copy via significance levels
//! (Z vs Z~), and select with the knockoff threshold at a nominal level q.

pub mod error;
pub mod evaluation;
pub mod filter;
pub mod knockoff_copy;
pub mod model;
pub mod numerics;
pub mod screening;
pub mod split_lasso;

pub use error::{Error, Result};

/// Version string reported by the CLI and embedded in result manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

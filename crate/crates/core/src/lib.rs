//! Simulation and diagnostics for central limit theorems of dependent
//! triangular arrays normalized through affinity sets.

// Negated comparisons keep NaN parameters on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod apps;
pub mod array;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kernel;
pub mod models;
pub mod normality;
pub mod omega;
pub mod rng;
pub mod runner;
pub mod stats;

pub use array::{ModelId, SampleArray};
pub use error::{Error, Result};

/// Tool version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

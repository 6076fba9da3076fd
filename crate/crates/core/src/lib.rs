//! Per-garment virtual try-on: capture processing, hybrid body representations,
//! a conditional image-to-image network with its training loop, and a real-time
//! inference engine.

// NaN checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod body;
pub mod cli;
pub mod dataset;
pub mod engine;
pub mod densepose_prep;
pub mod error;
pub mod gsnet;
pub mod imaging;
pub mod measurement_garment;
pub mod metrics;
pub mod nn;
pub mod perception;
pub mod raster;
pub mod server;
pub mod synthetic;
pub mod trainer;
pub mod video;

pub use error::{Error, Result};

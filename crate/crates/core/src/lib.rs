//! Memory-attention segmentation of raster map tiles and map time series.

pub mod error;
pub mod raster;
pub mod cli;
pub mod config;
pub mod eval;
pub mod linker;
pub mod membank;
pub mod model;
pub mod synth;
pub mod video;

pub use error::{Error, Result};

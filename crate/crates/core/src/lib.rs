//! Ensemble diffusion super-resolution for gridded wind-speed downscaling.

pub mod baselines;
pub mod checkpoint;
pub mod datapipe;
pub mod diffusion;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod grids;
pub mod metrics;
pub mod models;
pub mod validation;

pub use error::{Error, Result};
pub use exec::Exec;

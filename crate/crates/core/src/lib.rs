//! Reconstruction of earlier states of a three-field phase-field tumour
//! growth model from a terminal-time measurement.

pub mod config;
pub mod error;
pub mod integrator;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod reconstruction;
pub mod spline;
pub mod synthetic;
pub mod systems;

pub use error::{Error, Result};

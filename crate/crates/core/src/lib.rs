//! Simulation and reconstruction toolkit for polarimetric wavefront lidar.
//!
//! The pipeline runs scene → [`simulate`] → [`preprocess`] →
//! [`reconstruct`] / [`material`] → [`metrics`]. Every stage is pixel
//! parallel; see [`exec`] for the execution policy switch.

pub mod error;
pub mod exec;
pub mod io;
pub mod lm;
pub mod material;
pub mod metrics;
pub mod pbrdf;
pub mod polmath;
pub mod preprocess;
pub mod real;
pub mod reconstruct;
pub mod scene;
pub mod simulate;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Speed of light in m/ns.
pub const C_M_PER_NS: f64 = SPEED_OF_LIGHT * 1e-9;

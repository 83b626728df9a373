//! Spectral laboratory for periodic and random magnetic Schrödinger operators.

pub mod background;
pub mod disorder;
pub mod error;
pub mod feshbach;
pub mod floquet;
pub mod geometry;
pub mod gh;
pub mod localization;
pub mod model;
pub mod models;
pub mod operator;
pub mod sparse;
pub mod spectral;
pub mod wegner;

pub use error::{Error, ErrorClass, Result};
pub use num_complex::Complex64 as c64;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

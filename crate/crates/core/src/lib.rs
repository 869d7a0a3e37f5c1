//! Digital wavefront set extraction: shearlet features, patch classifiers,
//! and the canonical relation of the Radon transform.

pub mod densee;
pub mod error;
pub mod neuralnet;
pub mod overlay;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod raster;
pub mod phantoms;
pub mod radon;
pub mod shearlet;
pub mod tomography;
pub mod wavefront;

pub use error::{Error, Result};
pub use raster::Image;

//! Appearance, motion and language fusion for text-based video segmentation.

pub mod align;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradsuite;
pub mod lgff;
pub mod metrics;
pub mod mmvt;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;
pub mod world;

pub use error::{Error, Result};
pub use tensor::Tensor;

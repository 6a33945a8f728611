//! Differentiable navigation stack: raytraced LiDAR world, CNN localizer,
//! differentiable steering control, and end-to-end online training.

pub mod angle;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod control;
pub mod error;
pub mod localization;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod training;
pub mod vehicle;
pub mod world;

pub use error::{Error, Result};
pub use tensor::Tensor;

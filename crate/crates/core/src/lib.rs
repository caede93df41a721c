//! Multiview depth-camera human motion capture.
//!
//! The pipeline renders labeled synthetic depth from calibrated virtual
//! cameras, classifies every pixel into a body part, fuses all views into one
//! labeled point cloud, summarizes each part with a fixed set of statistics
//! and regresses 3D joint positions with closed-form ridge regression.

pub mod aggregation;
pub mod body;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fcn;
pub mod geometry;
pub mod model_io;
pub mod pipeline;
pub mod regressor;
pub mod seed;
pub mod stage;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

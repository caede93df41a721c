//! From-scratch fully-convolutional per-pixel body-part classifier.

mod model;
pub mod ops;
pub mod real;

pub use model::{encode_input, FcnConfig, FcnModel, Sgd, TrainItem, BACKGROUND_INPUT, TARGET_DEPTH};
pub use real::Real;

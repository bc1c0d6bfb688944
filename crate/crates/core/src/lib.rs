//! Multi-view convolutional label-attention classifiers (MVC-LDA / MVC-RLDA)
//! for assigning codes to long free-text documents, with the surrounding
//! preprocessing, embedding pretraining, baselines, metrics and search tooling.

pub mod baseline;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod hyperband;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, ErrorClass, Result};

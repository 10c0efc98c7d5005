pub mod distributions;
pub mod error;
pub mod finetune;
pub mod gaussian_lab;
pub mod linalg;
pub mod ot;
pub mod pipeline;
pub mod risk;
pub mod stats;

pub use error::{Error, Result};

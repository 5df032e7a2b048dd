pub mod cff;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod preprocess;
pub mod tensor;

pub use error::{Error, Result};

pub mod error;
pub mod datapipe;
pub mod krr;
pub mod nnet;
pub mod pso;
pub mod forecast;
pub mod refdyn;

pub use error::{Error, Result};

pub mod aggregator;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod mask_head;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod reasoner;
pub mod reservoir;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};

pub mod attack;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod toy;
pub mod transforms;

pub use error::{Error, Result};

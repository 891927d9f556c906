pub mod data;
pub mod enumerable;
pub mod error;
pub mod experiment;
pub mod guan;
pub mod nn;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod state;
pub mod theory;

pub use error::{Error, Result};

pub mod analysis;
pub mod cli;
pub mod dedims;
pub mod error;
pub mod feature_store;
pub mod mixmatch;
pub mod rng;
pub mod sandbox;
pub mod study;

pub use error::{Error, Result};

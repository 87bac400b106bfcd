pub mod analysis;
pub mod compressors;
pub mod error;
pub mod harness;
pub mod landscapes;
pub mod noise;
pub mod optimizers;
pub mod rng;
pub mod sde;
pub mod specfun;

pub use error::{Error, Result};

pub mod citysim;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod preproc;
pub mod rlcore;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub mod error;
pub mod functionals;
pub mod pathsim;
pub mod sampling;
pub mod seed;

pub use error::{Error, Result};
pub mod gaussianlimits;
pub mod harness;
pub mod cli;

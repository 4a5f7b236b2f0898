pub mod calculus;
pub mod config;
pub mod coefficients;
pub mod continuation;
pub mod decoupled;
pub mod field;
pub mod krylov;
pub mod error;
pub mod noise;
pub mod report;
pub mod verification;

pub use error::{Error, Result};

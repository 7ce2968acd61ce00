//! Learning shared and exclusive image representations from paired data by
//! mutual information estimation, without reconstruction or generation.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod model;
pub mod networks;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};

//! Learngene extraction, evolution and inheritance for small convolutional
//! networks.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod evolution;
pub mod error;
pub mod genome;
pub mod inheritance;
pub mod netspec;
pub mod protocols;
pub mod report;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};

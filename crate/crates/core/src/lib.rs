pub mod config;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod network;
pub mod observation;
pub mod pipelines;
pub mod report;
pub mod seed;
pub mod surrogate;

pub use error::{Error, ErrorClass, Result};

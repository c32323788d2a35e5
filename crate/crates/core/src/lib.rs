pub mod analysis;
pub mod cli;
pub mod covariates;
pub mod error;
pub mod format;
pub mod gof;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod network;
pub mod sampler;
pub mod store;
pub mod synthetic;
pub mod truncnorm;

pub use error::{Error, Result};

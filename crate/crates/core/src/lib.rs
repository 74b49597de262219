pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod fmt;
pub mod gcn;
pub mod graph;
pub mod hsi;
pub mod metrics;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};

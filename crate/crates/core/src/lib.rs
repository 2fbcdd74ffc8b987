pub mod detectors;
pub mod error;
pub mod fock;
pub mod metrics;
pub mod optimize;
pub mod rates;
pub mod search;
pub mod sources;
pub mod swap;

pub use error::{Error, Result};

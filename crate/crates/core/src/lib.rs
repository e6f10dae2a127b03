//! Visual storytelling with a hierarchical image/description encoder and a
//! recurrent sentence decoder, plus the data pipeline, training loop,
//! decoding and automatic evaluation around it.

pub mod autograd;
pub mod dataset;
pub mod error;
pub mod generation;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod params;
pub mod textproc;
pub mod training;

pub use error::{Error, Result};

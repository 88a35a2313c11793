//! Long-term video object segmentation with three fixed-size memory banks.
//!
//! The crate covers the dataset layout and codecs, J/F metrics, the memory
//! banks and their recurrent compressor, a small segmentation network, its
//! training loop, the evaluation protocol (oracles, attributes, bank
//! ablations), a synthetic long-video generator and a semi-automatic
//! annotation pipeline.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};

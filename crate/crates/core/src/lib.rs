//! Geographically coherent social regions from located mention data, and
//! the communication volume, vocabulary and sentiment between them.

pub mod community;
pub mod error;
pub mod flow;
pub mod ingest;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod regions;
pub mod sentiment;
mod serde_pairs;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};

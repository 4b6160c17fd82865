//! Risk-controlled question answering over knowledge graphs.
//!
//! A question is answered by a threshold-gated graph traversal followed by a
//! generator-based filter. All three thresholds come from split conformal
//! quantiles, and the triple of miscoverage levels is chosen by a
//! Learn-Then-Test controller so that the end-to-end miss rate stays below a
//! target with high probability.

pub mod bench;
pub mod conformal;
mod error;
pub mod evaluator;
pub mod graph;
mod http_client;
pub mod pipeline;
pub mod retriever;
pub mod riskctl;
pub mod sample;
pub mod scoring;

pub use error::{Error, Result};
pub use graph::{EntityId, KnowledgeGraph, RelationId, RelationPath, Triple};
pub use http_client::HttpSettings;
pub use pipeline::{KgqaPipeline, PipelineSettings, Prediction};
pub use sample::QASample;

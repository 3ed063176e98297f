//! Streaming recommender with decay-weighted reservoir sampling and a
//! double-wing mixture-of-experts ranking model.
//!
//! The pipeline: [`ingest`] turns rating logs into a chronological stream of
//! implicit-feedback interactions; [`sampling`] maintains a FIFO reservoir and
//! assembles training batches that mix new and historical data under recency
//! decay; [`dwmoe`] is the two-wing (user experts / item experts) model built
//! on the hand-rolled layers in [`nn`]; [`train`] does negative sampling,
//! manual backprop and Adam; [`eval`] runs the prequential (test-then-train)
//! protocol with 99-negative ranking metrics. [`experiment`] wires a config
//! file to a full run; [`synthetic`] generates block-structured datasets for
//! experiments without external data.

pub mod config;
pub mod dwmoe;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod nn;
pub mod sampling;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};

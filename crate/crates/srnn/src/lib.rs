//! Graph-structured recurrent forecasting for short-term traffic speeds.
//!
//! A road network is read as a directed adjacency matrix; per-segment speed
//! series are imputed, scaled and windowed; and a structural recurrent model
//! with three shared LSTMs (spatial edges, temporal edges, nodes) is trained
//! end to end with reverse-mode differentiation. The trainable parameter set
//! is independent of the graph, so one checkpoint evaluates on any topology.

pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

//! Compressed Newton-type decentralized optimization.
//!
//! Agents on an undirected graph jointly minimize the average of strongly
//! convex local objectives. Each round every agent exchanges compressed
//! innovations of its iterate and of a gradient tracker with its neighbors,
//! then steps along its local Newton direction applied to the tracked
//! gradient.
//!
//! Modules:
//! - [`graph`]: topologies, Metropolis–Hastings weights, spectral constants
//! - [`compress`]: compression operators and the difference-compression channel
//! - [`objective`]: ridge and logistic local objectives, centralized Newton
//! - [`solver`]: the synchronous round, comparators and telemetry
//! - [`theory`]: the 5×5 contraction matrix and the step-size conditions
//! - [`data`]: synthetic ridge data, CovType ingestion, partitioning

pub mod compress;
pub mod data;
pub mod error;
pub mod graph;
pub mod objective;
pub mod rng;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};

//! Pixel-grid registration of circular particles, Monte-Carlo detection
//! likelihoods, Bayesian fitting of a log-t size law and the probability that
//! a whole sample goes undetected.

pub mod cli;
pub mod error;
pub mod fns;
pub mod grid;
pub mod inference;
pub mod ingest;
pub mod io;
pub mod likelihood;
pub mod plot;
pub mod rng;
pub mod sizedist;

pub use error::{Error, Result};

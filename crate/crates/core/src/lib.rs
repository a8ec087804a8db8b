//! Transition-path sampling for a two-dimensional metastable landscape:
//! overdamped Langevin simulation, labeled datasets, a convolutional VAE
//! trained on transition paths and a TD3 agent that learns a biasing force.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod landscape;
pub mod rng;
pub mod tensornet;
pub mod tpsrl;
pub mod vae;

pub use error::{Error, Result};

//! Joint prediction of pairwise interaction types and future trajectories
//! for multi-agent traffic scenes with typed graph networks.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod labeler;
pub mod model;
pub mod nn;
pub mod plot;
pub mod scene;
pub mod scenegen;

pub use error::{Error, Result};

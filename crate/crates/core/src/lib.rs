//! Differentiable tube-based model predictive control.

pub mod ad;
pub mod barrier;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod cost;
pub mod ddp;
pub mod doc;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod problem;
pub mod systems;
pub mod tube;

pub use error::{Error, Result};

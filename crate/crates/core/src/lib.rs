//! Deep value-based reinforcement learning for the Hungry Geese game.

pub mod agents;
pub mod encoding;
pub mod env;
mod error;
pub mod eval;
pub mod network;
pub mod reward;
pub mod training;

pub use error::{Error, Result};

//! Closed-loop mobile user profiling: incremental user and spatial knowledge-graph
//! embeddings, a DQN agent that imitates visit sequences, and adversarial training of the
//! representations against the imitation reward.

pub mod cells;
pub mod cli;
pub mod codec;
pub mod dqn;
pub mod error;
pub mod eval;
pub mod grad;
pub mod kg;
pub mod math;
pub mod mobility;
pub mod reward;
pub mod synth;
pub mod trainer;
pub mod user;

pub use error::{Error, Result};

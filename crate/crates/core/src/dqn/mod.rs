//! The imitation agent: Q-network, ε-greedy policy, Bellman training and prioritized replay.

mod agent;
mod network;
mod replay;

pub use agent::{argmax, bellman_gradient, priority_score, select_action, td_error, train_step, Agent, DqnConfig};
pub use network::{ForwardTrace, QNetwork};
pub use replay::{softmax, PriorityStrategy, ReplayBuffer, Sampling, Transition};

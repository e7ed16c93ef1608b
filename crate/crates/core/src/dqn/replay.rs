use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub priority: f64,
}

/// How a transition's priority score is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorityStrategy {
    /// The transition's reward.
    #[default]
    Reward,
    /// The magnitude of its TD-error under the current networks.
    TdError,
}

/// How a batch is drawn from the priority scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// `k` draws without replacement from `softmax(priorities)`, renormalising after each draw.
    #[default]
    Softmax,
    /// The `k` largest priorities (ties to the oldest).
    TopK,
}

/// FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    pub strategy: PriorityStrategy,
}

/// `softmax(scores)` with max subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let weights = softmax_weights(scores);
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn softmax_weights(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().map(|s| (s - max).exp()).collect()
}

impl ReplayBuffer {
    pub fn new(capacity: usize, strategy: PriorityStrategy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            strategy,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn set_priority(&mut self, idx: usize, priority: f64) {
        self.items[idx].priority = priority;
    }

    pub fn priorities(&self) -> Vec<f64> {
        self.items.iter().map(|t| t.priority).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.priorities())
    }

    /// Draws `k` distinct buffer indices.
    pub fn sample_batch<R: Rng>(&self, k: usize, sampling: Sampling, rng: &mut R) -> Result<Vec<usize>> {
        if k > self.items.len() || self.items.is_empty() {
            return Err(Error::InsufficientData {
                requested: k,
                available: self.items.len(),
            });
        }
        let priorities = self.priorities();
        match sampling {
            Sampling::TopK => {
                let mut order: Vec<usize> = (0..priorities.len()).collect();
                order.sort_by(|&a, &b| priorities[b].total_cmp(&priorities[a]).then(a.cmp(&b)));
                order.truncate(k);
                Ok(order)
            }
            Sampling::Softmax => {
                let mut weights = softmax_weights(&priorities);
                let mut picked = Vec::with_capacity(k);
                for _ in 0..k {
                    let total: f64 = weights.iter().sum();
                    let mut target = rng.gen::<f64>() * total;
                    let mut choice = None;
                    for (i, &w) in weights.iter().enumerate() {
                        if w <= 0.0 {
                            continue;
                        }
                        choice = Some(i);
                        if target < w {
                            break;
                        }
                        target -= w;
                    }
                    // Every remaining weight is positive, so a choice always exists.
                    let i = choice.expect("non-empty candidate set");
                    weights[i] = 0.0;
                    picked.push(i);
                }
                Ok(picked)
            }
        }
    }
}

use rand::Rng;

use crate::error::{Error, Result};

use super::network::QNetwork;
use super::replay::{PriorityStrategy, ReplayBuffer, Sampling, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    /// Probability of taking the greedy action (the `epsilon` flag).
    pub greedy: f64,
    pub batch_size: usize,
    pub target_replace_iter: u64,
    pub learning_rate: f64,
    pub hidden: usize,
    pub memory_capacity: usize,
    pub strategy: PriorityStrategy,
    pub sampling: Sampling,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.94,
            greedy: 0.97,
            batch_size: 32,
            target_replace_iter: 5,
            learning_rate: 1e-4,
            hidden: 64,
            memory_capacity: 128,
            strategy: PriorityStrategy::Reward,
            sampling: Sampling::Softmax,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !unit(self.greedy) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", self.greedy)));
        }
        if self.batch_size == 0 || self.memory_capacity == 0 || self.hidden == 0 || self.target_replace_iter == 0 {
            return Err(Error::Config(
                "batch size, memory capacity, hidden width and target_replace_iter must be positive".into(),
            ));
        }
        if self.batch_size > self.memory_capacity {
            return Err(Error::Config("batch size cannot exceed memory capacity".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("imitation learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `greedy` the argmax action, otherwise a uniform random one.
pub fn select_action<R: Rng>(net: &QNetwork, state: &[f64], greedy: f64, rng: &mut R) -> Result<usize> {
    let q = net.q_values(state)?;
    if rng.gen::<f64>() < greedy {
        Ok(argmax(&q))
    } else {
        Ok(rng.gen_range(0..q.len()))
    }
}

fn max_q(net: &QNetwork, state: &[f64]) -> Result<f64> {
    Ok(net.q_values(state)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `r + γ·max Q_target(s′) − Q_eval(s, a)`.
pub fn td_error(eval: &QNetwork, target: &QNetwork, t: &Transition, gamma: f64) -> Result<f64> {
    let q = eval.q_values(&t.state)?;
    let qa = *q.get(t.action).ok_or_else(|| Error::Lookup {
        kind: "action",
        id: t.action.to_string(),
    })?;
    Ok(t.reward + gamma * max_q(target, &t.next_state)? - qa)
}

pub fn priority_score(strategy: PriorityStrategy, t: &Transition, eval: &QNetwork, target: &QNetwork, gamma: f64) -> Result<f64> {
    match strategy {
        PriorityStrategy::Reward => Ok(t.reward),
        PriorityStrategy::TdError => Ok(td_error(eval, target, t, gamma)?.abs()),
    }
}

/// Gradient of the mean squared Bellman residual over `batch` with respect to the
/// evaluation network; the target term is held constant. Returns `(loss, gradient)`.
pub fn bellman_gradient(eval: &QNetwork, target: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<(f64, QNetwork)> {
    let mut grad = eval.zeros_like();
    let mut loss = 0.0;
    let k = batch.len() as f64;
    for t in batch {
        let y = t.reward + gamma * max_q(target, &t.next_state)?;
        let trace = eval.forward_trace(&t.state)?;
        let diff = trace.q[t.action] - y;
        loss += diff * diff / k;
        let mut g_q = vec![0.0; trace.q.len()];
        g_q[t.action] = 2.0 * diff / k;
        eval.backward(&t.state, &trace, &g_q, &mut grad);
    }
    Ok((loss, grad))
}

/// One gradient-descent step on the Bellman loss; returns the pre-update loss.
pub fn train_step(eval: &mut QNetwork, target: &QNetwork, batch: &[&Transition], gamma: f64, lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientData {
            requested: 1,
            available: 0,
        });
    }
    let (loss, grad) = bellman_gradient(eval, target, batch, gamma)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite DQN loss {loss}")));
    }
    eval.sgd_step(&grad, lr);
    Ok(loss)
}

/// Evaluation and target networks, replay memory and the train-step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub eval: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    pub train_steps: u64,
    pub config: DqnConfig,
}

impl Agent {
    pub fn new<R: Rng>(config: DqnConfig, input: usize, actions: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let eval = QNetwork::new(rng, input, config.hidden, actions);
        Ok(Self {
            target: eval.clone(),
            eval,
            buffer: ReplayBuffer::new(config.memory_capacity, config.strategy)?,
            train_steps: 0,
            config,
        })
    }

    /// Scores `t` under the configured strategy and stores it.
    pub fn remember(&mut self, mut t: Transition) -> Result<()> {
        t.priority = priority_score(self.config.strategy, &t, &self.eval, &self.target, self.config.gamma)?;
        self.buffer.push(t);
        Ok(())
    }

    /// Samples a batch and trains once if the buffer holds at least one batch.
    pub fn learn<R: Rng>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let k = self.config.batch_size;
        if self.buffer.len() < k {
            return Ok(None);
        }
        let idx = self.buffer.sample_batch(k, self.config.sampling, rng)?;
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let loss = train_step(&mut self.eval, &self.target, &batch, self.config.gamma, self.config.learning_rate)?;
        if self.config.strategy == PriorityStrategy::TdError {
            for i in idx {
                let p = td_error(&self.eval, &self.target, self.buffer.get(i), self.config.gamma)?.abs();
                self.buffer.set_priority(i, p);
            }
        }
        self.train_steps += 1;
        self.sync_target();
        Ok(Some(loss))
    }

    /// Copies the evaluation network into the target every `target_replace_iter` train steps.
    pub fn sync_target(&mut self) -> bool {
        if self.train_steps > 0 && self.train_steps.is_multiple_of(self.config.target_replace_iter) {
            self.target = self.eval.clone();
            true
        } else {
            false
        }
    }
}

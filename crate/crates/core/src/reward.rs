//! Distance, category and exact-match rewards combined through sliding-window baselines.

use std::collections::{HashMap, VecDeque};
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{cosine, haversine_km, sigmoid, valid_coordinate};

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub distance_weight: f64,
    pub category_weight: f64,
    pub exact_weight: f64,
    /// Baseline window length.
    pub window: usize,
    /// Added to the distance (km) before taking the reciprocal.
    pub distance_floor_km: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            distance_weight: 0.2,
            category_weight: 0.6,
            exact_weight: 0.2,
            window: 5,
            distance_floor_km: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.distance_weight, self.category_weight, self.exact_weight];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("reward weights must be non-negative with a positive sum".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("reward window must hold at least one step".into()));
        }
        if !(self.distance_floor_km > 0.0 && self.distance_floor_km.is_finite()) {
            return Err(Error::Config("distance floor must be positive".into()));
        }
        Ok(())
    }
}

/// The three raw reward components of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardComponents {
    pub distance: f64,
    pub category: f64,
    pub exact: f64,
}

impl RewardComponents {
    fn as_array(self) -> [f64; 3] {
        [self.distance, self.category, self.exact]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub components: RewardComponents,
    pub baselines: RewardComponents,
    pub reward: f64,
}

/// Bounded FIFO histories of past components; each baseline is the mean of its queue.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineWindows {
    capacity: usize,
    queues: [VecDeque<f64>; 3],
}

impl BaselineWindows {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            queues: Default::default(),
        }
    }

    pub fn baselines(&self) -> RewardComponents {
        let mean = |q: &VecDeque<f64>| if q.is_empty() { 0.0 } else { q.iter().sum::<f64>() / q.len() as f64 };
        RewardComponents {
            distance: mean(&self.queues[0]),
            category: mean(&self.queues[1]),
            exact: mean(&self.queues[2]),
        }
    }

    pub fn push(&mut self, c: RewardComponents) {
        for (q, v) in self.queues.iter_mut().zip(c.as_array()) {
            if q.len() == self.capacity {
                q.pop_front();
            }
            q.push_back(v);
        }
    }

    pub fn len(&self) -> usize {
        self.queues[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues[0].is_empty()
    }
}

/// `1 / (haversine(pred, real) + floor)`.
pub fn distance_reward(pred: (f64, f64), real: (f64, f64), floor_km: f64) -> Result<f64> {
    for (lat, lon) in [pred, real] {
        if !valid_coordinate(lat, lon) {
            return Err(Error::Domain { lat, lon });
        }
    }
    Ok(1.0 / (haversine_km(pred, real) + floor_km))
}

/// Word vectors for category names. Names embed as the mean of their known
/// (lower-cased, whitespace-separated) words.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryVectors {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl CategoryVectors {
    pub fn from_table(dim: usize, table: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((w, v)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Config(format!("word vector {w:?} has dimension {}, expected {dim}", v.len())));
        }
        Ok(Self { dim, table })
    }

    /// Deterministic pseudo-random vectors for every word in `names`, keyed by a hash of the word and `seed`.
    pub fn hashed<'a>(names: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut table = HashMap::new();
        for name in names {
            for word in name.split_whitespace() {
                let word = word.to_lowercase();
                table.entry(word).or_insert_with_key(|w| {
                    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(w) ^ seed);
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
                });
            }
        }
        Self { dim, table }
    }

    /// Reads the whitespace text format: a token followed by `D` floats per line.
    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {d} values, got {}", values.len()),
                });
            }
            table.insert(token.to_lowercase(), values);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, name: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut known = 0usize;
        for word in name.split_whitespace() {
            if let Some(v) = self.table.get(&word.to_lowercase()) {
                known += 1;
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x;
                }
            }
        }
        if known > 0 {
            out.iter_mut().for_each(|o| *o /= known as f64);
        }
        out
    }

    /// Cosine of the two name embeddings; 0 when either is entirely out of vocabulary.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        cosine(&self.embed(a), &self.embed(b))
    }
}

pub fn category_reward(pred_name: &str, real_name: &str, vectors: &CategoryVectors) -> f64 {
    vectors.similarity(pred_name, real_name)
}

pub fn exact_reward<T: PartialEq + ?Sized>(pred: &T, real: &T) -> f64 {
    if pred == real {
        1.0
    } else {
        0.0
    }
}

/// `σ(Σ λ·(component − baseline))` for fixed baselines.
pub fn score(cfg: &RewardConfig, c: RewardComponents, b: RewardComponents) -> f64 {
    sigmoid(
        cfg.distance_weight * (c.distance - b.distance)
            + cfg.category_weight * (c.category - b.category)
            + cfg.exact_weight * (c.exact - b.exact),
    )
}

/// Scores against the current window means, then pushes the components.
pub fn compute_reward(cfg: &RewardConfig, windows: &mut BaselineWindows, c: RewardComponents) -> RewardBreakdown {
    let baselines = windows.baselines();
    let reward = score(cfg, c, baselines);
    windows.push(c);
    RewardBreakdown {
        components: c,
        baselines,
        reward,
    }
}

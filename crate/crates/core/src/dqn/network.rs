use std::io::{BufRead, Write};

use rand::Rng;

use crate::codec;
use crate::error::{check_len, Error, Result};
use crate::math::{uniform_vec, Matrix};

/// Two-layer Q-network: `Q(s) = W₂·relu(W₁·s + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub q: Vec<f64>,
}

impl QNetwork {
    /// Uniform `±1/√fan_in` initialisation.
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, actions: usize) -> Self {
        let b_in = 1.0 / (input.max(1) as f64).sqrt();
        let b_hid = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w1: Matrix::random(rng, hidden, input, b_in),
            b1: uniform_vec(rng, hidden, b_in),
            w2: Matrix::random(rng, actions, hidden, b_hid),
            b2: uniform_vec(rng, actions, b_hid),
        }
    }

    pub fn zeros(input: usize, hidden: usize, actions: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(actions, hidden),
            b2: vec![0.0; actions],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.actions())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn actions(&self) -> usize {
        self.w2.rows()
    }

    pub fn forward_trace(&self, state: &[f64]) -> Result<ForwardTrace> {
        check_len("Q-network input", self.input_dim(), state.len())?;
        let mut hidden_pre = self.w1.matvec(state)?;
        for (h, b) in hidden_pre.iter_mut().zip(&self.b1) {
            *h += b;
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&h| h.max(0.0)).collect();
        let mut q = self.w2.matvec(&hidden)?;
        for (v, b) in q.iter_mut().zip(&self.b2) {
            *v += b;
        }
        Ok(ForwardTrace { hidden_pre, hidden, q })
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(state)?.q)
    }

    /// Accumulates parameter gradients for upstream `g_q` into `acc`; returns `∂L/∂state`.
    pub fn backward(&self, state: &[f64], trace: &ForwardTrace, g_q: &[f64], acc: &mut QNetwork) -> Vec<f64> {
        for (a, g) in acc.b2.iter_mut().zip(g_q) {
            *a += g;
        }
        acc.w2.add_outer(1.0, g_q, &trace.hidden);
        let mut g_hidden = self.w2.matvec_t(g_q).unwrap_or_default();
        for (g, pre) in g_hidden.iter_mut().zip(&trace.hidden_pre) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        for (a, g) in acc.b1.iter_mut().zip(&g_hidden) {
            *a += g;
        }
        acc.w1.add_outer(1.0, &g_hidden, state);
        self.w1.matvec_t(&g_hidden).unwrap_or_default()
    }

    /// `∂L/∂state` for upstream `g_q`, without touching parameter gradients.
    pub fn input_gradient(&self, trace: &ForwardTrace, g_q: &[f64]) -> Vec<f64> {
        let mut g_hidden = self.w2.matvec_t(g_q).unwrap_or_default();
        for (g, pre) in g_hidden.iter_mut().zip(&trace.hidden_pre) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        self.w1.matvec_t(&g_hidden).unwrap_or_default()
    }

    fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        check_len("Q-network parameters", self.param_count(), flat.len())?;
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `self ← self − lr·grad`.
    pub fn sgd_step(&mut self, grad: &QNetwork, lr: f64) {
        for (p, g) in self.slices_mut().into_iter().zip(grad.slices()) {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Layer-tagged dump: a `shape` line, then one record per weight row and per bias.
    pub fn write_checkpoint<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "shape\t{}\t{}\t{}", self.input_dim(), self.hidden_dim(), self.actions())?;
        for r in 0..self.w1.rows() {
            sink.write_all(codec::record("w1", &r.to_string(), self.w1.row(r)).as_bytes())?;
        }
        sink.write_all(codec::record("b1", "0", &self.b1).as_bytes())?;
        for r in 0..self.w2.rows() {
            sink.write_all(codec::record("w2", &r.to_string(), self.w2.row(r)).as_bytes())?;
        }
        sink.write_all(codec::record("b2", "0", &self.b2).as_bytes())?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(source: R) -> Result<Self> {
        let mut lines = source.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let dims: Vec<usize> = header.split('\t').skip(1).filter_map(|d| d.parse().ok()).collect();
        let [input, hidden, actions] = dims[..] else {
            return Err(Error::Parse {
                line: 1,
                message: "expected a shape header".into(),
            });
        };
        let mut net = Self::zeros(input, hidden, actions);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (kind, idx, values) = codec::parse_record(&line, i + 2)?;
            let row: usize = idx.parse().map_err(|_| Error::Parse {
                line: i + 2,
                message: format!("bad row index {idx}"),
            })?;
            let target: &mut [f64] = match kind.as_str() {
                "w1" if row < hidden => net.w1.row_mut(row),
                "b1" => &mut net.b1,
                "w2" if row < actions => net.w2.row_mut(row),
                "b2" => &mut net.b2,
                _ => {
                    return Err(Error::Parse {
                        line: i + 2,
                        message: format!("unexpected record {kind}:{idx}"),
                    })
                }
            };
            check_len("checkpoint row", target.len(), values.len())?;
            target.copy_from_slice(&values);
        }
        Ok(net)
    }
}

//! Gated update cells shared by the user profile and spatial KG updates.
//!
//! Each cell has a forward pass used by the environment and a backward pass used by
//! the representation gradient. Both paths call the same forward code, so values
//! recomputed for differentiation are bit-identical to the ones the environment stored.

use crate::error::{check_len, Result};
use crate::math::{dot, sigmoid, Matrix};

/// Scalar sigmoid gate `σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Gate {
    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn coefficient(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.w, x) + self.b)
    }

    /// Accumulates the gate's parameter gradient for upstream `g_alpha` and returns the
    /// pre-activation gradient (callers needing `∂/∂x` scale `w` by it).
    fn backward(&self, x: &[f64], alpha: f64, g_alpha: f64, acc: &mut Gate) -> f64 {
        let g_z = g_alpha * alpha * (1.0 - alpha);
        for (a, xi) in acc.w.iter_mut().zip(x) {
            *a += g_z * xi;
        }
        acc.b += g_z;
        g_z
    }
}

/// `σ(W·v + b)`, always in `(0, 1)`.
pub fn gate_coefficient(w: &[f64], b: f64, v: &[f64]) -> Result<f64> {
    check_len("gate weights", w.len(), v.len())?;
    Ok(sigmoid(dot(w, v) + b))
}

/// Parameters of the temporal-context transform `σ(P · T · m + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTransform {
    /// `N × M` zone projection.
    pub projection: Matrix,
    /// Mix of the three flow columns.
    pub flow_mix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ContextTransform {
    pub fn zeros(dim: usize, zones: usize) -> Self {
        Self {
            projection: Matrix::zeros(dim, zones),
            flow_mix: vec![0.0; 3],
            bias: vec![0.0; dim],
        }
    }

    pub fn forward(&self, context: &Matrix) -> Result<Vec<f64>> {
        check_len("context zones", self.projection.cols(), context.rows())?;
        check_len("context flow columns", 3, context.cols())?;
        let mixed = context.matvec(&self.flow_mix)?;
        let mut z = self.projection.matvec(&mixed)?;
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi = sigmoid(*zi + bi);
        }
        Ok(z)
    }

    pub fn backward(&self, context: &Matrix, g_out: &[f64], acc: &mut ContextTransform) -> Result<()> {
        let mixed = context.matvec(&self.flow_mix)?;
        let out = self.forward(context)?;
        let g_z: Vec<f64> = g_out.iter().zip(&out).map(|(g, o)| g * o * (1.0 - o)).collect();
        for (a, g) in acc.bias.iter_mut().zip(&g_z) {
            *a += g;
        }
        acc.projection.add_outer(1.0, &g_z, &mixed);
        let g_mixed = self.projection.matvec_t(&g_z)?;
        let g_mix = context.matvec_t(&g_mixed)?;
        for (a, g) in acc.flow_mix.iter_mut().zip(&g_mix) {
            *a += g;
        }
        Ok(())
    }
}

/// Interaction update: `σ(α·old + (1−α)·c·(partnerᵀ·context))` with `α = gate(old)`.
/// Used for the user profile (partner = visited POI head) and the visited POI head
/// (partner = user profile).
#[derive(Debug, Clone, Copy)]
pub struct InteractionCell<'a> {
    pub candidate: &'a [f64],
    pub gate: &'a Gate,
}

pub struct InteractionTrace {
    pub inner: f64,
    pub alpha: f64,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl InteractionCell<'_> {
    pub fn forward(&self, old: &[f64], partner: &[f64], context: &[f64]) -> Result<InteractionTrace> {
        let n = old.len();
        check_len("interaction partner", n, partner.len())?;
        check_len("interaction context", n, context.len())?;
        check_len("interaction candidate weights", n, self.candidate.len())?;
        check_len("interaction gate weights", n, self.gate.w.len())?;
        let inner = dot(partner, context);
        let alpha = self.gate.coefficient(old);
        let pre: Vec<f64> = old
            .iter()
            .zip(self.candidate)
            .map(|(o, c)| alpha * o + (1.0 - alpha) * (c * inner))
            .collect();
        let out = pre.iter().map(|&p| sigmoid(p)).collect();
        Ok(InteractionTrace { inner, alpha, pre, out })
    }

    /// Backward pass with `old` and `partner` held constant; returns `∂L/∂context`.
    pub fn backward(
        &self,
        old: &[f64],
        partner: &[f64],
        trace: &InteractionTrace,
        g_out: &[f64],
        g_candidate: &mut [f64],
        g_gate: &mut Gate,
    ) -> Vec<f64> {
        let (alpha, inner) = (trace.alpha, trace.inner);
        let mut g_alpha = 0.0;
        let mut g_inner = 0.0;
        for c in 0..old.len() {
            let o = trace.out[c];
            let g_pre = g_out[c] * o * (1.0 - o);
            g_alpha += g_pre * (old[c] - self.candidate[c] * inner);
            g_candidate[c] += g_pre * (1.0 - alpha) * inner;
            g_inner += g_pre * (1.0 - alpha) * self.candidate[c];
        }
        self.gate.backward(old, alpha, g_alpha, g_gate);
        partner.iter().map(|p| g_inner * p).collect()
    }
}

/// Tail update: `α·t_old + (1−α)·(head + rel)`, optionally squashed by a sigmoid.
#[derive(Debug, Clone, Copy)]
pub struct TailCell<'a> {
    pub gate: &'a Gate,
    pub squash: bool,
}

pub struct TailTrace {
    pub alpha: f64,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl TailCell<'_> {
    pub fn forward(&self, tail_old: &[f64], head: &[f64], rel: &[f64]) -> Result<TailTrace> {
        let n = tail_old.len();
        check_len("tail head", n, head.len())?;
        check_len("tail relation", n, rel.len())?;
        check_len("tail gate weights", n, self.gate.w.len())?;
        let alpha = self.gate.coefficient(tail_old);
        let pre: Vec<f64> = (0..n)
            .map(|c| alpha * tail_old[c] + (1.0 - alpha) * (head[c] + rel[c]))
            .collect();
        let out = if self.squash {
            pre.iter().map(|&p| sigmoid(p)).collect()
        } else {
            pre.clone()
        };
        Ok(TailTrace { alpha, pre, out })
    }

    /// Backward pass with `tail_old` held constant; returns `∂L/∂head`.
    pub fn backward(
        &self,
        tail_old: &[f64],
        head: &[f64],
        rel: &[f64],
        trace: &TailTrace,
        g_out: &[f64],
        g_gate: &mut Gate,
    ) -> Vec<f64> {
        let alpha = trace.alpha;
        let mut g_alpha = 0.0;
        let mut g_head = vec![0.0; head.len()];
        for c in 0..head.len() {
            let g_pre = if self.squash {
                g_out[c] * trace.out[c] * (1.0 - trace.out[c])
            } else {
                g_out[c]
            };
            g_alpha += g_pre * (tail_old[c] - head[c] - rel[c]);
            g_head[c] = (1.0 - alpha) * g_pre;
        }
        self.gate.backward(tail_old, alpha, g_alpha, g_gate);
        g_head
    }
}

/// Sibling head update: `σ(α·h_old + (1−α)·(t_new − rel))` with `α = gate(h_old)`.
#[derive(Debug, Clone, Copy)]
pub struct SiblingCell<'a> {
    pub gate: &'a Gate,
}

pub struct SiblingTrace {
    pub alpha: f64,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl SiblingCell<'_> {
    pub fn forward(&self, head_old: &[f64], tail_new: &[f64], rel: &[f64]) -> Result<SiblingTrace> {
        let n = head_old.len();
        check_len("sibling tail", n, tail_new.len())?;
        check_len("sibling relation", n, rel.len())?;
        check_len("sibling gate weights", n, self.gate.w.len())?;
        let alpha = self.gate.coefficient(head_old);
        let pre: Vec<f64> = (0..n)
            .map(|c| alpha * head_old[c] + (1.0 - alpha) * (tail_new[c] - rel[c]))
            .collect();
        let out = pre.iter().map(|&p| sigmoid(p)).collect();
        Ok(SiblingTrace { alpha, pre, out })
    }

    /// Returns `(∂L/∂head_old, ∂L/∂tail_new)`.
    pub fn backward(
        &self,
        head_old: &[f64],
        tail_new: &[f64],
        rel: &[f64],
        trace: &SiblingTrace,
        g_out: &[f64],
        g_gate: &mut Gate,
    ) -> (Vec<f64>, Vec<f64>) {
        let alpha = trace.alpha;
        let n = head_old.len();
        let mut g_alpha = 0.0;
        let mut g_head = vec![0.0; n];
        let mut g_tail = vec![0.0; n];
        for c in 0..n {
            let o = trace.out[c];
            let g_pre = g_out[c] * o * (1.0 - o);
            g_alpha += g_pre * (head_old[c] - (tail_new[c] - rel[c]));
            g_head[c] = alpha * g_pre;
            g_tail[c] = (1.0 - alpha) * g_pre;
        }
        let g_z = self.gate.backward(head_old, alpha, g_alpha, g_gate);
        for (g, w) in g_head.iter_mut().zip(&self.gate.w) {
            *g += g_z * w;
        }
        (g_head, g_tail)
    }
}

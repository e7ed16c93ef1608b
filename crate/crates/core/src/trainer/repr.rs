//! Representation parameters, one-step-truncated state provenance, and the
//! expected-reward surrogate used to train the representation adversarially.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::{ContextTransform, Gate};
use crate::dqn::{softmax, QNetwork};
use crate::error::{check_len, Error, Result};
use crate::kg::{KgState, KgUpdateParams, Relation};
use crate::math::{uniform_vec, Matrix};
use crate::user::{StatePooling, UserUpdateParams};

/// Every weight of the representation module.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationParams {
    pub user: UserUpdateParams,
    pub kg: KgUpdateParams,
}

impl RepresentationParams {
    pub fn zeros(dim: usize, zones: usize) -> Self {
        Self {
            user: UserUpdateParams::zeros(dim, zones),
            kg: KgUpdateParams::zeros(dim),
        }
    }

    /// Candidate directions `±1/N`, gate weights `±1/√N`, context projection `±1/√M`,
    /// flow mix `±1/√3`; all biases start at zero.
    pub fn init(dim: usize, zones: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cand = 1.0 / dim as f64;
        let gate = 1.0 / (dim as f64).sqrt();
        let mut g = |bound| Gate {
            w: uniform_vec(&mut rng, dim, bound),
            b: 0.0,
        };
        let user_gate = g(gate);
        let poi_gate = g(gate);
        let tail_gate = g(gate);
        let sibling_gate = g(gate);
        Self {
            user: UserUpdateParams {
                candidate: uniform_vec(&mut rng, dim, cand),
                gate: user_gate,
                context: ContextTransform {
                    projection: Matrix::random(&mut rng, dim, zones, 1.0 / (zones as f64).sqrt()),
                    flow_mix: uniform_vec(&mut rng, 3, 1.0 / 3f64.sqrt()),
                    bias: vec![0.0; dim],
                },
            },
            kg: KgUpdateParams {
                poi_candidate: uniform_vec(&mut rng, dim, cand),
                poi_gate,
                tail_gate,
                sibling_gate,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.user.candidate.len()
    }

    pub fn zones(&self) -> usize {
        self.user.context.projection.cols()
    }

    fn slices(&self) -> Vec<&[f64]> {
        let (u, k) = (&self.user, &self.kg);
        vec![
            &u.candidate,
            &u.gate.w,
            std::slice::from_ref(&u.gate.b),
            u.context.projection.as_slice(),
            &u.context.flow_mix,
            &u.context.bias,
            &k.poi_candidate,
            &k.poi_gate.w,
            std::slice::from_ref(&k.poi_gate.b),
            &k.tail_gate.w,
            std::slice::from_ref(&k.tail_gate.b),
            &k.sibling_gate.w,
            std::slice::from_ref(&k.sibling_gate.b),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let (u, k) = (&mut self.user, &mut self.kg);
        vec![
            &mut u.candidate,
            &mut u.gate.w,
            std::slice::from_mut(&mut u.gate.b),
            u.context.projection.as_mut_slice(),
            &mut u.context.flow_mix,
            &mut u.context.bias,
            &mut k.poi_candidate,
            &mut k.poi_gate.w,
            std::slice::from_mut(&mut k.poi_gate.b),
            &mut k.tail_gate.w,
            std::slice::from_mut(&mut k.tail_gate.b),
            &mut k.sibling_gate.w,
            std::slice::from_mut(&mut k.sibling_gate.b),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        check_len("representation parameters", self.param_count(), flat.len())?;
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.unflatten(flat)?;
        Ok(out)
    }

    /// `θ ← θ − lr·∇`. A non-finite gradient aborts the step and leaves `θ` untouched.
    pub fn descend(&mut self, grad: &RepresentationParams, lr: f64) -> Result<()> {
        if grad.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite representation gradient".into()));
        }
        for (p, g) in self.slices_mut().into_iter().zip(grad.slices()) {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
        Ok(())
    }
}

/// `θ_R − lr₁·∇`.
pub fn representation_step(params: &mut RepresentationParams, grad: &RepresentationParams, lr: f64) -> Result<()> {
    params.descend(grad, lr)
}

/// Constant inputs of one visit update, kept so that its outputs can be recomputed as
/// functions of the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub user_old: Vec<f64>,
    pub head_old: Vec<f64>,
    pub context: Matrix,
    pub category_tail_old: Vec<f64>,
    pub zone_tail_old: Vec<f64>,
    pub tail_sigmoid: bool,
}

/// Which update last wrote a POI head.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadSource {
    Initial,
    Visited(Arc<VisitRecord>),
    Sibling {
        head_old: Vec<f64>,
        visit: Arc<VisitRecord>,
        via_category: bool,
        via_zone: bool,
    },
}

/// Which update last wrote a user profile.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    Initial,
    Updated(Arc<VisitRecord>),
}

fn visited_head(p: &RepresentationParams, rec: &VisitRecord) -> Result<Vec<f64>> {
    let ctx = p.user.context.forward(&rec.context)?;
    Ok(p.kg.interaction().forward(&rec.head_old, &rec.user_old, &ctx)?.out)
}

fn visited_head_backward(p: &RepresentationParams, rec: &VisitRecord, g_out: &[f64], acc: &mut RepresentationParams) -> Result<()> {
    let ctx = p.user.context.forward(&rec.context)?;
    let cell = p.kg.interaction();
    let trace = cell.forward(&rec.head_old, &rec.user_old, &ctx)?;
    let g_ctx = cell.backward(&rec.head_old, &rec.user_old, &trace, g_out, &mut acc.kg.poi_candidate, &mut acc.kg.poi_gate);
    p.user.context.backward(&rec.context, &g_ctx, &mut acc.user.context)
}

fn updated_profile(p: &RepresentationParams, rec: &VisitRecord) -> Result<Vec<f64>> {
    let ctx = p.user.context.forward(&rec.context)?;
    Ok(p.user.interaction().forward(&rec.user_old, &rec.head_old, &ctx)?.out)
}

fn updated_profile_backward(p: &RepresentationParams, rec: &VisitRecord, g_out: &[f64], acc: &mut RepresentationParams) -> Result<()> {
    let ctx = p.user.context.forward(&rec.context)?;
    let cell = p.user.interaction();
    let trace = cell.forward(&rec.user_old, &rec.head_old, &ctx)?;
    let g_ctx = cell.backward(&rec.user_old, &rec.head_old, &trace, g_out, &mut acc.user.candidate, &mut acc.user.gate);
    p.user.context.backward(&rec.context, &g_ctx, &mut acc.user.context)
}

struct SiblingPath {
    relation: Relation,
    tail_old: Vec<f64>,
}

fn sibling_paths(rec: &VisitRecord, via_category: bool, via_zone: bool) -> Vec<SiblingPath> {
    let mut paths = Vec::with_capacity(2);
    if via_category {
        paths.push(SiblingPath {
            relation: Relation::BelongTo,
            tail_old: rec.category_tail_old.clone(),
        });
    }
    if via_zone {
        paths.push(SiblingPath {
            relation: Relation::LocateAt,
            tail_old: rec.zone_tail_old.clone(),
        });
    }
    paths
}

fn sibling_head(p: &RepresentationParams, kg: &KgState, head_old: &[f64], rec: &VisitRecord, via_category: bool, via_zone: bool) -> Result<Vec<f64>> {
    let visited = visited_head(p, rec)?;
    let tail_cell = p.kg.tail_cell(rec.tail_sigmoid);
    let mut head = head_old.to_vec();
    for path in sibling_paths(rec, via_category, via_zone) {
        let rel = kg.relation(path.relation);
        let tail = tail_cell.forward(&path.tail_old, &visited, rel)?.out;
        head = p.kg.sibling_cell().forward(&head, &tail, rel)?.out;
    }
    Ok(head)
}

#[allow(clippy::too_many_arguments)]
fn sibling_head_backward(
    p: &RepresentationParams,
    kg: &KgState,
    head_old: &[f64],
    rec: &VisitRecord,
    via_category: bool,
    via_zone: bool,
    g_out: &[f64],
    acc: &mut RepresentationParams,
) -> Result<()> {
    let visited = visited_head(p, rec)?;
    let tail_cell = p.kg.tail_cell(rec.tail_sigmoid);
    let sib_cell = p.kg.sibling_cell();
    // Forward, keeping each path's input head, tail and traces.
    let mut stages = Vec::new();
    let mut head = head_old.to_vec();
    for path in sibling_paths(rec, via_category, via_zone) {
        let rel = kg.relation(path.relation);
        let tail_trace = tail_cell.forward(&path.tail_old, &visited, rel)?;
        let sib_trace = sib_cell.forward(&head, &tail_trace.out, rel)?;
        let next = sib_trace.out.clone();
        stages.push((path, head, tail_trace, sib_trace));
        head = next;
    }
    let mut g_head = g_out.to_vec();
    let mut g_visited = vec![0.0; visited.len()];
    for (path, head_in, tail_trace, sib_trace) in stages.iter().rev() {
        let rel = kg.relation(path.relation);
        let (g_prev, g_tail) = sib_cell.backward(head_in, &tail_trace.out, rel, sib_trace, &g_head, &mut acc.kg.sibling_gate);
        let g_v = tail_cell.backward(&path.tail_old, &visited, rel, tail_trace, &g_tail, &mut acc.kg.tail_gate);
        for (a, b) in g_visited.iter_mut().zip(&g_v) {
            *a += b;
        }
        g_head = g_prev;
    }
    visited_head_backward(p, rec, &g_visited, acc)
}

/// Latest-write records for every head and profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub heads: Vec<HeadSource>,
    pub profiles: Vec<ProfileSource>,
}

impl Provenance {
    pub fn new(pois: usize, users: usize) -> Self {
        Self {
            heads: vec![HeadSource::Initial; pois],
            profiles: vec![ProfileSource::Initial; users],
        }
    }

    /// Head of `poi` recomputed under `p`; `Initial` heads read the stored value.
    pub fn head(&self, p: &RepresentationParams, kg: &KgState, poi: usize) -> Result<Vec<f64>> {
        match &self.heads[poi] {
            HeadSource::Initial => Ok(kg.head(poi).to_vec()),
            HeadSource::Visited(rec) => visited_head(p, rec),
            HeadSource::Sibling {
                head_old,
                visit,
                via_category,
                via_zone,
            } => sibling_head(p, kg, head_old, visit, *via_category, *via_zone),
        }
    }

    fn head_backward(&self, p: &RepresentationParams, kg: &KgState, poi: usize, g: &[f64], acc: &mut RepresentationParams) -> Result<()> {
        match &self.heads[poi] {
            HeadSource::Initial => Ok(()),
            HeadSource::Visited(rec) => visited_head_backward(p, rec, g, acc),
            HeadSource::Sibling {
                head_old,
                visit,
                via_category,
                via_zone,
            } => sibling_head_backward(p, kg, head_old, visit, *via_category, *via_zone, g, acc),
        }
    }

    pub fn profile(&self, p: &RepresentationParams, user: usize, stored: &[f64]) -> Result<Vec<f64>> {
        match &self.profiles[user] {
            ProfileSource::Initial => Ok(stored.to_vec()),
            ProfileSource::Updated(rec) => updated_profile(p, rec),
        }
    }

    fn profile_backward(&self, p: &RepresentationParams, user: usize, g: &[f64], acc: &mut RepresentationParams) -> Result<()> {
        match &self.profiles[user] {
            ProfileSource::Initial => Ok(()),
            ProfileSource::Updated(rec) => updated_profile_backward(p, rec, g, acc),
        }
    }
}

/// Everything that determines one user's decision state, for differentiation.
#[derive(Debug, Clone, Copy)]
pub struct StateInputs<'a> {
    pub kg: &'a KgState,
    pub provenance: &'a Provenance,
    pub user: usize,
    pub stored_profile: &'a [f64],
    pub last_poi: Option<usize>,
    pub pooling: StatePooling,
    pub context: &'a Matrix,
}

/// Decision state recomputed as a function of `p` (previous-step inputs held constant).
pub fn state_forward(p: &RepresentationParams, s: &StateInputs<'_>) -> Result<Vec<f64>> {
    let n = p.dim();
    let mut out = s.provenance.profile(p, s.user, s.stored_profile)?;
    match (s.pooling, s.last_poi) {
        (StatePooling::Mean, _) => {
            let count = s.kg.heads().len();
            let mut mean = vec![0.0; n];
            for poi in 0..count {
                for (m, v) in mean.iter_mut().zip(s.provenance.head(p, s.kg, poi)?) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count.max(1) as f64);
            out.extend(mean);
        }
        (StatePooling::LastPoi, Some(poi)) => out.extend(s.provenance.head(p, s.kg, poi)?),
        (StatePooling::LastPoi, None) => out.extend(std::iter::repeat_n(0.0, n)),
    }
    out.extend(p.user.context.forward(s.context)?);
    Ok(out)
}

pub fn state_backward(p: &RepresentationParams, s: &StateInputs<'_>, g_state: &[f64], acc: &mut RepresentationParams) -> Result<()> {
    let n = p.dim();
    check_len("state gradient", 3 * n, g_state.len())?;
    let (g_u, rest) = g_state.split_at(n);
    let (g_h, g_ctx) = rest.split_at(n);
    s.provenance.profile_backward(p, s.user, g_u, acc)?;
    match (s.pooling, s.last_poi) {
        (StatePooling::Mean, _) => {
            let count = s.kg.heads().len();
            let scaled: Vec<f64> = g_h.iter().map(|g| g / count.max(1) as f64).collect();
            for poi in 0..count {
                s.provenance.head_backward(p, s.kg, poi, &scaled, acc)?;
            }
        }
        (StatePooling::LastPoi, Some(poi)) => s.provenance.head_backward(p, s.kg, poi, g_h, acc)?,
        (StatePooling::LastPoi, None) => {}
    }
    p.user.context.backward(s.context, g_ctx, &mut acc.user.context)
}

pub const REWARD_CLAMP: f64 = 1.0 - 1e-7;

/// Value and `∂/∂q` of `log(1 − r̄)` with `r̄ = Σ softmax(q/τ)·reward`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLoss {
    pub loss: f64,
    pub expected_reward: f64,
    pub grad_q: Vec<f64>,
}

pub fn representation_loss(q: &[f64], per_action_reward: &[f64], tau: f64) -> Result<SurrogateLoss> {
    check_len("per-action rewards", q.len(), per_action_reward.len())?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let scaled: Vec<f64> = q.iter().map(|v| v / tau).collect();
    let probs = softmax(&scaled);
    let expected: f64 = probs.iter().zip(per_action_reward).map(|(p, r)| p * r).sum();
    let clamped = expected.min(REWARD_CLAMP);
    let loss = (1.0 - clamped).ln();
    let d_expected = if expected < REWARD_CLAMP { -1.0 / (1.0 - expected) } else { 0.0 };
    let grad_q = probs
        .iter()
        .zip(per_action_reward)
        .map(|(p, r)| d_expected * p * (r - expected) / tau)
        .collect();
    Ok(SurrogateLoss {
        loss,
        expected_reward: expected,
        grad_q,
    })
}

/// Surrogate loss of the recomputed state under `p`.
pub fn surrogate_value(p: &RepresentationParams, net: &QNetwork, s: &StateInputs<'_>, rewards: &[f64], tau: f64) -> Result<f64> {
    let state = state_forward(p, s)?;
    Ok(representation_loss(&net.q_values(&state)?, rewards, tau)?.loss)
}

/// Surrogate loss and its gradient with respect to every representation parameter.
pub fn surrogate_gradient(
    p: &RepresentationParams,
    net: &QNetwork,
    s: &StateInputs<'_>,
    rewards: &[f64],
    tau: f64,
) -> Result<(SurrogateLoss, RepresentationParams)> {
    let state = state_forward(p, s)?;
    let trace = net.forward_trace(&state)?;
    let loss = representation_loss(&trace.q, rewards, tau)?;
    let g_state = net.input_gradient(&trace, &loss.grad_q);
    let mut grad = RepresentationParams::zeros(p.dim(), p.zones());
    state_backward(p, s, &g_state, &mut grad)?;
    Ok((loss, grad))
}

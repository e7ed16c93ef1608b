//! User profiles, the temporal-context transform and per-decision state assembly.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::{ContextTransform, Gate, InteractionCell};
use crate::codec;
use crate::error::{check_len, Error, Result};
use crate::kg::KgState;
use crate::math::{uniform_vec, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub u: Vec<f64>,
    pub last_poi: Option<usize>,
    pub step: u64,
}

/// Weights of the user update and the temporal-context transform.
#[derive(Debug, Clone, PartialEq)]
pub struct UserUpdateParams {
    /// Direction of the profile candidate, scaled by `h_poiᵀ·T̃`.
    pub candidate: Vec<f64>,
    pub gate: Gate,
    pub context: ContextTransform,
}

impl UserUpdateParams {
    pub fn zeros(dim: usize, zones: usize) -> Self {
        Self {
            candidate: vec![0.0; dim],
            gate: Gate::zeros(dim),
            context: ContextTransform::zeros(dim, zones),
        }
    }

    pub(crate) fn interaction(&self) -> InteractionCell<'_> {
        InteractionCell {
            candidate: &self.candidate,
            gate: &self.gate,
        }
    }
}

/// How the middle slot of the state vector is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatePooling {
    /// Head of the user's last visited POI (zeros before the first visit).
    #[default]
    LastPoi,
    /// Mean of all POI heads.
    Mean,
}

/// `concat(u, h, T̃)`, length `3N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub step: u64,
}

impl StateVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `σ(P · T · m + c)`, componentwise in `(0, 1)`.
pub fn temporal_transform(params: &UserUpdateParams, context: &Matrix) -> Result<Vec<f64>> {
    params.context.forward(context)
}

/// Applies the gated profile update for a visit to `poi` whose pre-visit head is `h_poi`.
pub fn update_user_profile(
    profile: &mut UserProfile,
    params: &UserUpdateParams,
    poi: usize,
    h_poi: &[f64],
    context: &[f64],
) -> Result<()> {
    check_len("user profile", params.candidate.len(), profile.u.len())?;
    let next = params.interaction().forward(&profile.u, h_poi, context)?.out;
    profile.u = next;
    profile.last_poi = Some(poi);
    profile.step += 1;
    Ok(())
}

pub fn assemble_state(profile: &UserProfile, kg: &KgState, context: &[f64], pooling: StatePooling) -> StateVector {
    let n = profile.u.len();
    let mut values = Vec::with_capacity(3 * n);
    values.extend_from_slice(&profile.u);
    match (pooling, profile.last_poi) {
        (StatePooling::Mean, _) => values.extend(kg.mean_head()),
        (StatePooling::LastPoi, Some(p)) => values.extend_from_slice(kg.head(p)),
        (StatePooling::LastPoi, None) => values.extend(std::iter::repeat_n(0.0, n)),
    }
    values.extend_from_slice(context);
    StateVector {
        values,
        step: profile.step,
    }
}

/// Profiles addressed by dense index, ordered by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    profiles: Vec<UserProfile>,
    index: HashMap<String, usize>,
}

/// Uniform `[−0.5/N, 0.5/N]` initialisation, deterministic per seed.
pub fn init_users<I, S>(user_ids: I, dim: usize, seed: u64) -> Result<ProfileTable>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    let mut ids: Vec<String> = user_ids.into_iter().map(Into::into).collect();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::Config("no users to profile".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.5 / dim as f64;
    let profiles: Vec<UserProfile> = ids
        .into_iter()
        .map(|user_id| UserProfile {
            user_id,
            u: uniform_vec(&mut rng, dim, bound),
            last_poi: None,
            step: 0,
        })
        .collect();
    Ok(ProfileTable::from_profiles(profiles))
}

impl ProfileTable {
    fn from_profiles(profiles: Vec<UserProfile>) -> Self {
        let index = profiles.iter().enumerate().map(|(i, p)| (p.user_id.clone(), i)).collect();
        Self { profiles, index }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn index_of(&self, user_id: &str) -> Option<usize> {
        self.index.get(user_id).copied()
    }

    pub fn get(&self, idx: usize) -> &UserProfile {
        &self.profiles[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut UserProfile {
        &mut self.profiles[idx]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, UserProfile> {
        self.profiles.iter()
    }

    /// One `user<TAB>id<TAB>hex floats` line per profile.
    pub fn write_snapshot<W: Write>(&self, mut sink: W) -> Result<()> {
        for p in &self.profiles {
            sink.write_all(codec::record("user", &p.user_id, &p.u).as_bytes())?;
        }
        Ok(())
    }

    /// Reads profile vectors back; bookkeeping (`last_poi`, `step`) starts fresh.
    pub fn read_snapshot<R: BufRead>(source: R) -> Result<Self> {
        let mut profiles = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (kind, user_id, u) = codec::parse_record(&line, i + 1)?;
            if kind != "user" {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected a user record, got {kind}"),
                });
            }
            profiles.push(UserProfile {
                user_id,
                u,
                last_poi: None,
                step: 0,
            });
        }
        Ok(Self::from_profiles(profiles))
    }
}

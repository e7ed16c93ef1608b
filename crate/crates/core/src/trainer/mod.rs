//! The closed training loop: environment step, agent step, reward, DQN update and the
//! adversarial representation update.

pub mod repr;

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec;
use crate::dqn::{select_action, Agent, DqnConfig, Transition};
use crate::error::{Error, Result};
use crate::kg::{init_kg, kg_step, KgSchema, KgState, KgStepOutcome};
use crate::math::{haversine_km, Matrix};
use crate::mobility::{CheckinEvent, EventSequence, TemporalContexts};
use crate::reward::{compute_reward, score, BaselineWindows, CategoryVectors, RewardBreakdown, RewardComponents, RewardConfig};
use crate::user::{assemble_state, init_users, temporal_transform, update_user_profile, ProfileTable, StatePooling};

pub use repr::{
    representation_loss, representation_step, state_backward, state_forward, surrogate_gradient, surrogate_value, HeadSource,
    ProfileSource, Provenance, RepresentationParams, StateInputs, SurrogateLoss, VisitRecord,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub dim: usize,
    /// Representation learning rate (lr₁); the imitation rate lives in `dqn.learning_rate`.
    pub repr_learning_rate: f64,
    /// Temperature of the surrogate's softmax over Q-values.
    pub tau: f64,
    pub epochs: usize,
    pub seed: u64,
    pub pooling: StatePooling,
    pub tail_sigmoid: bool,
    pub reward: RewardConfig,
    pub dqn: DqnConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            repr_learning_rate: 1e-3,
            tau: 1.0,
            epochs: 1,
            seed: 0,
            pooling: StatePooling::LastPoi,
            tail_sigmoid: false,
            reward: RewardConfig::default(),
            dqn: DqnConfig::default(),
        }
    }
}

impl TrainerConfig {
    /// Zero learning rates are accepted so that either module can be frozen.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if !(self.repr_learning_rate >= 0.0 && self.repr_learning_rate.is_finite()) {
            return Err(Error::Config("representation learning rate must be finite and non-negative".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.reward.validate()?;
        self.dqn.validate()
    }
}

/// Independent seed for one consumer of a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stream.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

const SEED_KG: u64 = 1;
const SEED_USERS: u64 = 2;
const SEED_PARAMS: u64 = 3;
const SEED_NETWORK: u64 = 4;
const SEED_LOOP: u64 = 5;

/// Static environment data shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct World {
    pub schema: KgSchema,
    pub contexts: TemporalContexts,
    pub vectors: CategoryVectors,
    users: Vec<String>,
    category_similarity: Matrix,
}

impl World {
    pub fn new<I, S>(schema: KgSchema, contexts: TemporalContexts, vectors: CategoryVectors, users: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if contexts.zones() != schema.zone_count() {
            return Err(Error::Config(format!(
                "temporal contexts cover {} zones but the schema has {}",
                contexts.zones(),
                schema.zone_count()
            )));
        }
        let mut users: Vec<String> = users.into_iter().map(Into::into).collect();
        users.sort();
        users.dedup();
        let cats = schema.categories();
        let mut category_similarity = Matrix::zeros(cats.len(), cats.len());
        for (a, ca) in cats.iter().enumerate() {
            for (b, cb) in cats.iter().enumerate() {
                *category_similarity.get_mut(a, b) = vectors.similarity(&ca.name, &cb.name);
            }
        }
        Ok(Self {
            schema,
            contexts,
            vectors,
            users,
            category_similarity,
        })
    }

    /// World whose users are those appearing in `events`.
    pub fn from_events(schema: KgSchema, contexts: TemporalContexts, vectors: CategoryVectors, events: &EventSequence) -> Result<Self> {
        let users: Vec<&str> = events.iter().map(|e| e.user_id.as_str()).collect();
        Self::new(schema, contexts, vectors, users)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn action_count(&self) -> usize {
        self.schema.poi_count()
    }

    /// Reward components of predicting `action` when the user really visited `real`.
    pub fn components(&self, action: usize, real: usize, distance_floor_km: f64) -> RewardComponents {
        let (a, r) = (self.schema.poi(action), self.schema.poi(real));
        RewardComponents {
            distance: 1.0 / (haversine_km(a.location, r.location) + distance_floor_km),
            category: self.category_similarity.get(a.category, r.category),
            exact: if action == real { 1.0 } else { 0.0 },
        }
    }

    fn locate(&self, profiles: &ProfileTable, event: &CheckinEvent) -> Result<(usize, usize)> {
        let user = profiles.index_of(&event.user_id).ok_or_else(|| Error::Lookup {
            kind: "user",
            id: event.user_id.clone(),
        })?;
        let poi = self.schema.poi_index(&event.poi_id).ok_or_else(|| Error::Lookup {
            kind: "POI",
            id: event.poi_id.clone(),
        })?;
        Ok((user, poi))
    }
}

/// Everything a run learns or mutates.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub profiles: ProfileTable,
    pub kg: KgState,
    pub params: RepresentationParams,
    pub agent: Agent,
    pub provenance: Provenance,
    pub pooling: StatePooling,
    pub tail_sigmoid: bool,
}

impl Model {
    pub fn new(world: &World, cfg: &TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.dim;
        let profiles = init_users(world.users().iter().cloned(), n, derive_seed(cfg.seed, SEED_USERS))?;
        let kg = init_kg(&world.schema, n, derive_seed(cfg.seed, SEED_KG))?;
        let params = RepresentationParams::init(n, world.schema.zone_count(), derive_seed(cfg.seed, SEED_PARAMS));
        let mut net_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SEED_NETWORK));
        let agent = Agent::new(cfg.dqn.clone(), 3 * n, world.action_count(), &mut net_rng)?;
        Ok(Self {
            provenance: Provenance::new(world.schema.poi_count(), profiles.len()),
            profiles,
            kg,
            params,
            agent,
            pooling: cfg.pooling,
            tail_sigmoid: cfg.tail_sigmoid,
        })
    }

    pub fn dim(&self) -> usize {
        self.kg.dim()
    }

    /// `T` for the window containing `timestamp` and its transform under the current parameters.
    pub fn context(&self, world: &World, timestamp: i64) -> Result<(Matrix, Vec<f64>)> {
        let t = world.contexts.at(timestamp);
        let transformed = temporal_transform(&self.params.user, &t)?;
        Ok((t, transformed))
    }

    pub fn state(&self, user: usize, transformed_context: &[f64]) -> Vec<f64> {
        assemble_state(self.profiles.get(user), &self.kg, transformed_context, self.pooling).values
    }

    /// Applies the profile and KG updates for `user` visiting `poi` under context `t`,
    /// recording the inputs needed to differentiate the result later.
    pub fn observe(&mut self, world: &World, user: usize, poi: usize, t: &Matrix) -> Result<KgStepOutcome> {
        let transformed = temporal_transform(&self.params.user, t)?;
        let visited = world.schema.poi(poi);
        let siblings = world.schema.siblings(poi)?;
        let sibling_heads: Vec<Vec<f64>> = siblings.iter().map(|&j| self.kg.head(j).to_vec()).collect();
        let record = Arc::new(VisitRecord {
            user_old: self.profiles.get(user).u.clone(),
            head_old: self.kg.head(poi).to_vec(),
            context: t.clone(),
            category_tail_old: self.kg.category_tail(visited.category).to_vec(),
            zone_tail_old: self.kg.zone_tail(visited.zone).to_vec(),
            tail_sigmoid: self.tail_sigmoid,
        });
        update_user_profile(self.profiles.get_mut(user), &self.params.user, poi, &record.head_old, &transformed)?;
        let outcome = kg_step(
            &mut self.kg,
            &world.schema,
            &self.params.kg,
            poi,
            &record.user_old,
            &transformed,
            self.tail_sigmoid,
        )?;
        for (j, head_old) in siblings.into_iter().zip(sibling_heads) {
            let other = world.schema.poi(j);
            self.provenance.heads[j] = HeadSource::Sibling {
                head_old,
                visit: Arc::clone(&record),
                via_category: other.category == visited.category,
                via_zone: other.zone == visited.zone,
            };
        }
        self.provenance.heads[poi] = HeadSource::Visited(Arc::clone(&record));
        self.provenance.profiles[user] = ProfileSource::Updated(record);
        Ok(outcome)
    }

    /// Writes `profiles/`, `kg/` and `qnet/` under `dir`.
    pub fn write_snapshots(&self, world: &World, dir: &Path) -> Result<()> {
        for sub in ["profiles", "kg", "qnet"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let open = |p: &Path| -> Result<BufWriter<fs::File>> { Ok(BufWriter::new(fs::File::create(p)?)) };
        let mut f = open(&dir.join("profiles/profiles.tsv"))?;
        self.profiles.write_snapshot(&mut f)?;
        f.flush()?;
        let mut f = open(&dir.join("kg/kg.tsv"))?;
        self.kg.write_snapshot(&world.schema, &mut f)?;
        f.flush()?;
        let mut f = open(&dir.join("kg/update_params.tsv"))?;
        f.write_all(codec::record("theta", "all", &self.params.flatten()).as_bytes())?;
        f.flush()?;
        let mut f = open(&dir.join("qnet/eval.tsv"))?;
        self.agent.eval.write_checkpoint(&mut f)?;
        f.flush()?;
        let mut f = open(&dir.join("qnet/target.tsv"))?;
        self.agent.target.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub user: usize,
    pub real: usize,
    pub action: usize,
    pub breakdown: RewardBreakdown,
    pub dqn_loss: Option<f64>,
    pub repr_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.breakdown.reward).collect()
    }

    /// Tab-separated with a header; the action column holds the POI identifier.
    pub fn write<W: Write>(&self, schema: &KgSchema, mut sink: W) -> Result<()> {
        writeln!(sink, "step\taction\tr_d\tr_c\tr_p\tr\tdqn_loss\trepr_loss")?;
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            let c = r.breakdown.components;
            let _ = write!(
                line,
                "{}\t{}\t{}\t{}\t{}\t{}\t",
                r.step,
                schema.poi(r.action).id,
                c.distance,
                c.category,
                c.exact,
                r.breakdown.reward
            );
            match r.dqn_loss {
                Some(l) => {
                    let _ = write!(line, "{l}");
                }
                None => line.push_str("NA"),
            }
            let _ = writeln!(line, "\t{}", r.repr_loss);
            sink.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// What one loop iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub record: LogRecord,
    pub kg: KgStepOutcome,
}

/// Stateful driver of the closed loop.
pub struct Trainer<'w> {
    world: &'w World,
    config: TrainerConfig,
    model: Model,
    windows: BaselineWindows,
    rng: ChaCha8Rng,
    /// Each user's latest transition, waiting for that user's next state.
    pending: Vec<Option<Transition>>,
    log: TrainingLog,
}

impl<'w> Trainer<'w> {
    pub fn new(world: &'w World, config: TrainerConfig) -> Result<Self> {
        let model = Model::new(world, &config)?;
        Ok(Self {
            world,
            windows: BaselineWindows::new(config.reward.window),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_LOOP)),
            pending: vec![None; model.profiles.len()],
            log: TrainingLog::default(),
            model,
            config,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn step(&mut self, event: &CheckinEvent) -> Result<StepReport> {
        let step = self.log.records.len();
        self.step_inner(event, step).map_err(|e| Error::AtStep {
            step,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, event: &CheckinEvent, step: usize) -> Result<StepReport> {
        let world = self.world;
        let (user, real) = world.locate(&self.model.profiles, event)?;

        // (1) state
        let (t, transformed) = self.model.context(world, event.timestamp)?;
        let state = self.model.state(user, &transformed);

        // (2) action
        let action = select_action(&self.model.agent.eval, &state, self.config.dqn.greedy, &mut self.rng)?;

        // (3) rewards for every candidate against this step's baselines, then the realized one
        let baselines = self.windows.baselines();
        let floor = self.config.reward.distance_floor_km;
        let per_action: Vec<f64> = (0..world.action_count())
            .map(|a| score(&self.config.reward, world.components(a, real, floor), baselines))
            .collect();
        let breakdown = compute_reward(&self.config.reward, &mut self.windows, world.components(action, real, floor));

        // (4) the user's previous transition is complete now that its successor state is known
        if let Some(mut prev) = self.pending[user].take() {
            prev.next_state = state.clone();
            self.model.agent.remember(prev)?;
        }
        self.pending[user] = Some(Transition {
            state: state.clone(),
            action,
            reward: breakdown.reward,
            next_state: Vec::new(),
            priority: 0.0,
        });

        // (5, 6) imitation update and target sync
        let dqn_loss = self.model.agent.learn(&mut self.rng)?;

        // (7) representation update
        let profile = self.model.profiles.get(user);
        let inputs = StateInputs {
            kg: &self.model.kg,
            provenance: &self.model.provenance,
            user,
            stored_profile: &profile.u,
            last_poi: profile.last_poi,
            pooling: self.model.pooling,
            context: &t,
        };
        let repr_loss = if self.config.repr_learning_rate > 0.0 {
            let (loss, grad) = surrogate_gradient(&self.model.params, &self.model.agent.eval, &inputs, &per_action, self.config.tau)?;
            representation_step(&mut self.model.params, &grad, self.config.repr_learning_rate)?;
            loss.loss
        } else {
            let q = self.model.agent.eval.q_values(&state)?;
            representation_loss(&q, &per_action, self.config.tau)?.loss
        };

        // (8) environment update with the real visit
        let kg = self.model.observe(world, user, real, &t)?;

        let record = LogRecord {
            step,
            user,
            real,
            action,
            breakdown,
            dqn_loss,
            repr_loss,
        };
        self.log.records.push(record.clone());
        Ok(StepReport { record, kg })
    }

    pub fn run(&mut self, events: &EventSequence) -> Result<()> {
        for event in events {
            self.step(event)?;
        }
        Ok(())
    }

    pub fn finish(self) -> (Model, TrainingLog) {
        (self.model, self.log)
    }
}

/// Trains on `train` for the configured number of epochs.
pub fn run_training(world: &World, train: &EventSequence, config: TrainerConfig) -> Result<(Model, TrainingLog)> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(world, config)?;
    for _ in 0..epochs {
        trainer.run(train)?;
    }
    Ok(trainer.finish())
}

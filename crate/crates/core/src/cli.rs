//! Run configuration, layered parsing (defaults < config file < flags) and the two
//! experiment drivers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, Command};

use crate::dqn::{DqnConfig, PriorityStrategy, Sampling};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_predictions, MetricsReport, Policy, CSV_HEADER};
use crate::kg::KgSchema;
use crate::mobility::{
    build_temporal_context, parse_checkins, parse_taxi, split_groups, split_train_test, ColumnMap, EventSequence, ZoneGrid,
};
use crate::reward::{CategoryVectors, RewardConfig};
use crate::synth::{generate_synthetic, SynthSpec};
use crate::trainer::{run_training, TrainerConfig, World};
use crate::user::StatePooling;

pub const ROBUSTNESS_GROUPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckinFormat {
    Canonical,
    Foursquare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// 0: overall experiment, 1: robustness check.
    pub cross_validation: u8,
    pub priority_mode: PriorityStrategy,
    pub ld: f64,
    pub lc: f64,
    pub lp: f64,
    /// Probability of the greedy action.
    pub epsilon: f64,
    pub gamma: f64,
    pub memory_capacity: usize,
    pub batch_size: usize,
    pub lr1: f64,
    pub lr2: f64,
    pub time_window: usize,
    pub target_replace_iter: u64,
    pub seed: u64,
    pub dim: usize,
    pub hidden: usize,
    pub tau: f64,
    pub epochs: usize,
    pub sampling: Sampling,
    pub state_pooling: StatePooling,
    pub tail_sigmoid: bool,
    pub distance_floor: f64,
    pub train_ratio: f64,
    pub checkins: Option<PathBuf>,
    pub taxi: Option<PathBuf>,
    pub checkin_format: CheckinFormat,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub word_vectors: Option<PathBuf>,
    pub vector_dim: usize,
    pub synth_users: usize,
    pub synth_pois: usize,
    pub synth_categories: usize,
    pub synth_events: usize,
    pub synth_stickiness: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cross_validation: 0,
            priority_mode: PriorityStrategy::Reward,
            ld: 0.2,
            lc: 0.6,
            lp: 0.2,
            epsilon: 0.97,
            gamma: 0.94,
            memory_capacity: 128,
            batch_size: 32,
            lr1: 1e-3,
            lr2: 1e-4,
            time_window: 5,
            target_replace_iter: 5,
            seed: 0,
            dim: 200,
            hidden: 64,
            tau: 1.0,
            epochs: 1,
            sampling: Sampling::Softmax,
            state_pooling: StatePooling::LastPoi,
            tail_sigmoid: false,
            distance_floor: 0.1,
            train_ratio: 0.9,
            checkins: None,
            taxi: None,
            checkin_format: CheckinFormat::Canonical,
            grid_rows: 4,
            grid_cols: 4,
            word_vectors: None,
            vector_dim: 50,
            synth_users: 5,
            synth_pois: 20,
            synth_categories: 4,
            synth_events: 2200,
            synth_stickiness: 0.9,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Keys accepted on the command line and in config files, in echo order.
pub const KEYS: [&str; 38] = [
    "cross_validation",
    "priority_mode",
    "ld",
    "lc",
    "lp",
    "epsilon",
    "gamma",
    "memory_capacity",
    "batch_size",
    "lr1",
    "lr2",
    "time_window",
    "target_replace_iter",
    "seed",
    "dim",
    "hidden",
    "tau",
    "epochs",
    "sampling",
    "state_pooling",
    "tail_sigmoid",
    "distance_floor",
    "train_ratio",
    "checkins",
    "taxi",
    "checkin_format",
    "grid_rows",
    "grid_cols",
    "word_vectors",
    "vector_dim",
    "synth_users",
    "synth_pois",
    "synth_categories",
    "synth_events",
    "synth_stickiness",
    "out_dir",
    "lr",
    "reward_mode",
];

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| usage(format!("--{key}={value}: {e}")))
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one field from its textual form. `lr` and `reward_mode` are resolved by the caller.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "cross_validation" => self.cross_validation = num(key, v)?,
            "priority_mode" => {
                self.priority_mode = match v.trim_matches(|c| c == '\'' || c == '"') {
                    "r" => PriorityStrategy::Reward,
                    "td" => PriorityStrategy::TdError,
                    other => return Err(usage(format!("--priority_mode must be r or td, got {other}"))),
                }
            }
            "ld" | "ll" => self.ld = num(key, v)?,
            "lc" => self.lc = num(key, v)?,
            "lp" => self.lp = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "memory_capacity" => self.memory_capacity = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr1" => self.lr1 = num(key, v)?,
            "lr2" => self.lr2 = num(key, v)?,
            "time_window" => self.time_window = num(key, v)?,
            "target_replace_iter" => self.target_replace_iter = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "dim" => self.dim = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "sampling" => {
                self.sampling = match v {
                    "softmax" => Sampling::Softmax,
                    "topk" => Sampling::TopK,
                    other => return Err(usage(format!("--sampling must be softmax or topk, got {other}"))),
                }
            }
            "state_pooling" => {
                self.state_pooling = match v {
                    "last" => StatePooling::LastPoi,
                    "mean" => StatePooling::Mean,
                    other => return Err(usage(format!("--state_pooling must be last or mean, got {other}"))),
                }
            }
            "tail_sigmoid" => self.tail_sigmoid = num(key, v)?,
            "distance_floor" => self.distance_floor = num(key, v)?,
            "train_ratio" => self.train_ratio = num(key, v)?,
            "checkins" => self.checkins = path(v),
            "taxi" => self.taxi = path(v),
            "checkin_format" => {
                self.checkin_format = match v {
                    "canonical" => CheckinFormat::Canonical,
                    "foursquare" => CheckinFormat::Foursquare,
                    other => return Err(usage(format!("--checkin_format must be canonical or foursquare, got {other}"))),
                }
            }
            "grid_rows" => self.grid_rows = num(key, v)?,
            "grid_cols" => self.grid_cols = num(key, v)?,
            "word_vectors" => self.word_vectors = path(v),
            "vector_dim" => self.vector_dim = num(key, v)?,
            "synth_users" => self.synth_users = num(key, v)?,
            "synth_pois" => self.synth_pois = num(key, v)?,
            "synth_categories" => self.synth_categories = num(key, v)?,
            "synth_events" => self.synth_events = num(key, v)?,
            "synth_stickiness" => self.synth_stickiness = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(usage(format!("unknown option {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |k: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(usage(format!("--{k} must lie in [0, 1], got {v}")))
            }
        };
        if self.cross_validation > 1 {
            return Err(usage(format!("--cross_validation must be 0 or 1, got {}", self.cross_validation)));
        }
        unit("epsilon", self.epsilon)?;
        unit("gamma", self.gamma)?;
        unit("synth_stickiness", self.synth_stickiness)?;
        if self.ld < 0.0 || self.lc < 0.0 || self.lp < 0.0 || !(self.ld + self.lc + self.lp > 0.0) {
            return Err(usage("reward weights must be non-negative with a positive sum"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(usage(format!("--train_ratio must lie in (0, 1), got {}", self.train_ratio)));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(usage("grid dimensions must be positive"));
        }
        self.trainer_config().validate().map_err(|e| usage(e.to_string()))
    }

    /// `key=value` lines covering every field; parsing them back yields `self`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("cross_validation", self.cross_validation.to_string());
        put(
            "priority_mode",
            match self.priority_mode {
                PriorityStrategy::Reward => "r",
                PriorityStrategy::TdError => "td",
            }
            .into(),
        );
        put("ld", self.ld.to_string());
        put("lc", self.lc.to_string());
        put("lp", self.lp.to_string());
        put("epsilon", self.epsilon.to_string());
        put("gamma", self.gamma.to_string());
        put("memory_capacity", self.memory_capacity.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr1", self.lr1.to_string());
        put("lr2", self.lr2.to_string());
        put("time_window", self.time_window.to_string());
        put("target_replace_iter", self.target_replace_iter.to_string());
        put("seed", self.seed.to_string());
        put("dim", self.dim.to_string());
        put("hidden", self.hidden.to_string());
        put("tau", self.tau.to_string());
        put("epochs", self.epochs.to_string());
        put(
            "sampling",
            match self.sampling {
                Sampling::Softmax => "softmax",
                Sampling::TopK => "topk",
            }
            .into(),
        );
        put(
            "state_pooling",
            match self.state_pooling {
                StatePooling::LastPoi => "last",
                StatePooling::Mean => "mean",
            }
            .into(),
        );
        put("tail_sigmoid", self.tail_sigmoid.to_string());
        put("distance_floor", self.distance_floor.to_string());
        put("train_ratio", self.train_ratio.to_string());
        put("checkins", show_path(&self.checkins));
        put("taxi", show_path(&self.taxi));
        put(
            "checkin_format",
            match self.checkin_format {
                CheckinFormat::Canonical => "canonical",
                CheckinFormat::Foursquare => "foursquare",
            }
            .into(),
        );
        put("grid_rows", self.grid_rows.to_string());
        put("grid_cols", self.grid_cols.to_string());
        put("word_vectors", show_path(&self.word_vectors));
        put("vector_dim", self.vector_dim.to_string());
        put("synth_users", self.synth_users.to_string());
        put("synth_pois", self.synth_pois.to_string());
        put("synth_categories", self.synth_categories.to_string());
        put("synth_events", self.synth_events.to_string());
        put("synth_stickiness", self.synth_stickiness.to_string());
        put("out_dir", self.out_dir.display().to_string());
        out
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            dim: self.dim,
            repr_learning_rate: self.lr1,
            tau: self.tau,
            epochs: self.epochs,
            seed: self.seed,
            pooling: self.state_pooling,
            tail_sigmoid: self.tail_sigmoid,
            reward: RewardConfig {
                distance_weight: self.ld,
                category_weight: self.lc,
                exact_weight: self.lp,
                window: self.time_window,
                distance_floor_km: self.distance_floor,
            },
            dqn: DqnConfig {
                gamma: self.gamma,
                greedy: self.epsilon,
                batch_size: self.batch_size,
                target_replace_iter: self.target_replace_iter,
                learning_rate: self.lr2,
                hidden: self.hidden,
                memory_capacity: self.memory_capacity,
                strategy: self.priority_mode,
                sampling: self.sampling,
            },
        }
    }
}

fn command() -> Command {
    let mut cmd = Command::new("rirl")
        .about("Train and evaluate mobile user profiles by imitating visit sequences")
        .disable_help_subcommand(true)
        .arg(Arg::new("config").long("config").num_args(1).help("flat key=value config file"))
        .arg(Arg::new("ll").long("ll").num_args(1).help("alias of --ld"));
    for key in KEYS {
        cmd = cmd.arg(Arg::new(key).long(key).num_args(1).action(ArgAction::Set));
    }
    cmd
}

/// One layer of raw settings with `ll` folded into `ld`.
fn normalise(mut layer: BTreeMap<String, String>, source: &str) -> Result<BTreeMap<String, String>> {
    if let Some(ll) = layer.remove("ll") {
        match layer.get("ld") {
            Some(ld) if num::<f64>("ld", ld)? != num::<f64>("ll", &ll)? => {
                return Err(usage(format!("{source}: --ld={ld} conflicts with --ll={ll}")));
            }
            _ => {
                layer.insert("ld".into(), ll);
            }
        }
    }
    Ok(layer)
}

pub fn read_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let k = k.trim().trim_start_matches("--");
        if k != "ll" && !KEYS.contains(&k) {
            return Err(usage(format!("config line {}: unknown option {k}", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Resolves flags over an optional config file over defaults; `env_seed` is used when
/// neither layer sets a seed.
pub fn parse_config_with_env<I, S>(argv: I, env_seed: Option<&str>) -> Result<RunConfig>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(argv).map_err(|e| usage(e.to_string()))?;
    let mut cli = BTreeMap::new();
    for key in KEYS.iter().copied().chain(["ll"]) {
        if let Some(v) = matches.get_one::<String>(key) {
            cli.insert(key.to_string(), v.clone());
        }
    }
    let cli = normalise(cli, "command line")?;
    let file = match matches.get_one::<String>("config") {
        Some(p) => normalise(read_config_file(&fs::read_to_string(p)?)?, p)?,
        None => BTreeMap::new(),
    };
    let mut merged = file;
    merged.extend(cli);
    if !merged.contains_key("seed") {
        if let Some(s) = env_seed {
            merged.insert("seed".into(), s.to_string());
        }
    }
    if let Some(mode) = merged.remove("reward_mode") {
        log::warn!("reward_mode={mode} has no documented alternatives and is ignored");
    }
    if let Some(lr) = merged.remove("lr") {
        for k in ["lr1", "lr2"] {
            merged.entry(k.to_string()).or_insert_with(|| lr.clone());
        }
    }
    let mut cfg = RunConfig::default();
    for (k, v) in &merged {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// As [`parse_config_with_env`], reading the seed fallback from `RIRL_SEED`.
pub fn parse_config<I, S>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let env_seed = std::env::var("RIRL_SEED").ok();
    parse_config_with_env(argv, env_seed.as_deref())
}

/// The environment and the full event stream of a run.
pub struct Corpus {
    pub world: World,
    pub events: EventSequence,
}

fn vectors_for(cfg: &RunConfig, schema: &KgSchema) -> Result<CategoryVectors> {
    match &cfg.word_vectors {
        Some(p) => CategoryVectors::read(BufReader::new(fs::File::open(p)?)),
        None => Ok(CategoryVectors::hashed(
            schema.categories().iter().map(|c| c.name.as_str()),
            cfg.vector_dim,
            0,
        )),
    }
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let (schema, contexts, events) = match &cfg.checkins {
        Some(p) => {
            let map = match cfg.checkin_format {
                CheckinFormat::Canonical => ColumnMap::canonical_checkins(),
                CheckinFormat::Foursquare => ColumnMap::foursquare(),
            };
            let parsed = parse_checkins(fs::File::open(p)?, &map)?;
            if parsed.skipped > 0 {
                log::warn!("skipped {} malformed check-in rows", parsed.skipped);
            }
            let events = parsed.value;
            let grid = ZoneGrid::covering(events.iter().map(|e| e.location()), cfg.grid_rows, cfg.grid_cols)?;
            let schema = KgSchema::from_events(&events, &grid)?;
            let trips = match &cfg.taxi {
                Some(t) => {
                    let parsed = parse_taxi(fs::File::open(t)?, &ColumnMap::canonical_taxi())?;
                    if parsed.skipped > 0 {
                        log::warn!("skipped {} malformed taxi rows", parsed.skipped);
                    }
                    parsed.value
                }
                None => {
                    log::warn!("no taxi data given; temporal contexts are all zero");
                    Vec::new()
                }
            };
            (schema, build_temporal_context(&trips, &grid)?, events)
        }
        None => {
            let spec = SynthSpec::near_deterministic(
                cfg.synth_users,
                cfg.synth_pois,
                cfg.synth_categories,
                cfg.grid_rows,
                cfg.grid_cols,
                cfg.synth_events,
                cfg.synth_stickiness,
                cfg.seed,
            );
            let w = generate_synthetic(&spec, cfg.seed)?;
            let contexts = build_temporal_context(&w.taxi, &w.grid)?;
            (w.schema, contexts, w.events)
        }
    };
    let vectors = vectors_for(cfg, &schema)?;
    let world = World::from_events(schema, contexts, vectors, &events)?;
    Ok(Corpus { world, events })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Trains on the first `train_ratio` of `events`, evaluates greedily on the rest and writes
/// the log, predictions and snapshots under `dir`.
fn train_and_evaluate(cfg: &RunConfig, world: &World, events: &EventSequence, seed: u64, dir: &Path) -> Result<MetricsReport> {
    fs::create_dir_all(dir)?;
    let (train, test) = split_train_test(events, cfg.train_ratio)?;
    let tcfg = TrainerConfig {
        seed,
        ..cfg.trainer_config()
    };
    let (model, log) = run_training(world, &train, tcfg)?;
    let mut f = create(&dir.join("training.log"))?;
    log.write(&world.schema, &mut f)?;
    f.flush()?;
    let ev = evaluate(&model, world, &test, Policy::Greedy)?;
    let mut f = create(&dir.join("predictions.tsv"))?;
    write_predictions(&ev.records, &mut f)?;
    f.flush()?;
    model.write_snapshots(world, dir)?;
    Ok(ev.report)
}

fn write_echo(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.echo())?;
    Ok(())
}

pub fn run_overall(cfg: &RunConfig) -> Result<MetricsReport> {
    let corpus = load_corpus(cfg)?;
    write_echo(cfg)?;
    let report = train_and_evaluate(cfg, &corpus.world, &corpus.events, cfg.seed, &cfg.out_dir)?;
    let mut f = create(&cfg.out_dir.join("metrics.csv"))?;
    writeln!(f, "{CSV_HEADER}")?;
    writeln!(f, "{}", report.csv_row("overall", "all"))?;
    f.flush()?;
    Ok(report)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Five chronological groups, each trained and evaluated independently with seed
/// `seed + group`; outputs go to `group<k>/` plus one shared metrics file.
pub fn run_robustness(cfg: &RunConfig) -> Result<Vec<MetricsReport>> {
    let corpus = load_corpus(cfg)?;
    write_echo(cfg)?;
    let groups = split_groups(&corpus.events, ROBUSTNESS_GROUPS)?;
    let mut reports = Vec::with_capacity(groups.len());
    for (g, events) in groups.iter().enumerate() {
        let dir = cfg.out_dir.join(format!("group{g}"));
        reports.push(train_and_evaluate(cfg, &corpus.world, events, cfg.seed.wrapping_add(g as u64), &dir)?);
    }
    let mut f = create(&cfg.out_dir.join("metrics.csv"))?;
    writeln!(f, "{CSV_HEADER}")?;
    for (g, r) in reports.iter().enumerate() {
        writeln!(f, "{}", r.csv_row("robustness", &g.to_string()))?;
    }
    let cell = |pick: fn(&MetricsReport) -> f64| {
        let (m, s) = mean_std(&reports.iter().map(pick).collect::<Vec<_>>());
        format!("{m};{s}")
    };
    writeln!(
        f,
        "robustness,summary,{},{},{},{},{}",
        cell(|r| r.prec_cat),
        cell(|r| r.rec_cat),
        cell(|r| r.avg_sim),
        cell(|r| r.avg_dist),
        cell(|r| r.events as f64)
    )?;
    f.flush()?;
    Ok(reports)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.cross_validation {
        0 => run_overall(cfg).map(|_| ()),
        _ => run_robustness(cfg).map(|_| ()),
    }
}

//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rirl::cli::{load_corpus, run_overall, run_robustness, RunConfig};
use rirl::dqn::{bellman_gradient, td_error, PriorityStrategy, QNetwork, ReplayBuffer, Sampling, Transition};
use rirl::eval::{avg_distance, evaluate, weighted_precision, weighted_recall, Policy, PredictionRecord};
use rirl::grad::{grad_check, DEFAULT_STEP};
use rirl::kg::{kg_step, Relation};
use rirl::math::Matrix;
use rirl::mobility::split_train_test;
use rirl::reward::{compute_reward, BaselineWindows, RewardComponents, RewardConfig};
use rirl::trainer::{run_training, surrogate_gradient, surrogate_value, Model, StateInputs, Trainer, TrainerConfig};
use rirl::user::{temporal_transform, update_user_profile, StatePooling};

use common::{learning_config, random_context, toy_world};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let took = start.elapsed();
    if took > limit {
        Err(format!("{detail}; took {took:.1?}, limit {limit:?}"))
    } else {
        Ok(format!("{detail}; {took:.1?}"))
    }
}

// 1. Gradient correctness -----------------------------------------------------------

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dqn_gradient_error(rng: &mut ChaCha8Rng, n: usize, actions: usize) -> f64 {
    let eval = QNetwork::new(rng, 3 * n, 6, actions);
    let target = QNetwork::new(rng, 3 * n, 6, actions);
    let batch: Vec<Transition> = (0..4)
        .map(|_| Transition {
            state: random_vec(rng, 3 * n, 0.0, 1.0),
            action: rng.gen_range(0..actions),
            reward: rng.gen_range(0.0..1.0),
            next_state: random_vec(rng, 3 * n, 0.0, 1.0),
            priority: 0.0,
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let (_, grad) = bellman_gradient(&eval, &target, &refs, 0.9).unwrap();
    let report = grad_check(
        &eval.flatten(),
        &grad.flatten(),
        |x| {
            let mut e = eval.clone();
            e.unflatten(x).unwrap();
            bellman_gradient(&e, &target, &refs, 0.9).unwrap().0
        },
        DEFAULT_STEP,
        1e-4,
    );
    report.max_relative_error
}

fn surrogate_gradient_errors(rng: &mut ChaCha8Rng, n: usize, zones: usize, actions: usize, tail_sigmoid: bool) -> Vec<f64> {
    let links: Vec<(usize, usize)> = (0..actions).map(|i| (i % 2, i % zones)).collect();
    let world = toy_world(&links, 2, zones, 2);
    let cfg = TrainerConfig {
        dim: n,
        tail_sigmoid,
        seed: rng.gen(),
        dqn: rirl::dqn::DqnConfig {
            hidden: 6,
            batch_size: 2,
            memory_capacity: 4,
            ..Default::default()
        },
        ..TrainerConfig::default()
    };
    let mut model = Model::new(&world, &cfg).unwrap();
    for step in 0..6 {
        let poi = rng.gen_range(0..actions);
        let t = random_context(rng, zones);
        model.observe(&world, step % 2, poi, &t).unwrap();
    }
    let rewards = random_vec(rng, actions, 0.05, 0.95);
    let context = random_context(rng, zones);
    let mut errors = Vec::new();
    for pooling in [StatePooling::LastPoi, StatePooling::Mean] {
        for user in 0..2 {
            let profile = model.profiles.get(user);
            let inputs = StateInputs {
                kg: &model.kg,
                provenance: &model.provenance,
                user,
                stored_profile: &profile.u,
                last_poi: profile.last_poi,
                pooling,
                context: &context,
            };
            let net = &model.agent.eval;
            let (_, grad) = surrogate_gradient(&model.params, net, &inputs, &rewards, 0.7).unwrap();
            let report = grad_check(
                &model.params.flatten(),
                &grad.flatten(),
                |x| surrogate_value(&model.params.with_flat(x).unwrap(), net, &inputs, &rewards, 0.7).unwrap(),
                DEFAULT_STEP,
                1e-4,
            );
            errors.push(report.max_relative_error);
        }
    }
    errors
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_dqn, mut worst_repr, mut cases) = (0.0f64, 0.0f64, 0);
    for n in [2, 4, 8] {
        for m in [2, 4] {
            for a in [3, 10] {
                worst_dqn = worst_dqn.max(dqn_gradient_error(&mut rng, n, a));
                for e in surrogate_gradient_errors(&mut rng, n, m, a, cases % 2 == 1) {
                    worst_repr = worst_repr.max(e);
                }
                cases += 1;
            }
        }
    }
    let detail = format!("{cases} instances, max rel err DQN {worst_dqn:.2e}, representation {worst_repr:.2e}");
    if worst_dqn < 1e-4 && worst_repr < 1e-4 {
        within(Duration::from_secs(60), start, detail)
    } else {
        Err(detail)
    }
}

// 2. Equation fidelity --------------------------------------------------------------

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn worst(err: &mut f64, got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        *err = err.max((g - w).abs());
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut err = 0.0f64;

    // Composite reward against window means.
    let cfg = RewardConfig::default();
    let mut windows = BaselineWindows::new(2);
    windows.push(RewardComponents { distance: 2.0, category: 0.5, exact: 0.0 });
    windows.push(RewardComponents { distance: 4.0, category: 0.1, exact: 1.0 });
    let b = compute_reward(&cfg, &mut windows, RewardComponents { distance: 1.5, category: 0.9, exact: 1.0 });
    worst(&mut err, &[b.reward], &[sig(0.2 * (1.5 - 3.0) + 0.6 * (0.9 - 0.3) + 0.2 * (1.0 - 0.5))]);

    // TD error on a 2-2-2 network.
    let mut net = QNetwork::zeros(2, 2, 2);
    net.w1 = Matrix::from_rows(&[vec![0.5, -0.2], vec![0.3, 0.8]]).unwrap();
    net.b1 = vec![0.1, -0.4];
    net.w2 = Matrix::from_rows(&[vec![1.0, -0.5], vec![0.25, 0.75]]).unwrap();
    net.b2 = vec![0.05, -0.05];
    let q = |s: [f64; 2]| {
        let h0 = (0.5 * s[0] - 0.2 * s[1] + 0.1).max(0.0);
        let h1 = (0.3 * s[0] + 0.8 * s[1] - 0.4).max(0.0);
        [1.0 * h0 - 0.5 * h1 + 0.05, 0.25 * h0 + 0.75 * h1 - 0.05]
    };
    let t = Transition {
        state: vec![0.6, 0.9],
        action: 1,
        reward: 0.7,
        next_state: vec![1.2, 0.4],
        priority: 0.0,
    };
    let target = net.clone();
    let qs = q([0.6, 0.9]);
    let qn = q([1.2, 0.4]);
    worst(&mut err, &[td_error(&net, &target, &t, 0.9).unwrap()], &[0.7 + 0.9 * qn[0].max(qn[1]) - qs[1]]);

    // Representation updates on a five-POI graph at N = 2, M = 2.
    let world = toy_world(&[(0, 0), (0, 1), (1, 0), (0, 0), (1, 1)], 2, 2, 1);
    let tcfg = TrainerConfig { dim: 2, seed: 11, ..TrainerConfig::default() };
    let model = Model::new(&world, &tcfg).unwrap();
    let p = &model.params;
    let tmat = Matrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![0.0, 3.0, 1.0]]).unwrap();

    // Temporal transform
    let ctx = &p.user.context;
    let z: Vec<f64> = (0..2)
        .map(|zone| tmat.get(zone, 0) * ctx.flow_mix[0] + tmat.get(zone, 1) * ctx.flow_mix[1] + tmat.get(zone, 2) * ctx.flow_mix[2])
        .collect();
    let tt: Vec<f64> = (0..2)
        .map(|c| sig(ctx.projection.get(c, 0) * z[0] + ctx.projection.get(c, 1) * z[1] + ctx.bias[c]))
        .collect();
    worst(&mut err, &temporal_transform(&p.user, &tmat).unwrap(), &tt);

    // User profile and its gate
    let u = model.profiles.get(0).u.clone();
    let h = model.kg.head(0).to_vec();
    let mut profile = model.profiles.get(0).clone();
    update_user_profile(&mut profile, &p.user, 0, &h, &tt).unwrap();
    let a_u = sig(p.user.gate.w[0] * u[0] + p.user.gate.w[1] * u[1] + p.user.gate.b);
    let ht = h[0] * tt[0] + h[1] * tt[1];
    let u_new: Vec<f64> = (0..2).map(|c| sig(a_u * u[c] + (1.0 - a_u) * p.user.candidate[c] * ht)).collect();
    worst(&mut err, &profile.u, &u_new);

    // Visited POI head and its gate
    let k = &p.kg;
    let a_p = sig(k.poi_gate.w[0] * h[0] + k.poi_gate.w[1] * h[1] + k.poi_gate.b);
    let ut = u[0] * tt[0] + u[1] * tt[1];
    let h_new: Vec<f64> = (0..2).map(|c| sig(a_p * h[c] + (1.0 - a_p) * k.poi_candidate[c] * ut)).collect();
    let mut kg = model.kg.clone();
    let out = kg_step(&mut kg, &world.schema, k, 0, &u, &tt, false).unwrap();
    worst(&mut err, kg.head(0), &h_new);

    // Category and zone tails
    let tail = |old: &[f64], rel: &[f64]| -> Vec<f64> {
        let a_t = sig(k.tail_gate.w[0] * old[0] + k.tail_gate.w[1] * old[1] + k.tail_gate.b);
        (0..2).map(|c| a_t * old[c] + (1.0 - a_t) * (h_new[c] + rel[c])).collect()
    };
    let rel_b = model.kg.relation(Relation::BelongTo).to_vec();
    let rel_l = model.kg.relation(Relation::LocateAt).to_vec();
    let cat_new = tail(model.kg.category_tail(0), &rel_b);
    let zone_new = tail(model.kg.zone_tail(0), &rel_l);
    worst(&mut err, kg.category_tail(0), &cat_new);
    worst(&mut err, kg.zone_tail(0), &zone_new);

    // Siblings: POI 1 via category, POI 2 via zone, POI 3 via both, POI 4 untouched.
    let sib = |old: &[f64], t_new: &[f64], rel: &[f64]| -> Vec<f64> {
        let a_h = sig(k.sibling_gate.w[0] * old[0] + k.sibling_gate.w[1] * old[1] + k.sibling_gate.b);
        (0..2).map(|c| sig(a_h * old[c] + (1.0 - a_h) * (t_new[c] - rel[c]))).collect()
    };
    worst(&mut err, kg.head(1), &sib(model.kg.head(1), &cat_new, &rel_b));
    worst(&mut err, kg.head(2), &sib(model.kg.head(2), &zone_new, &rel_l));
    let both = sib(&sib(model.kg.head(3), &cat_new, &rel_b), &zone_new, &rel_l);
    worst(&mut err, kg.head(3), &both);
    worst(&mut err, kg.head(4), model.kg.head(4));
    if out.siblings != vec![1, 2, 3] {
        return Err(format!("sibling set {:?}", out.siblings));
    }

    let detail = format!("max abs err {err:.2e} across reward, TD and all update rules");
    if err < 1e-10 {
        within(Duration::from_secs(5), start, detail)
    } else {
        Err(detail)
    }
}

// 3. Reward invariants --------------------------------------------------------------

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for run in 0..10 {
        let cfg = RewardConfig {
            distance_weight: rng.gen_range(0.0..1.0),
            category_weight: rng.gen_range(0.0..1.0),
            exact_weight: rng.gen_range(0.01..1.0),
            window: 1 + run,
            distance_floor_km: 0.1,
        };
        let mut windows = BaselineWindows::new(cfg.window);
        let mut history: Vec<[f64; 3]> = Vec::new();
        for _ in 0..1000 {
            let c = RewardComponents {
                distance: 1.0 / (rng.gen_range(0.0..50.0) + cfg.distance_floor_km),
                category: rng.gen_range(-1.0..=1.0),
                exact: f64::from(u8::from(rng.gen_bool(0.2))),
            };
            let tail = &history[history.len().saturating_sub(cfg.window)..];
            let mut brute = [0.0; 3];
            for h in tail {
                for i in 0..3 {
                    brute[i] += h[i] / tail.len() as f64;
                }
            }
            let b = compute_reward(&cfg, &mut windows, c);
            let got = [b.baselines.distance, b.baselines.category, b.baselines.exact];
            if got.iter().zip(&brute).any(|(g, w)| (g - w).abs() > 1e-12) {
                return Err(format!("baseline {got:?} != brute-force {brute:?}"));
            }
            if !(b.reward > 0.0 && b.reward < 1.0) {
                return Err(format!("reward {} outside (0, 1)", b.reward));
            }
            history.push([c.distance, c.category, c.exact]);
            checked += 1;
        }
    }
    within(Duration::from_secs(10), start, format!("{checked} steps, r in (0,1), baselines match brute force"))
}

// 4. Replay distribution ------------------------------------------------------------

fn filled_buffer(priorities: &[f64]) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(priorities.len(), PriorityStrategy::Reward).unwrap();
    for (i, &p) in priorities.iter().enumerate() {
        buf.push(Transition {
            state: vec![],
            action: i,
            reward: p,
            next_state: vec![],
            priority: p,
        });
    }
    buf
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = 10;
    let buf = filled_buffer(&vec![0.5; k]);
    let draws = 10_000;
    let mut counts = vec![0usize; k];
    for _ in 0..draws {
        counts[buf.sample_batch(1, Sampling::Softmax, &mut rng).unwrap()[0]] += 1;
    }
    let expected = draws as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(chi2);

    let mut dominant = vec![0.0; k];
    dominant[6] = 10.0;
    let mass = buf_mass(&dominant, 6);
    let buf = filled_buffer(&dominant);
    let trials = 2000;
    let first = (0..trials)
        .filter(|_| buf.sample_batch(4, Sampling::Softmax, &mut rng).unwrap()[0] == 6)
        .count();
    let share = first as f64 / trials as f64;
    let detail = format!("chi2 {chi2:.2} p {p:.3}; dominant mass {mass:.4}, drawn first {share:.4}");
    if p > 0.01 && mass > 0.99 && share > 0.99 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn buf_mass(priorities: &[f64], idx: usize) -> f64 {
    filled_buffer(priorities).probabilities()[idx]
}

// 5. KG / update locality -----------------------------------------------------------

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = learning_config(5, PriorityStrategy::Reward, dir.path());
    cfg.epochs = 1;
    let corpus = load_corpus(&cfg).map_err(|e| e.to_string())?;
    let world = &corpus.world;
    let mut trainer = Trainer::new(world, cfg.trainer_config()).map_err(|e| e.to_string())?;
    let cats = world.schema.categories().len();
    let zones = world.schema.zone_count();
    let mut changed_heads = 0usize;
    for event in corpus.events.iter().take(1000) {
        let before = trainer.model().clone();
        let report = trainer.step(event).map_err(|e| e.to_string())?;
        let after = trainer.model();
        let step = report.record.step;
        for u in 0..after.profiles.len() {
            let (x, y) = (before.profiles.get(u), after.profiles.get(u));
            if u != report.record.user && (!same_bits(&x.u, &y.u) || x.last_poi != y.last_poi || x.step != y.step) {
                return Err(format!("step {step}: profile {u} changed"));
            }
        }
        for j in 0..world.schema.poi_count() {
            let allowed = j == report.kg.visited || report.kg.siblings.contains(&j);
            let same = same_bits(before.kg.head(j), after.kg.head(j));
            if !same && !allowed {
                return Err(format!("step {step}: head {j} changed"));
            }
            changed_heads += usize::from(!same);
        }
        for c in (0..cats).filter(|&c| c != report.kg.category) {
            if !same_bits(before.kg.category_tail(c), after.kg.category_tail(c)) {
                return Err(format!("step {step}: category tail {c} changed"));
            }
        }
        for z in (0..zones).filter(|&z| z != report.kg.zone) {
            if !same_bits(before.kg.zone_tail(z), after.kg.zone_tail(z)) {
                return Err(format!("step {step}: zone tail {z} changed"));
            }
        }
        for rel in [Relation::BelongTo, Relation::LocateAt] {
            if !same_bits(before.kg.relation(rel), after.kg.relation(rel)) {
                return Err(format!("step {step}: relation changed"));
            }
        }
    }
    within(
        Duration::from_secs(60),
        start,
        format!("1000 steps on {} POIs, {changed_heads} head writes, all within the visited POI and its siblings", world.schema.poi_count()),
    )
}

// 6. Metric oracles -----------------------------------------------------------------

fn confusion_oracle(records: &[PredictionRecord]) -> (f64, f64) {
    let mut labels: Vec<&str> = records.iter().map(|r| r.real_cat.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut all: Vec<&str> = records.iter().flat_map(|r| [r.real_cat.as_str(), r.pred_cat.as_str()]).collect();
    all.sort_unstable();
    all.dedup();
    let idx: BTreeMap<&str, usize> = all.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let mut m = vec![vec![0usize; all.len()]; all.len()];
    for r in records {
        m[idx[r.real_cat.as_str()]][idx[r.pred_cat.as_str()]] += 1;
    }
    let (mut p_num, mut r_num, mut den) = (0.0, 0.0, 0.0);
    for l in labels {
        let k = idx[l];
        let tp = m[k][k];
        let row: usize = m[k].iter().sum();
        let col: usize = m.iter().map(|r| r[k]).sum();
        let prec = if col == 0 { 0.0 } else { tp as f64 / col as f64 };
        let rec = if row == 0 { 0.0 } else { tp as f64 / row as f64 };
        p_num += row as f64 * prec;
        r_num += row as f64 * rec;
        den += row as f64;
    }
    (p_num / den, r_num / den)
}

/// Great-circle distance through the atan2 form of the central angle.
fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dl = (b.1 - a.1).to_radians();
    let x = (p2.cos() * dl.sin()).powi(2) + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2);
    let y = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6371.0 * x.sqrt().atan2(y)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cats = ["A", "B", "C", "D", "E"];
    for set in 0..50 {
        let len = rng.gen_range(1..30);
        let used = rng.gen_range(1..=cats.len());
        let records: Vec<PredictionRecord> = (0..len)
            .map(|_| {
                let real = cats[rng.gen_range(0..used)];
                let pred = cats[rng.gen_range(0..cats.len())];
                PredictionRecord {
                    real_poi: String::new(),
                    pred_poi: String::new(),
                    real_cat: real.into(),
                    pred_cat: pred.into(),
                    real_loc: (0.0, 0.0),
                    pred_loc: (0.0, 0.0),
                }
            })
            .collect();
        let (p, r) = confusion_oracle(&records);
        let (gp, gr) = (weighted_precision(&records).unwrap(), weighted_recall(&records).unwrap());
        if gp != p || gr != r {
            return Err(format!("set {set}: got ({gp}, {gr}), oracle ({p}, {r})"));
        }
    }
    let pairs = [
        ((40.7580, -73.9855), (40.7484, -73.9857)),
        ((40.7128, -74.0060), (40.7306, -73.9352)),
        ((35.6762, 139.6503), (35.6895, 139.6917)),
        ((51.5074, -0.1278), (48.8566, 2.3522)),
        ((-33.8688, 151.2093), (-37.8136, 144.9631)),
    ];
    let mut err = 0.0f64;
    for (a, b) in pairs {
        let rec = PredictionRecord {
            real_poi: String::new(),
            pred_poi: String::new(),
            real_cat: String::new(),
            pred_cat: String::new(),
            real_loc: a,
            pred_loc: b,
        };
        err = err.max((avg_distance(&[rec]).unwrap() - great_circle_km(a, b)).abs());
    }
    let detail = format!("50 random sets exact; distance max err {err:.2e} km");
    if err < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 7-10. Learning, ablation, robustness, determinism ----------------------------------

struct Learned {
    prec: f64,
    sim: f64,
    random_prec: f64,
}

fn learn(cfg: &RunConfig) -> Result<Learned, String> {
    let corpus = load_corpus(cfg).map_err(|e| e.to_string())?;
    let (train, test) = split_train_test(&corpus.events, cfg.train_ratio).map_err(|e| e.to_string())?;
    if (train.len(), test.len()) != (2000, 200) {
        return Err(format!("split {} / {}", train.len(), test.len()));
    }
    let (model, _) = run_training(&corpus.world, &train, cfg.trainer_config()).map_err(|e| e.to_string())?;
    let greedy = evaluate(&model, &corpus.world, &test, Policy::Greedy).map_err(|e| e.to_string())?;
    let random = evaluate(&model, &corpus.world, &test, Policy::UniformRandom { seed: cfg.seed }).map_err(|e| e.to_string())?;
    Ok(Learned {
        prec: greedy.report.prec_cat,
        sim: greedy.report.avg_sim,
        random_prec: random.report.prec_cat,
    })
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, mode) in [("r", PriorityStrategy::Reward), ("td", PriorityStrategy::TdError)] {
        let l = learn(&learning_config(0, mode, dir.path()))?;
        ok &= l.prec >= 0.6 && l.sim >= 0.6 && l.prec > l.random_prec;
        parts.push(format!("{name}: prec {:.3} sim {:.3} (random prec {:.3})", l.prec, l.sim, l.random_prec));
    }
    let detail = parts.join(", ");
    if ok {
        within(Duration::from_secs(600), start, detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut full, mut ablated) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let cfg = learning_config(seed, PriorityStrategy::Reward, dir.path());
        full.push(learn(&cfg)?.prec);
        ablated.push(learn(&RunConfig { lr1: 0.0, ..cfg })?.prec);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let worst_gap = ablated.iter().zip(&full).map(|(a, f)| a - f).fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "full {:?} mean {:.3}; lr1=0 {:?} mean {:.3}; max ablation excess {:.3}",
        full.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        mean(&full),
        ablated.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        mean(&ablated),
        worst_gap
    );
    if worst_gap <= 0.05 && mean(&full) >= mean(&ablated) {
        within(Duration::from_secs(1800), start, detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        cross_validation: 1,
        // Five groups of 2,200 events, each the size of the learning-sanity world.
        synth_events: 5 * 2200,
        ..learning_config(0, PriorityStrategy::Reward, dir.path())
    };
    run_robustness(&cfg).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let groups: Vec<f64> = rows
        .iter()
        .filter(|r| r[1] != "summary")
        .map(|r| r[2].parse::<f64>().unwrap())
        .collect();
    let summaries = rows.iter().filter(|r| r[1] == "summary").count();
    let mean = groups.iter().sum::<f64>() / groups.len() as f64;
    let std = (groups.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (groups.len() as f64 - 1.0)).sqrt();
    let detail = format!("{} group rows + {summaries} summary; prec per group {groups:.3?}, std {std:.3}", groups.len());
    if groups.len() == 5 && summaries == 1 && std < 0.15 {
        within(Duration::from_secs(1800), start, detail)
    } else {
        Err(detail)
    }
}

fn criterion_10() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..4).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut compared = 0;
    for (pair, mode) in [PriorityStrategy::Reward, PriorityStrategy::TdError].into_iter().enumerate() {
        let outs: Vec<_> = dirs[2 * pair..2 * pair + 2]
            .iter()
            .map(|d| {
                run_overall(&learning_config(7, mode, d.path())).map_err(|e| e.to_string())?;
                let read = |f: &str| std::fs::read(d.path().join(f)).map_err(|e| e.to_string());
                Ok::<_, String>((read("metrics.csv")?, read("training.log")?))
            })
            .collect::<Result<_, _>>()?;
        if outs[0] != outs[1] {
            return Err(format!("{mode:?}: outputs differ between identical runs"));
        }
        compared += 2;
    }
    Ok(format!("{compared} file pairs byte-identical"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", criterion_1),
        ("equation fidelity", criterion_2),
        ("reward invariants", criterion_3),
        ("replay distribution", criterion_4),
        ("update locality", criterion_5),
        ("metric oracles", criterion_6),
        ("learning sanity", criterion_7),
        ("ablation direction", criterion_8),
        ("robustness protocol", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    panic::set_hook(Box::new(|_| {}));
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

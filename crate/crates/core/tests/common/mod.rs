#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use rirl::cli::RunConfig;
use rirl::dqn::PriorityStrategy;
use rirl::kg::{Category, KgSchema, Poi};
use rirl::math::Matrix;
use rirl::mobility::{build_temporal_context, ZoneGrid};
use rirl::reward::CategoryVectors;
use rirl::trainer::World;

/// POIs given as `(category, zone)` on a one-row grid, with `users` users and no taxi data.
pub fn toy_world(links: &[(usize, usize)], categories: usize, zones: usize, users: usize) -> World {
    let grid = ZoneGrid::new(40.70, 40.71, -74.00, -73.99, 1, zones).unwrap();
    let pois = links
        .iter()
        .enumerate()
        .map(|(i, &(category, zone))| {
            let (lat0, lat1, lon0, lon1) = grid.zone_bounds(zone);
            Poi {
                id: format!("p{i:02}"),
                category,
                zone,
                location: ((lat0 + lat1) / 2.0, (lon0 + lon1) / 2.0),
            }
        })
        .collect();
    let names = ["cafe", "park", "office", "bar", "gym", "museum"];
    let cats: Vec<Category> = (0..categories)
        .map(|c| Category {
            id: format!("c{c}"),
            name: names[c % names.len()].to_string(),
        })
        .collect();
    let vectors = CategoryVectors::hashed(cats.iter().map(|c| c.name.as_str()), 8, 0);
    let schema = KgSchema::new(pois, cats, zones).unwrap();
    let contexts = build_temporal_context(&[], &grid).unwrap();
    World::new(schema, contexts, vectors, (0..users).map(|u| format!("u{u}"))).unwrap()
}

/// Taxi-count matrix with small non-negative integer entries.
pub fn random_context<R: Rng>(rng: &mut R, zones: usize) -> Matrix {
    let mut m = Matrix::zeros(zones, 3);
    for v in m.as_mut_slice() {
        *v = f64::from(rng.gen_range(0u8..4));
    }
    m
}

/// The synthetic learning benchmark: 5 users, 20 POIs, 4 categories, near-deterministic
/// per-user chains, 2,200 events split 2,000 / 200, with the tuned training settings.
pub fn learning_config(seed: u64, mode: PriorityStrategy, out_dir: &Path) -> RunConfig {
    RunConfig {
        priority_mode: mode,
        seed,
        synth_users: 5,
        synth_pois: 20,
        synth_categories: 4,
        synth_events: 2200,
        synth_stickiness: 0.9,
        grid_rows: 2,
        grid_cols: 2,
        train_ratio: 2000.5 / 2200.0,
        dim: 32,
        epsilon: 0.5,
        lr1: 0.03,
        lr2: 0.1,
        gamma: 0.5,
        epochs: 5,
        out_dir: out_dir.to_path_buf(),
        ..RunConfig::default()
    }
}

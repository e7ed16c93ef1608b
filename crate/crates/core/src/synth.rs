//! Seeded synthetic worlds: POIs on a zone grid, per-user Markov trajectories, and taxi
//! trips whose drop-offs follow the visits.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{Category, KgSchema, Poi};
use crate::math::Matrix;
use crate::mobility::{CheckinEvent, EventSequence, TaxiRecord, TripEnd, ZoneGrid};

const CATEGORY_NAMES: [&str; 16] = [
    "cafe", "park", "office", "bar", "gym", "museum", "restaurant", "station", "hotel", "library", "school", "market",
    "theater", "hospital", "stadium", "church",
];

/// Bounding box of the synthetic city.
pub const CITY: (f64, f64, f64, f64) = (40.70, 40.80, -74.02, -73.92);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub events: usize,
    /// Row-stochastic `pois × pois` transition matrix per user.
    pub transitions: Vec<Matrix>,
    /// Probability that a POI sits in its category's home zone.
    pub zone_affinity: f64,
    /// Taxi trips per event that drop off in the visited POI's zone during the visit hour.
    pub trips_per_visit: usize,
    /// Additional uniformly placed trips per hour.
    pub background_trips: usize,
    pub start_timestamp: i64,
}

impl SynthSpec {
    /// Each user follows a private random successor with probability `stickiness`,
    /// otherwise moves uniformly.
    #[allow(clippy::too_many_arguments)]
    pub fn near_deterministic(
        users: usize,
        pois: usize,
        categories: usize,
        grid_rows: usize,
        grid_cols: usize,
        events: usize,
        stickiness: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6e64_6f6d);
        let uniform = 1.0 / pois.max(1) as f64;
        let transitions = (0..users)
            .map(|_| {
                let mut order: Vec<usize> = (0..pois).collect();
                shuffle(&mut order, &mut rng);
                let mut m = Matrix::zeros(pois, pois);
                for (k, &p) in order.iter().enumerate() {
                    let next = order[(k + 1) % pois];
                    for q in 0..pois {
                        *m.get_mut(p, q) = (1.0 - stickiness) * uniform;
                    }
                    *m.get_mut(p, next) += stickiness;
                }
                m
            })
            .collect();
        Self {
            users,
            pois,
            categories,
            grid_rows,
            grid_cols,
            events,
            transitions,
            zone_affinity: 0.8,
            trips_per_visit: 3,
            background_trips: 2,
            start_timestamp: 1_333_238_400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.pois == 0 || self.categories == 0 {
            return Err(Error::Config("synthetic world needs at least one user, POI and category".into()));
        }
        if self.pois < self.categories {
            return Err(Error::Config(format!(
                "{} POIs cannot cover {} categories",
                self.pois, self.categories
            )));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::Config("synthetic grid needs at least one zone".into()));
        }
        if !(0.0..=1.0).contains(&self.zone_affinity) {
            return Err(Error::Config("zone affinity must lie in [0, 1]".into()));
        }
        if self.transitions.len() != self.users {
            return Err(Error::Config(format!(
                "{} transition matrices for {} users",
                self.transitions.len(),
                self.users
            )));
        }
        for m in &self.transitions {
            if m.rows() != self.pois || m.cols() != self.pois {
                return Err(Error::Config("transition matrix shape must be pois × pois".into()));
            }
            for p in 0..self.pois {
                let row = m.row(p);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("transition row {p} is not a distribution")));
                }
            }
        }
        Ok(())
    }
}

/// Category names for the synthetic world: common venue words, then numbered fallbacks.
pub fn category_name(c: usize) -> String {
    CATEGORY_NAMES.get(c).map_or_else(|| format!("venue{c}"), |s| (*s).to_string())
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub grid: ZoneGrid,
    pub schema: KgSchema,
    pub events: EventSequence,
    pub taxi: Vec<TaxiRecord>,
}

fn shuffle<R: Rng>(items: &mut [usize], rng: &mut R) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.gen_range(0..=i));
    }
}

fn point_in<R: Rng>(grid: &ZoneGrid, zone: usize, rng: &mut R) -> (f64, f64) {
    let (lat0, lat1, lon0, lon1) = grid.zone_bounds(zone);
    // Stay strictly inside the cell so the point maps back to `zone`.
    let (pad_lat, pad_lon) = ((lat1 - lat0) * 1e-6, (lon1 - lon0) * 1e-6);
    (
        rng.gen_range(lat0 + pad_lat..lat1 - pad_lat),
        rng.gen_range(lon0 + pad_lon..lon1 - pad_lon),
    )
}

const HOUR: i64 = 3600;

pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SynthWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lat0, lat1, lon0, lon1) = CITY;
    let grid = ZoneGrid::new(lat0, lat1, lon0, lon1, spec.grid_rows, spec.grid_cols)?;
    let zones = grid.zone_count();

    let categories: Vec<Category> = (0..spec.categories)
        .map(|c| Category {
            id: format!("c{c}"),
            name: category_name(c),
        })
        .collect();
    let width = (spec.pois - 1).to_string().len();
    let pois: Vec<Poi> = (0..spec.pois)
        .map(|p| {
            let category = p % spec.categories;
            let zone = if rng.gen_bool(spec.zone_affinity) {
                category % zones
            } else {
                rng.gen_range(0..zones)
            };
            Poi {
                id: format!("p{p:0width$}"),
                category,
                zone,
                location: point_in(&grid, zone, &mut rng),
            }
        })
        .collect();
    let schema = KgSchema::new(pois, categories, zones)?;

    let rows: Vec<Vec<WeightedIndex<f64>>> = spec
        .transitions
        .iter()
        .map(|m| {
            (0..spec.pois)
                .map(|p| WeightedIndex::new(m.row(p)).map_err(|e| Error::Config(format!("transition row {p}: {e}"))))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let mut position: Vec<usize> = (0..spec.users).map(|_| rng.gen_range(0..spec.pois)).collect();
    let uwidth = (spec.users - 1).to_string().len();

    let mut events = Vec::with_capacity(spec.events);
    let mut taxi = Vec::new();
    let trip = |rng: &mut ChaCha8Rng, hour: i64, from: usize, to: usize, taxi: &mut Vec<TaxiRecord>| {
        let start = hour + rng.gen_range(0..HOUR - 600);
        let end = start + rng.gen_range(300..1800);
        let (plat, plon) = point_in(&grid, from, rng);
        let (dlat, dlon) = point_in(&grid, to, rng);
        taxi.push(TaxiRecord {
            id: format!("t{}", taxi.len()),
            pickup: TripEnd { lat: plat, lon: plon, timestamp: start },
            dropoff: TripEnd { lat: dlat, lon: dlon, timestamp: end },
        });
    };
    for k in 0..spec.events {
        let hour = spec.start_timestamp + k as i64 * HOUR;
        let user = rng.gen_range(0..spec.users);
        let next = rows[user][position[user]].sample(&mut rng);
        position[user] = next;
        let p = schema.poi(next);
        let c = &schema.categories()[p.category];
        events.push(CheckinEvent {
            user_id: format!("u{user:0uwidth$}"),
            poi_id: p.id.clone(),
            category_id: c.id.clone(),
            category_name: c.name.clone(),
            lat: p.location.0,
            lon: p.location.1,
            timestamp: hour + rng.gen_range(0..HOUR),
        });
        for _ in 0..spec.trips_per_visit {
            let from = rng.gen_range(0..zones);
            trip(&mut rng, hour, from, p.zone, &mut taxi);
        }
        for _ in 0..spec.background_trips {
            let (from, to) = (rng.gen_range(0..zones), rng.gen_range(0..zones));
            trip(&mut rng, hour, from, to, &mut taxi);
        }
    }
    Ok(SynthWorld {
        grid,
        schema,
        events: EventSequence::new(events),
        taxi,
    })
}

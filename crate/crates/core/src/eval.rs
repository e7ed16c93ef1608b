//! Prediction metrics and the teacher-forced evaluation rollout.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dqn::argmax;
use crate::error::{Error, Result};
use crate::math::haversine_km;
use crate::mobility::EventSequence;
use crate::reward::CategoryVectors;
use crate::trainer::{Model, World};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub real_poi: String,
    pub pred_poi: String,
    pub real_cat: String,
    pub pred_cat: String,
    pub real_loc: (f64, f64),
    pub pred_loc: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub prec_cat: f64,
    pub rec_cat: f64,
    pub avg_sim: f64,
    pub avg_dist: f64,
    /// Number of evaluated events.
    pub events: usize,
}

pub const CSV_HEADER: &str = "run_id,group,prec_cat,rec_cat,avg_sim,avg_dist,L";

impl MetricsReport {
    pub fn csv_row(&self, run_id: &str, group: &str) -> String {
        format!(
            "{run_id},{group},{},{},{},{},{}",
            self.prec_cat, self.rec_cat, self.avg_sim, self.avg_dist, self.events
        )
    }
}

fn non_empty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::TooFewEvents { needed: 1, got: 0 })
    } else {
        Ok(())
    }
}

#[derive(Default)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
    support: usize,
}

fn tallies(records: &[PredictionRecord]) -> BTreeMap<&str, Tally> {
    let mut t: BTreeMap<&str, Tally> = BTreeMap::new();
    for r in records {
        t.entry(&r.real_cat).or_default().support += 1;
    }
    for r in records {
        if r.real_cat == r.pred_cat {
            t.entry(&r.real_cat).or_default().tp += 1;
        } else {
            t.entry(&r.real_cat).or_default().fn_ += 1;
            if let Some(p) = t.get_mut(r.pred_cat.as_str()) {
                p.fp += 1;
            }
        }
    }
    t
}

fn weighted(records: &[PredictionRecord], per_class: impl Fn(&Tally) -> (usize, usize)) -> Result<f64> {
    non_empty(records)?;
    let t = tallies(records);
    let (mut num, mut den) = (0.0, 0.0);
    for tally in t.values() {
        let (hits, total) = per_class(tally);
        let score = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        num += tally.support as f64 * score;
        den += tally.support as f64;
    }
    Ok(num / den)
}

/// Support-weighted per-category precision over the categories present as real labels.
pub fn weighted_precision(records: &[PredictionRecord]) -> Result<f64> {
    weighted(records, |t| (t.tp, t.tp + t.fp))
}

pub fn weighted_recall(records: &[PredictionRecord]) -> Result<f64> {
    weighted(records, |t| (t.tp, t.tp + t.fn_))
}

/// Mean cosine between real and predicted category-name embeddings.
pub fn avg_similarity(records: &[PredictionRecord], vectors: &CategoryVectors) -> Result<f64> {
    non_empty(records)?;
    Ok(records.iter().map(|r| vectors.similarity(&r.real_cat, &r.pred_cat)).sum::<f64>() / records.len() as f64)
}

/// Mean great-circle distance in km.
pub fn avg_distance(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records)?;
    Ok(records.iter().map(|r| haversine_km(r.real_loc, r.pred_loc)).sum::<f64>() / records.len() as f64)
}

pub fn metrics(records: &[PredictionRecord], vectors: &CategoryVectors) -> Result<MetricsReport> {
    Ok(MetricsReport {
        prec_cat: weighted_precision(records)?,
        rec_cat: weighted_recall(records)?,
        avg_sim: avg_similarity(records, vectors)?,
        avg_dist: avg_distance(records)?,
        events: records.len(),
    })
}

/// How predictions are produced during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Argmax of the evaluation network.
    Greedy,
    /// Uniform over POIs, independent of the state.
    UniformRandom { seed: u64 },
    /// Always the real POI.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<PredictionRecord>,
    /// Test events naming a user or POI the model does not know.
    pub skipped: usize,
}

/// Rolls `policy` over `test` in order. The environment advances on the real events and the
/// input model is left untouched.
pub fn evaluate(model: &Model, world: &World, test: &EventSequence, policy: Policy) -> Result<Evaluation> {
    let mut env = model.clone();
    let mut rng = match policy {
        Policy::UniformRandom { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut records = Vec::with_capacity(test.len());
    let mut skipped = 0;
    for event in test {
        let (Some(user), Some(real)) = (env.profiles.index_of(&event.user_id), world.schema.poi_index(&event.poi_id)) else {
            skipped += 1;
            continue;
        };
        let (t, transformed) = env.context(world, event.timestamp)?;
        let pred = match policy {
            Policy::Greedy => argmax(&env.agent.eval.q_values(&env.state(user, &transformed))?),
            Policy::UniformRandom { .. } => rng.as_mut().map_or(0, |r| r.gen_range(0..world.action_count())),
            Policy::Oracle => real,
        };
        let (rp, pp) = (world.schema.poi(real), world.schema.poi(pred));
        let cats = world.schema.categories();
        records.push(PredictionRecord {
            real_poi: rp.id.clone(),
            pred_poi: pp.id.clone(),
            real_cat: cats[rp.category].name.clone(),
            pred_cat: cats[pp.category].name.clone(),
            real_loc: rp.location,
            pred_loc: pp.location,
        });
        env.observe(world, user, real, &t)?;
    }
    if skipped > 0 {
        log::warn!("evaluation skipped {skipped} events with unknown users or POIs");
    }
    Ok(Evaluation {
        report: metrics(&records, &world.vectors)?,
        records,
        skipped,
    })
}

const PREDICTION_HEADER: [&str; 8] = [
    "real_poi", "pred_poi", "real_cat", "pred_cat", "real_lat", "real_lon", "pred_lat", "pred_lon",
];

/// Tab-separated dump; coordinates use shortest round-trip formatting.
pub fn write_predictions<W: Write>(records: &[PredictionRecord], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(sink);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(PREDICTION_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.real_poi.clone(),
            r.pred_poi.clone(),
            r.real_cat.clone(),
            r.pred_cat.clone(),
            r.real_loc.0.to_string(),
            r.real_loc.1.to_string(),
            r.pred_loc.0.to_string(),
            r.pred_loc.1.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(source: R) -> Result<Vec<PredictionRecord>> {
    let mut rd = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(source);
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if row.len() != PREDICTION_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", PREDICTION_HEADER.len(), row.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            row[k].parse().map_err(|e| Error::Parse {
                line,
                message: format!("{}: {e}", PREDICTION_HEADER[k]),
            })
        };
        out.push(PredictionRecord {
            real_poi: row[0].to_string(),
            pred_poi: row[1].to_string(),
            real_cat: row[2].to_string(),
            pred_cat: row[3].to_string(),
            real_loc: (num(4)?, num(5)?),
            pred_loc: (num(6)?, num(7)?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn rec(real: &str, pred: &str) -> PredictionRecord {
        PredictionRecord {
            real_poi: format!("p-{real}"),
            pred_poi: format!("p-{pred}"),
            real_cat: real.into(),
            pred_cat: pred.into(),
            real_loc: (40.0, -74.0),
            pred_loc: (40.0, -74.0),
        }
    }

    #[test]
    fn two_class_hand_instance() {
        let r = [rec("A", "A"), rec("A", "B"), rec("B", "B")];
        assert!((weighted_precision(&r).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((weighted_recall(&r).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_constant_wrong() {
        let perfect = [rec("A", "A"), rec("B", "B"), rec("C", "C")];
        assert_eq!(weighted_precision(&perfect).unwrap(), 1.0);
        assert_eq!(weighted_recall(&perfect).unwrap(), 1.0);
        let wrong = [rec("A", "Z"), rec("B", "Z")];
        assert_eq!(weighted_precision(&wrong).unwrap(), 0.0);
        assert_eq!(weighted_recall(&wrong).unwrap(), 0.0);
        let mixed = [rec("A", "B"), rec("B", "B")];
        assert!(weighted_precision(&mixed).unwrap() < 1.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(weighted_precision(&[]).is_err());
        assert!(weighted_recall(&[]).is_err());
        assert!(avg_distance(&[]).is_err());
    }

    #[test]
    fn similarity_examples() {
        let mut table = HashMap::new();
        table.insert("cafe".to_string(), vec![1.0, 0.0]);
        table.insert("park".to_string(), vec![0.0, 1.0]);
        table.insert("bar".to_string(), vec![1.0, 1.0]);
        let v = CategoryVectors::from_table(2, table).unwrap();
        assert_eq!(avg_similarity(&[rec("cafe", "cafe")], &v).unwrap(), 1.0);
        assert_eq!(avg_similarity(&[rec("cafe", "park")], &v).unwrap(), 0.0);
        let three = [rec("cafe", "bar"), rec("park", "park"), rec("bar", "park")];
        let h = 0.5f64.sqrt();
        assert!((avg_similarity(&three, &v).unwrap() - (h + 1.0 + h) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let mut r = rec("A", "A");
        assert_eq!(avg_distance(&[r.clone()]).unwrap(), 0.0);
        r.real_loc = (40.7580, -73.9855);
        r.pred_loc = (40.7484, -73.9857);
        let d = avg_distance(&[r.clone()]).unwrap();
        assert!((d - 1.068).abs() < 0.005, "{d}");
        let mut flipped = r.clone();
        std::mem::swap(&mut flipped.real_loc, &mut flipped.pred_loc);
        assert_eq!(avg_distance(&[flipped]).unwrap(), d);
        let mut far = r.clone();
        far.pred_loc = (40.7680, -73.9855);
        let d2 = avg_distance(&[far.clone()]).unwrap();
        assert!((avg_distance(&[r, far]).unwrap() - (d + d2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn predictions_round_trip() {
        let mut r = rec("coffee shop", "park");
        r.real_loc = (40.123456789012345, -73.1);
        let mut buf = Vec::new();
        write_predictions(&[r.clone(), rec("A", "B")], &mut buf).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), vec![r, rec("A", "B")]);
    }
}

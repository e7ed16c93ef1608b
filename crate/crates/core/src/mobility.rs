//! Check-in and taxi ingestion, temporal contexts, and chronological splits.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};
use crate::math::{valid_coordinate, Matrix};

pub const SECONDS_PER_WINDOW: i64 = 3600;

/// Column of the temporal-context matrix holding trips that start and end in the zone.
pub const INNER: usize = 0;
/// Column counting drop-offs in the zone whose pick-up was elsewhere.
pub const IN_FLOW: usize = 1;
/// Column counting pick-ups in the zone whose drop-off was elsewhere.
pub const OUT_FLOW: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckinEvent {
    pub user_id: String,
    pub poi_id: String,
    pub category_id: String,
    pub category_name: String,
    pub lat: f64,
    pub lon: f64,
    /// UTC seconds.
    pub timestamp: i64,
}

impl CheckinEvent {
    pub fn location(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripEnd {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxiRecord {
    pub id: String,
    pub pickup: TripEnd,
    pub dropoff: TripEnd,
}

/// Time-ordered check-ins. Construction sorts stably by timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSequence {
    events: Vec<CheckinEvent>,
}

impl EventSequence {
    pub fn new(mut events: Vec<CheckinEvent>) -> Self {
        events.sort_by_key(|e| e.timestamp);
        Self { events }
    }

    pub fn events(&self) -> &[CheckinEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CheckinEvent> {
        self.events.iter()
    }

    pub fn into_events(self) -> Vec<CheckinEvent> {
        self.events
    }

    pub fn concat(parts: &[EventSequence]) -> Self {
        Self {
            events: parts.iter().flat_map(|p| p.events.iter().cloned()).collect(),
        }
    }
}

impl<'a> IntoIterator for &'a EventSequence {
    type Item = &'a CheckinEvent;
    type IntoIter = std::slice::Iter<'a, CheckinEvent>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimestampFormat {
    /// Integer seconds since the epoch.
    UnixSeconds,
    /// A chrono format string. Offsets (`%z`) are honoured; naive times are read as UTC.
    Pattern(String),
}

impl TimestampFormat {
    pub fn parse(&self, text: &str) -> Option<i64> {
        let text = text.trim();
        match self {
            TimestampFormat::UnixSeconds => text.parse().ok(),
            TimestampFormat::Pattern(fmt) => DateTime::parse_from_str(text, fmt)
                .map(|dt| dt.timestamp())
                .or_else(|_| NaiveDateTime::parse_from_str(text, fmt).map(|dt| dt.and_utc().timestamp()))
                .ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckinColumns {
    pub user_id: usize,
    pub poi_id: usize,
    pub category_id: usize,
    pub category_name: usize,
    pub lat: usize,
    pub lon: usize,
    pub timestamp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxiColumns {
    pub id: usize,
    pub pickup_lat: usize,
    pub pickup_lon: usize,
    pub pickup_time: usize,
    pub dropoff_lat: usize,
    pub dropoff_lon: usize,
    pub dropoff_time: usize,
}

/// Explicit layout of a delimiter-separated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap<C> {
    pub delimiter: u8,
    pub has_header: bool,
    pub timestamp: TimestampFormat,
    pub columns: C,
}

impl ColumnMap<CheckinColumns> {
    /// The layout written by [`write_checkins`].
    pub fn canonical_checkins() -> Self {
        Self {
            delimiter: b'\t',
            has_header: true,
            timestamp: TimestampFormat::UnixSeconds,
            columns: CheckinColumns {
                user_id: 0,
                poi_id: 1,
                category_id: 2,
                category_name: 3,
                lat: 4,
                lon: 5,
                timestamp: 6,
            },
        }
    }

    /// Foursquare TSMC2014 dumps: tab separated, no header, UTC time in the last column.
    pub fn foursquare() -> Self {
        Self {
            delimiter: b'\t',
            has_header: false,
            timestamp: TimestampFormat::Pattern("%a %b %d %H:%M:%S %z %Y".into()),
            columns: CheckinColumns {
                user_id: 0,
                poi_id: 1,
                category_id: 2,
                category_name: 3,
                lat: 4,
                lon: 5,
                timestamp: 7,
            },
        }
    }
}

impl ColumnMap<TaxiColumns> {
    /// The layout written by [`write_taxi`].
    pub fn canonical_taxi() -> Self {
        Self {
            delimiter: b'\t',
            has_header: true,
            timestamp: TimestampFormat::UnixSeconds,
            columns: TaxiColumns {
                id: 0,
                pickup_lat: 1,
                pickup_lon: 2,
                pickup_time: 3,
                dropoff_lat: 4,
                dropoff_lon: 5,
                dropoff_time: 6,
            },
        }
    }
}

/// A parsed corpus plus the number of rows that were rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub skipped: usize,
}

fn csv_reader<R: Read, C>(source: R, map: &ColumnMap<C>) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(map.delimiter)
        .has_headers(map.has_header)
        .flexible(true)
        .from_reader(source)
}

fn read_rows<R: Read, C, T>(
    source: R,
    map: &ColumnMap<C>,
    mut row: impl FnMut(&csv::StringRecord) -> Option<T>,
) -> Result<Parsed<Vec<T>>> {
    let mut reader = csv_reader(source, map);
    let mut out = Vec::new();
    let mut skipped = 0;
    for record in reader.records() {
        match record {
            Ok(rec) => match row(&rec) {
                Some(v) => out.push(v),
                None => skipped += 1,
            },
            Err(e) if e.is_io_error() => match e.into_kind() {
                csv::ErrorKind::Io(io) => return Err(Error::Io(io)),
                _ => unreachable!(),
            },
            Err(_) => skipped += 1,
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus { skipped });
    }
    Ok(Parsed { value: out, skipped })
}

fn field(rec: &csv::StringRecord, idx: usize) -> Option<&str> {
    rec.get(idx).map(str::trim)
}

fn float_field(rec: &csv::StringRecord, idx: usize) -> Option<f64> {
    field(rec, idx)?.parse().ok()
}

pub fn parse_checkins<R: Read>(source: R, map: &ColumnMap<CheckinColumns>) -> Result<Parsed<EventSequence>> {
    let cols = &map.columns;
    let parsed = read_rows(source, map, |rec| {
        let lat = float_field(rec, cols.lat)?;
        let lon = float_field(rec, cols.lon)?;
        if !valid_coordinate(lat, lon) {
            return None;
        }
        let category_name = field(rec, cols.category_name)?;
        if category_name.is_empty() {
            return None;
        }
        let user_id = field(rec, cols.user_id).filter(|s| !s.is_empty())?;
        let poi_id = field(rec, cols.poi_id).filter(|s| !s.is_empty())?;
        Some(CheckinEvent {
            user_id: user_id.to_string(),
            poi_id: poi_id.to_string(),
            category_id: field(rec, cols.category_id)?.to_string(),
            category_name: category_name.to_string(),
            lat,
            lon,
            timestamp: map.timestamp.parse(field(rec, cols.timestamp)?)?,
        })
    })?;
    Ok(Parsed {
        value: EventSequence::new(parsed.value),
        skipped: parsed.skipped,
    })
}

pub fn parse_taxi<R: Read>(source: R, map: &ColumnMap<TaxiColumns>) -> Result<Parsed<Vec<TaxiRecord>>> {
    let cols = &map.columns;
    read_rows(source, map, |rec| {
        let end = |lat, lon, time| -> Option<TripEnd> {
            let (lat, lon) = (float_field(rec, lat)?, float_field(rec, lon)?);
            if !valid_coordinate(lat, lon) {
                return None;
            }
            Some(TripEnd {
                lat,
                lon,
                timestamp: map.timestamp.parse(field(rec, time)?)?,
            })
        };
        let pickup = end(cols.pickup_lat, cols.pickup_lon, cols.pickup_time)?;
        let dropoff = end(cols.dropoff_lat, cols.dropoff_lon, cols.dropoff_time)?;
        if dropoff.timestamp < pickup.timestamp {
            return None;
        }
        Some(TaxiRecord {
            id: field(rec, cols.id)?.to_string(),
            pickup,
            dropoff,
        })
    })
}

fn tsv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b'\t').from_writer(sink)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes the canonical check-in layout (see [`ColumnMap::canonical_checkins`]).
pub fn write_checkins<W: Write>(seq: &EventSequence, sink: W) -> Result<()> {
    let mut w = tsv_writer(sink);
    w.write_record(["user_id", "poi_id", "category_id", "category_name", "lat", "lon", "timestamp"])
        .map_err(csv_err)?;
    for e in seq {
        w.write_record([
            e.user_id.clone(),
            e.poi_id.clone(),
            e.category_id.clone(),
            e.category_name.clone(),
            e.lat.to_string(),
            e.lon.to_string(),
            e.timestamp.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_taxi<W: Write>(records: &[TaxiRecord], sink: W) -> Result<()> {
    let mut w = tsv_writer(sink);
    w.write_record([
        "id",
        "pickup_lat",
        "pickup_lon",
        "pickup_time",
        "dropoff_lat",
        "dropoff_lon",
        "dropoff_time",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.id.clone(),
            r.pickup.lat.to_string(),
            r.pickup.lon.to_string(),
            r.pickup.timestamp.to_string(),
            r.dropoff.lat.to_string(),
            r.dropoff.lon.to_string(),
            r.dropoff.timestamp.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Uniform lat/lon rectangle grid; zone index is `row * cols + col`, row 0 at the southern edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneGrid {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    pub rows: usize,
    pub cols: usize,
}

impl ZoneGrid {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("zone grid needs at least one row and one column".into()));
        }
        if !(min_lat <= max_lat && min_lon <= max_lon)
            || !valid_coordinate(min_lat, min_lon)
            || !valid_coordinate(max_lat, max_lon)
        {
            return Err(Error::Config("zone grid bounding box is invalid".into()));
        }
        Ok(Self {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
            rows,
            cols,
        })
    }

    /// Smallest grid covering every point.
    pub fn covering(points: impl IntoIterator<Item = (f64, f64)>, rows: usize, cols: usize) -> Result<Self> {
        let mut bounds: Option<(f64, f64, f64, f64)> = None;
        for (lat, lon) in points {
            let b = bounds.get_or_insert((lat, lat, lon, lon));
            b.0 = b.0.min(lat);
            b.1 = b.1.max(lat);
            b.2 = b.2.min(lon);
            b.3 = b.3.max(lon);
        }
        let (a, b, c, d) = bounds.ok_or_else(|| Error::Config("cannot fit a zone grid to zero points".into()))?;
        Self::new(a, b, c, d, rows, cols)
    }

    pub fn zone_count(&self) -> usize {
        self.rows * self.cols
    }

    fn cell(value: f64, lo: f64, hi: f64, cells: usize) -> usize {
        if hi <= lo {
            return 0;
        }
        let idx = ((value - lo) / (hi - lo) * cells as f64).floor() as usize;
        idx.min(cells - 1)
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }

    pub fn zone_of(&self, lat: f64, lon: f64) -> Option<usize> {
        if !self.contains(lat, lon) {
            return None;
        }
        let r = Self::cell(lat, self.min_lat, self.max_lat, self.rows);
        let c = Self::cell(lon, self.min_lon, self.max_lon, self.cols);
        Some(r * self.cols + c)
    }

    /// `(min_lat, max_lat, min_lon, max_lon)` of a zone.
    pub fn zone_bounds(&self, zone: usize) -> (f64, f64, f64, f64) {
        let (r, c) = (zone / self.cols, zone % self.cols);
        let dlat = (self.max_lat - self.min_lat) / self.rows as f64;
        let dlon = (self.max_lon - self.min_lon) / self.cols as f64;
        let lat0 = self.min_lat + r as f64 * dlat;
        let lon0 = self.min_lon + c as f64 * dlon;
        (lat0, lat0 + dlat, lon0, lon0 + dlon)
    }
}

/// Per-zone traffic counts for one hour: an `M × 3` matrix of (inner, in-flow, out-flow).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalContext {
    pub window_start: i64,
    pub matrix: Matrix,
}

pub fn window_start(timestamp: i64) -> i64 {
    timestamp.div_euclid(SECONDS_PER_WINDOW) * SECONDS_PER_WINDOW
}

/// Contiguous hourly contexts, indexable by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalContexts {
    zones: usize,
    contexts: Vec<TemporalContext>,
}

impl TemporalContexts {
    pub fn zones(&self) -> usize {
        self.zones
    }

    pub fn as_slice(&self) -> &[TemporalContext] {
        &self.contexts
    }

    pub fn kept_trips(&self) -> f64 {
        self.contexts
            .iter()
            .map(|c| (0..self.zones).map(|z| c.matrix.get(z, INNER) + c.matrix.get(z, OUT_FLOW)).sum::<f64>())
            .sum()
    }

    /// Context for the window containing `timestamp`; all-zero outside the recorded span.
    pub fn at(&self, timestamp: i64) -> Matrix {
        let ws = window_start(timestamp);
        self.contexts
            .first()
            .and_then(|first| {
                let offset = (ws - first.window_start) / SECONDS_PER_WINDOW;
                usize::try_from(offset).ok().and_then(|i| self.contexts.get(i))
            })
            .map(|c| c.matrix.clone())
            .unwrap_or_else(|| Matrix::zeros(self.zones, 3))
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "window_start\tzone\tinner\tin_flow\tout_flow")?;
        for ctx in &self.contexts {
            for z in 0..self.zones {
                let row = ctx.matrix.row(z);
                writeln!(sink, "{}\t{}\t{}\t{}\t{}", ctx.window_start, z, row[0], row[1], row[2])?;
            }
        }
        Ok(())
    }

    pub fn read<R: std::io::BufRead>(source: R, zones: usize) -> Result<Self> {
        let mut by_window: BTreeMap<i64, Matrix> = BTreeMap::new();
        for (i, line) in source.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse { line: i + 1, message };
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", cells.len())));
            }
            let ws: i64 = cells[0].parse().map_err(|e| bad(format!("window_start: {e}")))?;
            let z: usize = cells[1].parse().map_err(|e| bad(format!("zone: {e}")))?;
            if z >= zones {
                return Err(bad(format!("zone {z} out of range")));
            }
            let m = by_window.entry(ws).or_insert_with(|| Matrix::zeros(zones, 3));
            for k in 0..3 {
                *m.get_mut(z, k) = cells[2 + k].parse().map_err(|e| bad(format!("count: {e}")))?;
            }
        }
        Ok(Self {
            zones,
            contexts: by_window
                .into_iter()
                .map(|(window_start, matrix)| TemporalContext { window_start, matrix })
                .collect(),
        })
    }
}

/// Hourly traffic matrices over the span of the records; trips are binned by pick-up window
/// and trips with either end outside the grid are dropped.
pub fn build_temporal_context(records: &[TaxiRecord], grid: &ZoneGrid) -> Result<TemporalContexts> {
    let zones = grid.zone_count();
    if zones == 0 {
        return Err(Error::Config("zone grid has no zones".into()));
    }
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let (Some(from), Some(to)) = (
            grid.zone_of(r.pickup.lat, r.pickup.lon),
            grid.zone_of(r.dropoff.lat, r.dropoff.lon),
        ) else {
            continue;
        };
        kept.push((window_start(r.pickup.timestamp), from, to));
    }
    let Some(first) = kept.iter().map(|k| k.0).min() else {
        return Ok(TemporalContexts {
            zones,
            contexts: Vec::new(),
        });
    };
    let last = kept.iter().map(|k| k.0).max().unwrap_or(first);
    let windows = ((last - first) / SECONDS_PER_WINDOW) as usize + 1;
    let mut contexts: Vec<TemporalContext> = (0..windows)
        .map(|i| TemporalContext {
            window_start: first + i as i64 * SECONDS_PER_WINDOW,
            matrix: Matrix::zeros(zones, 3),
        })
        .collect();
    for (ws, from, to) in kept {
        let m = &mut contexts[((ws - first) / SECONDS_PER_WINDOW) as usize].matrix;
        if from == to {
            *m.get_mut(from, INNER) += 1.0;
        } else {
            *m.get_mut(from, OUT_FLOW) += 1.0;
            *m.get_mut(to, IN_FLOW) += 1.0;
        }
    }
    Ok(TemporalContexts { zones, contexts })
}

/// First `⌊ratio·n⌋` events train, the rest test.
pub fn split_train_test(seq: &EventSequence, ratio: f64) -> Result<(EventSequence, EventSequence)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = seq.len();
    if n < 2 {
        return Err(Error::TooFewEvents { needed: 2, got: n });
    }
    let cut = (ratio * n as f64).floor() as usize;
    let (train, test) = seq.events.split_at(cut);
    Ok((
        EventSequence { events: train.to_vec() },
        EventSequence { events: test.to_vec() },
    ))
}

/// `k` contiguous chronological groups; the `n mod k` remainder goes to the earliest groups.
pub fn split_groups(seq: &EventSequence, k: usize) -> Result<Vec<EventSequence>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 groups, got {k}")));
    }
    let n = seq.len();
    if n < k {
        return Err(Error::TooFewEvents { needed: k, got: n });
    }
    let (base, extra) = (n / k, n % k);
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        groups.push(EventSequence {
            events: seq.events[start..start + size].to_vec(),
        });
        start += size;
    }
    Ok(groups)
}

//! Two-stage collection over file-backed NDJSON record stores: an event
//! filter (keywords + time window + optional bounding region) followed by
//! capped per-user history retrieval, plus history statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Georeference, GeoRecord, LatLon, PlaceScale, Region, Ring};

/// Default history cap, matching the user-timeline retrieval limit.
pub const DEFAULT_HISTORY_CAP: usize = 3200;

/// Serialized form of a record line. Either `lat`/`lon` or
/// `place_scale`/`place_boundary` must be present; boundary rings are
/// arrays of `[lat, lon]` pairs.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    record_id: String,
    user_id: String,
    timestamp_utc: i64,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    place_scale: Option<PlaceScale>,
    #[serde(skip_serializing_if = "Option::is_none")]
    place_boundary: Option<Vec<Vec<[f64; 2]>>>,
}

impl RawRecord {
    fn into_record(self) -> Result<GeoRecord> {
        let georef = match (self.lat, self.lon, self.place_scale, self.place_boundary) {
            (Some(lat), Some(lon), None, None) => Georeference::coordinate(lat, lon)?,
            (None, None, Some(scale), Some(rings)) => {
                let rings: Vec<Ring> = rings
                    .into_iter()
                    .map(|r| r.into_iter().map(|[lat, lon]| LatLon::new(lat, lon)).collect())
                    .collect();
                Georeference::place(scale, rings)?
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "record needs either lat/lon or place_scale/place_boundary".into(),
                ))
            }
        };
        Ok(GeoRecord {
            record_id: self.record_id,
            user_id: self.user_id,
            timestamp_utc: self.timestamp_utc,
            text: self.text,
            georef,
        })
    }

    fn from_record(rec: &GeoRecord) -> RawRecord {
        let (lat, lon, place_scale, place_boundary) = match &rec.georef {
            Georeference::Coordinate(p) => (Some(p.lat), Some(p.lon), None, None),
            Georeference::Place { scale, boundary } => {
                let rings = boundary
                    .iter()
                    .map(|r| r.iter().map(|v| [v.lat, v.lon]).collect())
                    .collect();
                (None, None, Some(*scale), Some(rings))
            }
        };
        RawRecord {
            record_id: rec.record_id.clone(),
            user_id: rec.user_id.clone(),
            timestamp_utc: rec.timestamp_utc,
            text: rec.text.clone(),
            lat,
            lon,
            place_scale,
            place_boundary,
        }
    }
}

/// Serializes one record as an NDJSON line (no trailing newline).
pub fn record_to_json_line(rec: &GeoRecord) -> String {
    serde_json::to_string(&RawRecord::from_record(rec)).expect("record serialization")
}

/// Parses one NDJSON line into a record.
pub fn record_from_json_line(line: &str) -> Result<GeoRecord> {
    let raw: RawRecord = serde_json::from_str(line)
        .map_err(|e| Error::InvalidArgument(format!("malformed record line: {e}")))?;
    raw.into_record()
}

/// In-memory view of an NDJSON record store, indexed by user with
/// most-recent-first ordering. Malformed lines are skipped and counted.
#[derive(Debug, Clone)]
pub struct RecordStore {
    records: Vec<GeoRecord>,
    by_user: BTreeMap<String, Vec<usize>>,
    malformed_lines: usize,
}

impl RecordStore {
    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut records = Vec::new();
        let mut malformed = 0usize;
        let mut seen_ids: HashSet<String> = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io_at(path, lineno + 1, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match record_from_json_line(&line) {
                Ok(rec) => {
                    if seen_ids.insert(rec.record_id.clone()) {
                        records.push(rec);
                    } else {
                        // Duplicate record_id violates the store invariant;
                        // treated like any other bad line.
                        malformed += 1;
                    }
                }
                Err(_) => malformed += 1,
            }
        }
        Ok(Self::build(records, malformed))
    }

    pub fn from_records(records: Vec<GeoRecord>) -> Self {
        Self::build(records, 0)
    }

    fn build(records: Vec<GeoRecord>, malformed_lines: usize) -> Self {
        let mut by_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, rec) in records.iter().enumerate() {
            by_user.entry(rec.user_id.clone()).or_default().push(idx);
        }
        for indices in by_user.values_mut() {
            // Stable sort keeps store order among equal timestamps.
            indices.sort_by_key(|&i| std::cmp::Reverse(records[i].timestamp_utc));
        }
        RecordStore {
            records,
            by_user,
            malformed_lines,
        }
    }

    /// Records in store (file) order.
    pub fn stream(&self) -> impl Iterator<Item = &GeoRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of lines skipped while reading the backing file.
    pub fn malformed_lines(&self) -> usize {
        self.malformed_lines
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &String> {
        self.by_user.keys()
    }

    pub fn has_user(&self, user_id: &str) -> bool {
        self.by_user.contains_key(user_id)
    }

    pub fn write_ndjson(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ndjson_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_ndjson_string(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&record_to_json_line(rec));
            out.push('\n');
        }
        out
    }
}

/// Event filter: keywords, half-open UTC window, optional bounding region.
#[derive(Debug, Clone)]
pub struct FilterSpec {
    keywords: Vec<String>,
    pub start_utc: i64,
    pub end_utc: i64,
    pub bounding_region: Option<Region>,
}

impl FilterSpec {
    pub fn new(
        keywords: Vec<String>,
        start_utc: i64,
        end_utc: i64,
        bounding_region: Option<Region>,
    ) -> Result<Self> {
        if keywords.is_empty() {
            return Err(Error::InvalidArgument("filter needs at least one keyword".into()));
        }
        if start_utc > end_utc {
            return Err(Error::InvalidArgument(format!(
                "filter window start {start_utc} is after end {end_utc}"
            )));
        }
        Ok(FilterSpec {
            keywords: keywords.into_iter().map(|k| k.to_lowercase()).collect(),
            start_utc,
            end_utc,
            bounding_region,
        })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    /// Case-insensitive substring keyword match, half-open [start, end)
    /// window, optional bounding-region containment of the representative
    /// point.
    pub fn matches(&self, rec: &GeoRecord) -> bool {
        if rec.timestamp_utc < self.start_utc || rec.timestamp_utc >= self.end_utc {
            return false;
        }
        let text = rec.text.to_lowercase();
        if !self.keywords.iter().any(|k| text.contains(k.as_str())) {
            return false;
        }
        match &self.bounding_region {
            Some(region) => region.contains_latlon(rec.georef.representative()),
            None => true,
        }
    }
}

/// Streams records matching the filter, in store order.
pub fn filter_event_records<'a>(
    store: &'a RecordStore,
    spec: &'a FilterSpec,
) -> impl Iterator<Item = &'a GeoRecord> {
    store.stream().filter(|rec| spec.matches(rec))
}

/// Distinct user ids whose representative point lies inside the corridor.
pub fn select_event_users<'a, I>(records: I, corridor: &Region) -> std::collections::BTreeSet<String>
where
    I: IntoIterator<Item = &'a GeoRecord>,
{
    records
        .into_iter()
        .filter(|rec| corridor.contains_latlon(rec.georef.representative()))
        .map(|rec| rec.user_id.clone())
        .collect()
}

/// Up to `cap` most recent records of a user, newest first. An unknown user
/// yields an empty list.
pub fn fetch_history(store: &RecordStore, user_id: &str, cap: usize) -> Result<Vec<GeoRecord>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("history cap must be at least 1".into()));
    }
    let Some(indices) = store.by_user.get(user_id) else {
        return Ok(Vec::new());
    };
    Ok(indices
        .iter()
        .take(cap)
        .map(|&i| store.records[i].clone())
        .collect())
}

/// Per-user history composition: totals and place/coordinate ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStats {
    pub n_total: u64,
    pub n_place_referenced: u64,
    pub n_coordinate_referenced: u64,
    pub ratio_place: f64,
    pub ratio_coordinate: f64,
}

impl HistoryStats {
    fn from_records(records: &[GeoRecord]) -> HistoryStats {
        let n_total = records.len() as u64;
        let n_place = records.iter().filter(|r| r.georef.is_place()).count() as u64;
        let n_coord = n_total - n_place;
        let (ratio_place, ratio_coordinate) = if n_total == 0 {
            (0.0, 0.0)
        } else {
            (n_place as f64 / n_total as f64, n_coord as f64 / n_total as f64)
        };
        HistoryStats {
            n_total,
            n_place_referenced: n_place,
            n_coordinate_referenced: n_coord,
            ratio_place,
            ratio_coordinate,
        }
    }

    fn columns(&self) -> [f64; 5] {
        [
            self.n_total as f64,
            self.n_place_referenced as f64,
            self.n_coordinate_referenced as f64,
            self.ratio_place,
            self.ratio_coordinate,
        ]
    }
}

/// One aggregate row (a value per HistoryStats column).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryAggregateRow {
    pub n_total: f64,
    pub n_place_referenced: f64,
    pub n_coordinate_referenced: f64,
    pub ratio_place: f64,
    pub ratio_coordinate: f64,
}

impl HistoryAggregateRow {
    fn from_columns(c: [f64; 5]) -> Self {
        HistoryAggregateRow {
            n_total: c[0],
            n_place_referenced: c[1],
            n_coordinate_referenced: c[2],
            ratio_place: c[3],
            ratio_coordinate: c[4],
        }
    }
}

/// Column-wise max/min/median/mean over the per-user stats.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryAggregate {
    pub max: HistoryAggregateRow,
    pub min: HistoryAggregateRow,
    pub median: HistoryAggregateRow,
    pub mean: HistoryAggregateRow,
}

/// Median with the usual convention: middle element, or the mean of the two
/// middle elements for even counts.
pub(crate) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Per-user stats plus column-wise aggregates (None for an empty cohort).
pub fn history_stats(
    histories: &BTreeMap<String, Vec<GeoRecord>>,
) -> (BTreeMap<String, HistoryStats>, Option<HistoryAggregate>) {
    let per_user: BTreeMap<String, HistoryStats> = histories
        .iter()
        .map(|(user, recs)| (user.clone(), HistoryStats::from_records(recs)))
        .collect();
    if per_user.is_empty() {
        return (per_user, None);
    }
    let mut columns: [Vec<f64>; 5] = Default::default();
    for stats in per_user.values() {
        for (col, v) in columns.iter_mut().zip(stats.columns()) {
            col.push(v);
        }
    }
    let mut max = [0.0; 5];
    let mut min = [0.0; 5];
    let mut med = [0.0; 5];
    let mut mean = [0.0; 5];
    for (i, col) in columns.iter_mut().enumerate() {
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        min[i] = col[0];
        max[i] = col[col.len() - 1];
        med[i] = median_of_sorted(col);
        mean[i] = col.iter().sum::<f64>() / col.len() as f64;
    }
    let aggregate = HistoryAggregate {
        max: HistoryAggregateRow::from_columns(max),
        min: HistoryAggregateRow::from_columns(min),
        median: HistoryAggregateRow::from_columns(med),
        mean: HistoryAggregateRow::from_columns(mean),
    };
    (per_user, Some(aggregate))
}

/// Writes the per-user table followed by the aggregate rows.
pub fn write_history_stats_csv<W: std::io::Write>(
    per_user: &BTreeMap<String, HistoryStats>,
    aggregate: Option<&HistoryAggregate>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Data(format!("writing history stats: {e}"));
    w.write_record([
        "user_id",
        "n_total",
        "n_place_referenced",
        "n_coordinate_referenced",
        "ratio_place",
        "ratio_coordinate",
    ])
    .map_err(io_err)?;
    for (user, s) in per_user {
        w.write_record([
            user.as_str(),
            &s.n_total.to_string(),
            &s.n_place_referenced.to_string(),
            &s.n_coordinate_referenced.to_string(),
            &s.ratio_place.to_string(),
            &s.ratio_coordinate.to_string(),
        ])
        .map_err(io_err)?;
    }
    if let Some(agg) = aggregate {
        for (label, row) in [
            ("max", &agg.max),
            ("min", &agg.min),
            ("median", &agg.median),
            ("mean", &agg.mean),
        ] {
            w.write_record([
                label,
                &row.n_total.to_string(),
                &row.n_place_referenced.to_string(),
                &row.n_coordinate_referenced.to_string(),
                &row.ratio_place.to_string(),
                &row.ratio_coordinate.to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("flushing history stats: {e}")))
}

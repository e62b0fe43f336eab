//! Zone-level hotspot analysis (Getis-Ord Gi* with population
//! normalization) and local-time temporal distributions split by corridor
//! membership.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geo::{GeoRecord, PlaceScale, Region};

/// Significance thresholds on |z|: 2.58 / 1.96 / 1.645.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Hot99,
    Hot95,
    Hot90,
    NotSignificant,
    Cold90,
    Cold95,
    Cold99,
}

impl Classification {
    pub fn from_z(z: f64) -> Classification {
        if z >= 2.58 {
            Classification::Hot99
        } else if z >= 1.96 {
            Classification::Hot95
        } else if z >= 1.645 {
            Classification::Hot90
        } else if z <= -2.58 {
            Classification::Cold99
        } else if z <= -1.96 {
            Classification::Cold95
        } else if z <= -1.645 {
            Classification::Cold90
        } else {
            Classification::NotSignificant
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Classification::Hot99 => "hot99",
            Classification::Hot95 => "hot95",
            Classification::Hot90 => "hot90",
            Classification::NotSignificant => "not_significant",
            Classification::Cold90 => "cold90",
            Classification::Cold95 => "cold95",
            Classification::Cold99 => "cold99",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-zone record count with the population-normalized rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneCount {
    pub region_id: String,
    pub raw_count: u64,
    pub population: u64,
    /// raw_count / population; None where population is 0.
    pub rate: Option<f64>,
}

/// Zone counts plus the records that joined nowhere or were excluded as too
/// coarse.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneCounts {
    /// Sorted by region_id.
    pub zones: Vec<ZoneCount>,
    /// Records whose representative point fell in no zone.
    pub residual: u64,
    /// Records dropped for being coarser than the scale cap.
    pub excluded_coarse: u64,
}

/// Joins representative points to zones, dropping place records coarser
/// than `max_scale`. Points on a shared boundary go to the smallest
/// region_id.
pub fn count_by_zone<'a, I>(records: I, zones: &[Region], max_scale: PlaceScale) -> ZoneCounts
where
    I: IntoIterator<Item = &'a GeoRecord>,
{
    let mut order: Vec<usize> = (0..zones.len()).collect();
    order.sort_by(|&a, &b| zones[a].region_id.cmp(&zones[b].region_id));
    let mut counts: Vec<u64> = vec![0; zones.len()];
    let mut residual = 0u64;
    let mut excluded = 0u64;
    for rec in records {
        if let Some(scale) = rec.georef.scale() {
            if scale.is_coarser_than(max_scale) {
                excluded += 1;
                continue;
            }
        }
        let p = rec.georef.representative();
        let mut joined = false;
        for (slot, &zi) in order.iter().enumerate() {
            if zones[order[slot]].contains_latlon(p) {
                counts[zi] += 1;
                joined = true;
                break;
            }
        }
        if !joined {
            residual += 1;
        }
    }
    let zones_out: Vec<ZoneCount> = order
        .iter()
        .map(|&i| {
            let z = &zones[i];
            let rate = if z.population > 0 {
                Some(counts[i] as f64 / z.population as f64)
            } else {
                None
            };
            ZoneCount {
                region_id: z.region_id.clone(),
                raw_count: counts[i],
                population: z.population,
                rate,
            }
        })
        .collect();
    ZoneCounts {
        zones: zones_out,
        residual,
        excluded_coarse: excluded,
    }
}

/// Symmetric zone contiguity graph.
#[derive(Debug, Clone, Default)]
pub struct Adjacency {
    neighbors: BTreeMap<String, BTreeSet<String>>,
}

impl Adjacency {
    pub fn new() -> Self {
        Adjacency::default()
    }

    pub fn add_edge(&mut self, a: impl Into<String>, b: impl Into<String>) {
        let a = a.into();
        let b = b.into();
        if a == b {
            return;
        }
        self.neighbors.entry(a.clone()).or_default().insert(b.clone());
        self.neighbors.entry(b).or_default().insert(a);
    }

    pub fn neighbors_of(&self, id: &str) -> impl Iterator<Item = &String> {
        self.neighbors.get(id).into_iter().flatten()
    }

    pub fn degree(&self, id: &str) -> usize {
        self.neighbors.get(id).map_or(0, |s| s.len())
    }

    /// Contiguity from shared ring vertices: zones sharing at least one
    /// boundary point (after snapping coordinates to `snap_tol_deg`) are
    /// neighbors.
    pub fn from_regions(regions: &[Region], snap_tol_deg: f64) -> Adjacency {
        let snap = |v: f64| (v / snap_tol_deg).round() as i64;
        let mut by_vertex: BTreeMap<(i64, i64), BTreeSet<usize>> = BTreeMap::new();
        for (i, region) in regions.iter().enumerate() {
            for ring in &region.boundary {
                for v in ring {
                    by_vertex
                        .entry((snap(v.lat), snap(v.lon)))
                        .or_default()
                        .insert(i);
                }
            }
        }
        let mut adj = Adjacency::new();
        for shared in by_vertex.values() {
            let ids: Vec<&usize> = shared.iter().collect();
            for (k, &&a) in ids.iter().enumerate() {
                for &&b in &ids[k + 1..] {
                    adj.add_edge(regions[a].region_id.clone(), regions[b].region_id.clone());
                }
            }
        }
        adj
    }
}

/// One hotspot row.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotRow {
    pub region_id: String,
    /// The analyzed value: raw count or rate.
    pub analysis_value: f64,
    pub gi_star_z: f64,
    pub classification: Classification,
}

/// Gi* result rows plus zones excluded for zero population in rate mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GiStarResult {
    pub rows: Vec<HotspotRow>,
    pub excluded_zero_population: Vec<String>,
}

/// Getis-Ord Gi* with self-inclusive binary contiguity weights:
///
///   z_i = (Σ_j w_ij x_j − X̄ W_i) / (S sqrt((n W_i − W_i²)/(n−1)))
///
/// where W_i counts the zone and its neighbors, and X̄, S are the global
/// mean and (population) standard deviation. Zero denominators (all-equal
/// values, or a neighborhood spanning every zone) yield z = 0.
pub fn gi_star(counts: &ZoneCounts, adjacency: &Adjacency, use_rate: bool) -> Result<GiStarResult> {
    let mut ids: Vec<&str> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut excluded: Vec<String> = Vec::new();
    for z in &counts.zones {
        if use_rate {
            match z.rate {
                Some(rate) => {
                    ids.push(&z.region_id);
                    values.push(rate);
                }
                None => excluded.push(z.region_id.clone()),
            }
        } else {
            ids.push(&z.region_id);
            values.push(z.raw_count as f64);
        }
    }
    let n = ids.len();
    if n < 3 {
        return Err(Error::NoVariance(format!(
            "Gi* needs at least 3 zones, got {n}"
        )));
    }
    let nf = n as f64;
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mean = values.iter().sum::<f64>() / nf;
    let sq_mean = values.iter().map(|v| v * v).sum::<f64>() / nf;
    let sd = (sq_mean - mean * mean).max(0.0).sqrt();

    let mut rows = Vec::with_capacity(n);
    for (i, &id) in ids.iter().enumerate() {
        let mut w = 1.0;
        let mut local_sum = values[i];
        for nb in adjacency.neighbors_of(id) {
            if let Some(&j) = index.get(nb.as_str()) {
                w += 1.0;
                local_sum += values[j];
            }
        }
        let numerator = local_sum - mean * w;
        let denominator = sd * ((nf * w - w * w) / (nf - 1.0)).max(0.0).sqrt();
        let z = if denominator == 0.0 { 0.0 } else { numerator / denominator };
        rows.push(HotspotRow {
            region_id: id.to_string(),
            analysis_value: values[i],
            gi_star_z: z,
            classification: Classification::from_z(z),
        });
    }
    Ok(GiStarResult {
        rows,
        excluded_zero_population: excluded,
    })
}

pub fn write_hotspots_csv<W: Write>(result: &GiStarResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing hotspots: {e}"));
    w.write_record(["region_id", "value", "gi_star_z", "classification"])
        .map_err(err)?;
    for row in &result.rows {
        w.write_record([
            row.region_id.as_str(),
            &row.analysis_value.to_string(),
            &row.gi_star_z.to_string(),
            row.classification.name(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("flushing hotspots: {e}")))
}

// ---------------------------------------------------------------------------
// Civil date helpers (days since 1970-01-01 ↔ YYYY-MM-DD), for local-time
// binning without a calendar dependency.
// ---------------------------------------------------------------------------

/// Days since the epoch for a civil date.
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as u64;
    let m = month as u64;
    let d = day as u64;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe as i64 - 719_468
}

/// Civil date (year, month, day) for days since the epoch.
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = (if mp < 10 { mp + 3 } else { mp - 9 }) as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

pub fn format_date(days: i64) -> String {
    let (y, m, d) = civil_from_days(days);
    format!("{y:04}-{m:02}-{d:02}")
}

/// Parses "YYYY-MM-DD" into days since the epoch.
pub fn parse_date(text: &str) -> Result<i64> {
    let parts: Vec<&str> = text.trim().split('-').collect();
    let bad = || Error::Config(format!("invalid date {text:?}, expected YYYY-MM-DD"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let year: i64 = parts[0].parse().map_err(|_| bad())?;
    let month: u32 = parts[1].parse().map_err(|_| bad())?;
    let day: u32 = parts[2].parse().map_err(|_| bad())?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return Err(bad());
    }
    Ok(days_from_civil(year, month, day))
}

/// Counts for one (local day, local hour) bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinCount {
    pub inside: u64,
    pub outside: u64,
}

/// Hourly local-time distribution split by corridor membership.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalHistogram {
    /// Keyed by (days since epoch, hour 0–23).
    pub bins: BTreeMap<(i64, u8), BinCount>,
    /// Inclusive local-day range that was binned.
    pub day_range: (i64, i64),
    /// Records whose offset came from the longitude fallback.
    pub offset_fallbacks: u64,
    /// Records binned (inside day_range).
    pub total_binned: u64,
}

/// Bins records by local (day, hour), using the containing zone's UTC
/// offset when set and the longitude rule round(lon / 15) otherwise.
pub fn temporal_histogram<'a, I>(
    records: I,
    corridor: &Region,
    zones: &[Region],
    day_range: (i64, i64),
) -> TemporalHistogram
where
    I: IntoIterator<Item = &'a GeoRecord>,
{
    let mut order: Vec<usize> = (0..zones.len()).collect();
    order.sort_by(|&a, &b| zones[a].region_id.cmp(&zones[b].region_id));
    let mut bins: BTreeMap<(i64, u8), BinCount> = BTreeMap::new();
    let mut fallbacks = 0u64;
    let mut total = 0u64;
    for rec in records {
        let p = rec.georef.representative();
        let mut offset_hours: Option<f64> = None;
        for &zi in &order {
            if zones[zi].contains_latlon(p) {
                offset_hours = zones[zi].utc_offset_hours;
                break;
            }
        }
        let offset_hours = match offset_hours {
            Some(h) => h,
            None => {
                fallbacks += 1;
                (p.lon / 15.0).round()
            }
        };
        let local = rec.timestamp_utc + (offset_hours * 3600.0).round() as i64;
        let day = local.div_euclid(86_400);
        if day < day_range.0 || day > day_range.1 {
            continue;
        }
        let hour = (local.rem_euclid(86_400) / 3600) as u8;
        let bin = bins.entry((day, hour)).or_default();
        if corridor.contains_latlon(p) {
            bin.inside += 1;
        } else {
            bin.outside += 1;
        }
        total += 1;
    }
    TemporalHistogram {
        bins,
        day_range,
        offset_fallbacks: fallbacks,
        total_binned: total,
    }
}

pub fn write_temporal_csv<W: Write>(hist: &TemporalHistogram, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing temporal histogram: {e}"));
    w.write_record(["date", "hour", "inside_count", "outside_count"])
        .map_err(err)?;
    for (&(day, hour), bin) in &hist.bins {
        w.write_record([
            format_date(day).as_str(),
            &hour.to_string(),
            &bin.inside.to_string(),
            &bin.outside.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("flushing temporal histogram: {e}")))
}

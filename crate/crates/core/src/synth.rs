//! Deterministic synthetic-cohort generator: plants per-user home regions,
//! multi-scale footprints, and event-day travel, emitting a record store
//! plus the ground truth that downstream accuracy tests score against.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{Georeference, GeoRecord, LatLon, PlaceScale, PlanarPoint, Projection, Region};
use crate::ingest::RecordStore;
use crate::stats::days_from_civil;

/// Sampling probabilities over the georeference kinds; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleMix {
    pub coordinate: f64,
    pub poi: f64,
    pub neighborhood: f64,
    pub city: f64,
    pub admin: f64,
    pub country: f64,
}

impl ScaleMix {
    pub fn sum(&self) -> f64 {
        self.coordinate + self.poi + self.neighborhood + self.city + self.admin + self.country
    }

    /// None = coordinate, Some(scale) = place at that scale.
    fn sample<R: Rng>(&self, rng: &mut R) -> Option<PlaceScale> {
        let x: f64 = rng.gen();
        let mut acc = self.coordinate;
        if x < acc {
            return None;
        }
        for (p, scale) in [
            (self.poi, PlaceScale::Poi),
            (self.neighborhood, PlaceScale::Neighborhood),
            (self.city, PlaceScale::City),
            (self.admin, PlaceScale::Admin),
            (self.country, PlaceScale::Country),
        ] {
            acc += p;
            if x < acc {
                return Some(scale);
            }
        }
        None
    }

    pub fn probability_of(&self, scale: Option<PlaceScale>) -> f64 {
        match scale {
            None => self.coordinate,
            Some(PlaceScale::Poi) => self.poi,
            Some(PlaceScale::Neighborhood) => self.neighborhood,
            Some(PlaceScale::City) => self.city,
            Some(PlaceScale::Admin) => self.admin,
            Some(PlaceScale::Country) => self.country,
        }
    }
}

/// Nominal place-box side lengths in meters per scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaceSizes {
    pub poi: f64,
    pub neighborhood: f64,
    pub city: f64,
    pub admin: f64,
    pub country: f64,
}

impl Default for PlaceSizes {
    fn default() -> Self {
        PlaceSizes {
            poi: 100.0,
            neighborhood: 1_000.0,
            city: 10_000.0,
            admin: 200_000.0,
            country: 3_000_000.0,
        }
    }
}

impl PlaceSizes {
    fn side_for(&self, scale: PlaceScale) -> f64 {
        match scale {
            PlaceScale::Poi => self.poi,
            PlaceScale::Neighborhood => self.neighborhood,
            PlaceScale::City => self.city,
            PlaceScale::Admin => self.admin,
            PlaceScale::Country => self.country,
        }
    }
}

/// Event-side configuration: the corridor, the event day, and the travel
/// matrix (per-origin destination probabilities, each row summing to 1).
#[derive(Debug, Clone)]
pub struct EventSpec {
    pub corridor: Region,
    /// Days since the epoch.
    pub event_day: i64,
    /// origin region_id → (destination region_id, probability) rows.
    /// An origin missing from the map stays home.
    pub travel: BTreeMap<String, Vec<(String, f64)>>,
    pub keywords: Vec<String>,
    pub event_records_min: u32,
    pub event_records_max: u32,
    /// Event-record UTC hours are drawn from [start, end).
    pub event_utc_hours: (u32, u32),
}

/// Full scenario description; deterministic given `seed`.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub regions: Vec<Region>,
    pub cohort_size: usize,
    pub records_min: u32,
    pub records_max: u32,
    /// Fraction of history records scattered around the home anchor.
    pub home_fidelity: f64,
    /// Gaussian scatter of home records, meters.
    pub home_sigma_m: f64,
    pub scale_mix: ScaleMix,
    pub place_sizes: PlaceSizes,
    /// History records are spread over this many days before the event.
    pub history_days: u32,
    pub event: EventSpec,
}

const BENIGN_TEXTS: [&str; 8] = [
    "good morning",
    "coffee and bagels",
    "traffic on the highway again",
    "lunch break at last",
    "new blog post is up",
    "great run this evening",
    "weekend plans anyone",
    "reading a good book tonight",
];

const EVENT_TEMPLATES: [&str; 3] = [
    "Watching the {} right now!",
    "Incredible {} today",
    "{} viewing with friends",
];

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::InvalidArgument("scenario needs at least one region".into()));
        }
        if !(0.0..=1.0).contains(&self.home_fidelity) {
            return Err(Error::InvalidArgument(format!(
                "home_fidelity must be in [0, 1], got {}",
                self.home_fidelity
            )));
        }
        if (self.scale_mix.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "scale mix must sum to 1, got {}",
                self.scale_mix.sum()
            )));
        }
        if self.records_min == 0 || self.records_min > self.records_max {
            return Err(Error::InvalidArgument(
                "records_min must be >= 1 and <= records_max".into(),
            ));
        }
        if self.event.event_records_min > self.event.event_records_max {
            return Err(Error::InvalidArgument(
                "event_records_min must be <= event_records_max".into(),
            ));
        }
        if self.event.keywords.is_empty() {
            return Err(Error::InvalidArgument("scenario needs event keywords".into()));
        }
        let ids: Vec<&str> = self.regions.iter().map(|r| r.region_id.as_str()).collect();
        for (origin, row) in &self.event.travel {
            if !ids.contains(&origin.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "travel row references unknown origin {origin:?}"
                )));
            }
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "travel row for {origin:?} sums to {total}, expected 1"
                )));
            }
            for (dest, _) in row {
                if !ids.contains(&dest.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "travel row for {origin:?} references unknown destination {dest:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The UTC event-day window [00:00 event day, 00:00 next day).
    pub fn event_day_window_utc(&self) -> (i64, i64) {
        (
            self.event.event_day * 86_400,
            (self.event.event_day + 1) * 86_400,
        )
    }

    /// Flat key=value scenario file; relative paths resolve against the
    /// file's directory. See the README for the key list.
    pub fn from_file(path: &Path) -> Result<ScenarioSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                )));
            };
            kv.insert(key.trim().to_string(), value.trim().to_string());
        }
        let take = |kv: &mut BTreeMap<String, String>, key: &str| kv.remove(key);
        let required = |v: Option<String>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("{}: missing key {key}", path.display())))
        };
        let parse_f64 = |s: String, key: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: {key} is not a number", path.display())))
        };
        let parse_u64 = |s: String, key: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::Config(format!("{}: {key} is not an integer", path.display())))
        };

        let regions_path = dir.join(required(take(&mut kv, "regions"), "regions")?);
        let regions = crate::geo::load_regions(&regions_path)?;
        let corridor_path = dir.join(required(take(&mut kv, "corridor"), "corridor")?);
        let corridor = crate::geo::load_regions(&corridor_path)?
            .into_iter()
            .next()
            .ok_or_else(|| {
                Error::Config(format!("{}: corridor file has no features", corridor_path.display()))
            })?;

        let seed = parse_u64(take(&mut kv, "seed").unwrap_or_else(|| "42".into()), "seed")?;
        let cohort_size =
            parse_u64(required(take(&mut kv, "cohort_size"), "cohort_size")?, "cohort_size")? as usize;
        let records_min =
            parse_u64(take(&mut kv, "records_min").unwrap_or_else(|| "30".into()), "records_min")? as u32;
        let records_max =
            parse_u64(take(&mut kv, "records_max").unwrap_or_else(|| "60".into()), "records_max")? as u32;
        let home_fidelity = parse_f64(
            take(&mut kv, "home_fidelity").unwrap_or_else(|| "0.8".into()),
            "home_fidelity",
        )?;
        let home_sigma_m = parse_f64(
            take(&mut kv, "home_sigma_m").unwrap_or_else(|| "20000".into()),
            "home_sigma_m",
        )?;
        let history_days = parse_u64(
            take(&mut kv, "history_days").unwrap_or_else(|| "120".into()),
            "history_days",
        )? as u32;
        let event_day = crate::stats::parse_date(
            &required(take(&mut kv, "event_day"), "event_day")?,
        )?;
        let keywords: Vec<String> = take(&mut kv, "keywords")
            .unwrap_or_else(|| "eclipse,totality".into())
            .split(',')
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        let event_records_min = parse_u64(
            take(&mut kv, "event_records_min").unwrap_or_else(|| "1".into()),
            "event_records_min",
        )? as u32;
        let event_records_max = parse_u64(
            take(&mut kv, "event_records_max").unwrap_or_else(|| "3".into()),
            "event_records_max",
        )? as u32;
        let hour_start = parse_u64(
            take(&mut kv, "event_utc_hour_start").unwrap_or_else(|| "16".into()),
            "event_utc_hour_start",
        )? as u32;
        let hour_end = parse_u64(
            take(&mut kv, "event_utc_hour_end").unwrap_or_else(|| "20".into()),
            "event_utc_hour_end",
        )? as u32;

        let mut mix = ScaleMix {
            coordinate: 0.2,
            poi: 0.1,
            neighborhood: 0.2,
            city: 0.4,
            admin: 0.1,
            country: 0.0,
        };
        let mut sizes = PlaceSizes::default();
        for (slot, key) in [
            (&mut mix.coordinate, "scale_mix.coordinate"),
            (&mut mix.poi, "scale_mix.poi"),
            (&mut mix.neighborhood, "scale_mix.neighborhood"),
            (&mut mix.city, "scale_mix.city"),
            (&mut mix.admin, "scale_mix.admin"),
            (&mut mix.country, "scale_mix.country"),
        ] {
            if let Some(v) = take(&mut kv, key) {
                *slot = parse_f64(v, key)?;
            }
        }
        for (slot, key) in [
            (&mut sizes.poi, "place_size.poi"),
            (&mut sizes.neighborhood, "place_size.neighborhood"),
            (&mut sizes.city, "place_size.city"),
            (&mut sizes.admin, "place_size.admin"),
            (&mut sizes.country, "place_size.country"),
        ] {
            if let Some(v) = take(&mut kv, key) {
                *slot = parse_f64(v, key)?;
            }
        }

        let mut travel: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        let travel_keys: Vec<String> = kv
            .keys()
            .filter(|k| k.starts_with("travel."))
            .cloned()
            .collect();
        for key in travel_keys {
            let value = kv.remove(&key).unwrap();
            let mut parts = key.splitn(3, '.');
            parts.next();
            let (Some(origin), Some(dest)) = (parts.next(), parts.next()) else {
                return Err(Error::Config(format!(
                    "{}: travel key must be travel.<origin>.<dest>, got {key}",
                    path.display()
                )));
            };
            travel
                .entry(origin.to_string())
                .or_default()
                .push((dest.to_string(), parse_f64(value, &key)?));
        }
        for row in travel.values_mut() {
            row.sort_by(|a, b| a.0.cmp(&b.0));
        }

        if let Some(unknown) = kv.keys().next() {
            return Err(Error::Config(format!(
                "{}: unknown key {unknown:?}",
                path.display()
            )));
        }

        let spec = ScenarioSpec {
            seed,
            regions,
            cohort_size,
            records_min,
            records_max,
            home_fidelity,
            home_sigma_m,
            scale_mix: mix,
            place_sizes: sizes,
            history_days,
            event: EventSpec {
                corridor,
                event_day,
                travel,
                keywords,
                event_records_min,
                event_records_max,
                event_utc_hours: (hour_start, hour_end),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Planted truth for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTruth {
    pub user_id: String,
    pub home_region_id: String,
    pub destination_region_id: Option<String>,
    pub traveled: bool,
}

/// Per-user planted truth, in user-index order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Data(format!("writing ground truth: {e}"));
        w.write_record(["user_id", "home_region_id", "destination_region_id", "traveled"])
            .map_err(err)?;
        for u in &self.users {
            w.write_record([
                u.user_id.as_str(),
                u.home_region_id.as_str(),
                u.destination_region_id.as_deref().unwrap_or(""),
                if u.traveled { "true" } else { "false" },
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Data(format!("flushing ground truth: {e}")))
    }

    pub fn from_csv_path(path: &Path) -> Result<GroundTruth> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut users = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Config(format!("ground truth: {e}")))?;
            if row.len() < 4 {
                return Err(Error::Config("ground truth rows need 4 columns".into()));
            }
            users.push(UserTruth {
                user_id: row[0].to_string(),
                home_region_id: row[1].to_string(),
                destination_region_id: if row[2].is_empty() {
                    None
                } else {
                    Some(row[2].to_string())
                },
                traveled: &row[3] == "true",
            });
        }
        Ok(GroundTruth { users })
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent pseudo-random stream per (seed, user index), so output
/// is insertion-order independent and generation can run in parallel.
fn user_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, index))
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let mut u1: f64 = rng.gen();
    while u1 <= 0.0 {
        u1 = rng.gen();
    }
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn latlon_bbox(region: &Region) -> (f64, f64, f64, f64) {
    let mut min_lat = f64::INFINITY;
    let mut min_lon = f64::INFINITY;
    let mut max_lat = f64::NEG_INFINITY;
    let mut max_lon = f64::NEG_INFINITY;
    for v in region.boundary.iter().flatten() {
        min_lat = min_lat.min(v.lat);
        min_lon = min_lon.min(v.lon);
        max_lat = max_lat.max(v.lat);
        max_lon = max_lon.max(v.lon);
    }
    (min_lat, max_lat, min_lon, max_lon)
}

fn uniform_point_in_region<R: Rng>(rng: &mut R, region: &Region) -> LatLon {
    let (lat0, lat1, lon0, lon1) = latlon_bbox(region);
    for _ in 0..10_000 {
        let p = LatLon::new(rng.gen_range(lat0..=lat1), rng.gen_range(lon0..=lon1));
        if region.contains_latlon(p) {
            return p;
        }
    }
    region.centroid_latlon()
}

fn uniform_point_in_intersection<R: Rng>(
    rng: &mut R,
    region: &Region,
    corridor: &Region,
) -> Result<LatLon> {
    let (lat0, lat1, lon0, lon1) = latlon_bbox(region);
    for _ in 0..10_000 {
        let p = LatLon::new(rng.gen_range(lat0..=lat1), rng.gen_range(lon0..=lon1));
        if region.contains_latlon(p) && corridor.contains_latlon(p) {
            return Ok(p);
        }
    }
    Err(Error::Data(format!(
        "region {} does not appear to intersect the corridor",
        region.region_id
    )))
}

fn place_box(
    center: LatLon,
    scale: PlaceScale,
    sizes: &PlaceSizes,
    proj: &Projection,
    rng: &mut ChaCha8Rng,
) -> Result<Georeference> {
    let side = sizes.side_for(scale) * rng.gen_range(0.5..1.5);
    let c = proj.forward(center)?;
    let h = side / 2.0;
    let corners = [
        PlanarPoint::new(c.x - h, c.y - h),
        PlanarPoint::new(c.x + h, c.y - h),
        PlanarPoint::new(c.x + h, c.y + h),
        PlanarPoint::new(c.x - h, c.y + h),
    ];
    let ring: Vec<LatLon> = corners.iter().map(|p| proj.inverse(*p)).collect();
    Georeference::place(scale, vec![ring])
}

fn georef_for_point(
    point: LatLon,
    spec: &ScenarioSpec,
    proj: &Projection,
    rng: &mut ChaCha8Rng,
) -> Result<Georeference> {
    match spec.scale_mix.sample(rng) {
        None => Georeference::coordinate(point.lat, point.lon),
        Some(scale) => place_box(point, scale, &spec.place_sizes, proj, rng),
    }
}

/// Generates the record store and ground truth for a scenario.
/// Deterministic for a fixed seed regardless of thread count.
pub fn generate(spec: &ScenarioSpec) -> Result<(RecordStore, GroundTruth)> {
    spec.validate()?;
    let benign: Vec<&str> = BENIGN_TEXTS
        .iter()
        .copied()
        .filter(|t| {
            !spec
                .event
                .keywords
                .iter()
                .any(|k| t.to_lowercase().contains(k.as_str()))
        })
        .collect();
    if benign.is_empty() {
        return Err(Error::InvalidArgument(
            "every benign text collides with an event keyword".into(),
        ));
    }

    // Projection about the overall region extent; meters-to-degrees for
    // scatter and place boxes.
    let mut min_lat = f64::INFINITY;
    let mut max_lat = f64::NEG_INFINITY;
    let mut min_lon = f64::INFINITY;
    let mut max_lon = f64::NEG_INFINITY;
    for r in &spec.regions {
        let (a, b, c, d) = latlon_bbox(r);
        min_lat = min_lat.min(a);
        max_lat = max_lat.max(b);
        min_lon = min_lon.min(c);
        max_lon = max_lon.max(d);
    }
    let proj = Projection::new((min_lat + max_lat) / 2.0, (min_lon + max_lon) / 2.0)?;

    let per_user: Vec<Result<(Vec<GeoRecord>, UserTruth)>> = (0..spec.cohort_size)
        .into_par_iter()
        .map(|index| generate_user(spec, &proj, &benign, index))
        .collect();

    let mut records = Vec::new();
    let mut users = Vec::with_capacity(spec.cohort_size);
    for item in per_user {
        let (recs, truth) = item?;
        records.extend(recs);
        users.push(truth);
    }
    Ok((RecordStore::from_records(records), GroundTruth { users }))
}

fn generate_user(
    spec: &ScenarioSpec,
    proj: &Projection,
    benign: &[&str],
    index: usize,
) -> Result<(Vec<GeoRecord>, UserTruth)> {
    let mut rng = user_rng(spec.seed, index as u64);
    let user_id = format!("user{index:05}");
    let home_idx = rng.gen_range(0..spec.regions.len());
    let home = &spec.regions[home_idx];
    let anchor = uniform_point_in_region(&mut rng, home);
    let anchor_planar = proj.forward(anchor)?;

    let n_history = rng.gen_range(spec.records_min..=spec.records_max);
    let day0 = spec.event.event_day - spec.history_days as i64;
    let mut records = Vec::with_capacity(n_history as usize + 3);
    for j in 0..n_history {
        let point = if rng.gen_bool(spec.home_fidelity) {
            // Scatter around the anchor, rejected back into the home region
            // so fidelity 1.0 keeps every history point inside it.
            let mut p = anchor;
            for _ in 0..100 {
                let candidate = proj.inverse(PlanarPoint::new(
                    anchor_planar.x + gaussian(&mut rng) * spec.home_sigma_m,
                    anchor_planar.y + gaussian(&mut rng) * spec.home_sigma_m,
                ));
                if home.contains_latlon(candidate) {
                    p = candidate;
                    break;
                }
            }
            p
        } else {
            let ri = rng.gen_range(0..spec.regions.len());
            uniform_point_in_region(&mut rng, &spec.regions[ri])
        };
        let ts = day0 * 86_400
            + rng.gen_range(0..(spec.history_days.max(1) as i64) * 86_400);
        let text = benign[rng.gen_range(0..benign.len())];
        records.push(GeoRecord {
            record_id: format!("u{index:05}-h{j:04}"),
            user_id: user_id.clone(),
            timestamp_utc: ts,
            text: text.to_string(),
            georef: georef_for_point(point, spec, proj, &mut rng)?,
        });
    }

    // Destination from the travel matrix; origins without a row stay home.
    let destination = match spec.event.travel.get(&home.region_id) {
        Some(row) => {
            let x: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = row.last().map(|(d, _)| d.clone()).unwrap();
            for (dest, p) in row {
                acc += p;
                if x < acc {
                    chosen = dest.clone();
                    break;
                }
            }
            chosen
        }
        None => home.region_id.clone(),
    };
    let dest_region = spec
        .regions
        .iter()
        .find(|r| r.region_id == destination)
        .expect("validated destination");

    let n_event = rng.gen_range(spec.event.event_records_min..=spec.event.event_records_max);
    let (hour_lo, hour_hi) = spec.event.event_utc_hours;
    for j in 0..n_event {
        let point = uniform_point_in_intersection(&mut rng, dest_region, &spec.event.corridor)?;
        let hour = if hour_hi > hour_lo {
            rng.gen_range(hour_lo..hour_hi)
        } else {
            hour_lo
        };
        let ts = spec.event.event_day * 86_400
            + hour as i64 * 3600
            + rng.gen_range(0..3600);
        let keyword = &spec.event.keywords[rng.gen_range(0..spec.event.keywords.len())];
        let keyword = if rng.gen_bool(0.2) {
            keyword.to_uppercase()
        } else {
            keyword.clone()
        };
        let template = EVENT_TEMPLATES[rng.gen_range(0..EVENT_TEMPLATES.len())];
        let text = template.replacen("{}", &keyword, 1);
        records.push(GeoRecord {
            record_id: format!("u{index:05}-e{j:04}"),
            user_id: user_id.clone(),
            timestamp_utc: ts,
            text,
            georef: georef_for_point(point, spec, proj, &mut rng)?,
        });
    }

    records.sort_by(|a, b| {
        a.timestamp_utc
            .cmp(&b.timestamp_utc)
            .then_with(|| a.record_id.cmp(&b.record_id))
    });

    let traveled = destination != home.region_id;
    Ok((
        records,
        UserTruth {
            user_id,
            home_region_id: home.region_id.clone(),
            destination_region_id: Some(destination),
            traveled,
        },
    ))
}

// ---------------------------------------------------------------------------
// Region-layout helpers for scenarios and tests.
// ---------------------------------------------------------------------------

/// Axis-aligned rectangular region.
pub fn rect_region(
    id: &str,
    lat0: f64,
    lat1: f64,
    lon0: f64,
    lon1: f64,
    population: u64,
    utc_offset_hours: Option<f64>,
) -> Region {
    Region::new(
        id,
        id,
        vec![vec![
            LatLon::new(lat0, lon0),
            LatLon::new(lat0, lon1),
            LatLon::new(lat1, lon1),
            LatLon::new(lat1, lon0),
        ]],
        population,
        utc_offset_hours,
    )
    .expect("rectangular region")
}

/// Row-major grid of square regions with ids Z00, Z01, …, south-west first.
pub fn grid_regions(
    n_rows: usize,
    n_cols: usize,
    lat0: f64,
    lon0: f64,
    cell_deg: f64,
    populations: &[u64],
) -> Vec<Region> {
    let mut out = Vec::with_capacity(n_rows * n_cols);
    for row in 0..n_rows {
        for col in 0..n_cols {
            let idx = row * n_cols + col;
            let population = populations
                .get(idx)
                .copied()
                .unwrap_or_else(|| populations.last().copied().unwrap_or(1_000_000));
            out.push(rect_region(
                &format!("Z{idx:02}"),
                lat0 + row as f64 * cell_deg,
                lat0 + (row + 1) as f64 * cell_deg,
                lon0 + col as f64 * cell_deg,
                lon0 + (col + 1) as f64 * cell_deg,
                population,
                None,
            ));
        }
    }
    out
}

/// The standard benchmark scenario: a 3×3 grid of 3°-square regions, a
/// corridor band across the middle row, Table-1-like place/coordinate mix,
/// and travel that sends every user to a corridor region (65% of
/// corridor-row users stay home).
pub fn standard_scenario(seed: u64, cohort_size: usize) -> ScenarioSpec {
    let populations = [
        3_000_000, 1_000_000, 2_000_000, 1_500_000, 1_200_000, 800_000, 5_000_000, 2_500_000,
        600_000,
    ];
    let regions = grid_regions(3, 3, 36.0, -100.0, 3.0, &populations);
    // Middle row (Z03..Z05) spans lat 39..42; the corridor is a band inside
    // it crossing all columns.
    let corridor = rect_region("corridor", 39.5, 41.5, -100.0, -91.0, 0, None);
    let corridor_ids = ["Z03", "Z04", "Z05"];
    let mut travel = BTreeMap::new();
    for r in &regions {
        let id = r.region_id.as_str();
        let row: Vec<(String, f64)> = if corridor_ids.contains(&id) {
            corridor_ids
                .iter()
                .map(|d| {
                    let p = if *d == id { 0.65 } else { 0.175 };
                    (d.to_string(), p)
                })
                .collect()
        } else {
            corridor_ids
                .iter()
                .map(|d| (d.to_string(), 1.0 / 3.0))
                .collect()
        };
        travel.insert(id.to_string(), row);
    }
    // Rows must sum to exactly 1 for validation; fix the uniform rows.
    for row in travel.values_mut() {
        let total: f64 = row.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            let last = row.last_mut().unwrap();
            last.1 += 1.0 - total;
        }
    }
    ScenarioSpec {
        seed,
        regions,
        cohort_size,
        records_min: 30,
        records_max: 60,
        home_fidelity: 0.8,
        home_sigma_m: 20_000.0,
        scale_mix: ScaleMix {
            coordinate: 0.2,
            poi: 0.1,
            neighborhood: 0.2,
            city: 0.4,
            admin: 0.1,
            country: 0.0,
        },
        place_sizes: PlaceSizes::default(),
        history_days: 120,
        event: EventSpec {
            corridor,
            event_day: days_from_civil(2017, 8, 21),
            travel,
            keywords: vec!["eclipse".into(), "totality".into()],
            event_records_min: 1,
            event_records_max: 3,
            event_utc_hours: (16, 20),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario(seed: u64) -> ScenarioSpec {
        let regions = grid_regions(1, 2, 40.0, -100.0, 2.0, &[1_000_000, 1_000_000]);
        let corridor = rect_region("corr", 40.0, 42.0, -100.0, -96.0, 0, None);
        ScenarioSpec {
            seed,
            regions,
            cohort_size: 20,
            records_min: 5,
            records_max: 10,
            home_fidelity: 0.8,
            home_sigma_m: 10_000.0,
            scale_mix: ScaleMix {
                coordinate: 0.5,
                poi: 0.1,
                neighborhood: 0.1,
                city: 0.3,
                admin: 0.0,
                country: 0.0,
            },
            place_sizes: PlaceSizes::default(),
            history_days: 30,
            event: EventSpec {
                corridor,
                event_day: days_from_civil(2017, 8, 21),
                travel: BTreeMap::new(),
                keywords: vec!["eclipse".into()],
                event_records_min: 1,
                event_records_max: 2,
                event_utc_hours: (16, 20),
            },
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = tiny_scenario(42);
        let (store1, truth1) = generate(&spec).unwrap();
        let (store2, truth2) = generate(&spec).unwrap();
        assert_eq!(store1.to_ndjson_string(), store2.to_ndjson_string());
        assert_eq!(truth1, truth2);

        let different = generate(&tiny_scenario(43)).unwrap();
        assert_ne!(store1.to_ndjson_string(), different.0.to_ndjson_string());
    }

    #[test]
    fn full_fidelity_keeps_history_inside_home() {
        let mut spec = tiny_scenario(7);
        spec.home_fidelity = 1.0;
        let (store, truth) = generate(&spec).unwrap();
        let home_by_user: BTreeMap<&str, &str> = truth
            .users
            .iter()
            .map(|u| (u.user_id.as_str(), u.home_region_id.as_str()))
            .collect();
        for rec in store.stream() {
            if rec.record_id.contains("-h") {
                let home_id = home_by_user[rec.user_id.as_str()];
                let home = spec.regions.iter().find(|r| r.region_id == home_id).unwrap();
                assert!(
                    home.contains_latlon(rec.georef.representative()),
                    "record {} left its home region",
                    rec.record_id
                );
            }
        }
    }

    #[test]
    fn diagonal_travel_matrix_means_no_travel() {
        let mut spec = tiny_scenario(11);
        let mut travel = BTreeMap::new();
        for r in &spec.regions {
            travel.insert(
                r.region_id.clone(),
                vec![(r.region_id.clone(), 1.0)],
            );
        }
        // Corridor must cover both regions for in-place event records.
        spec.event.corridor = rect_region("corr", 40.0, 42.0, -100.0, -96.0, 0, None);
        spec.event.travel = travel;
        let (_, truth) = generate(&spec).unwrap();
        for u in &truth.users {
            assert_eq!(u.destination_region_id.as_deref(), Some(u.home_region_id.as_str()));
            assert!(!u.traveled);
        }
    }

    #[test]
    fn empty_region_set_is_invalid() {
        let mut spec = tiny_scenario(1);
        spec.regions.clear();
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn scale_mix_must_sum_to_one() {
        let mut spec = tiny_scenario(1);
        spec.scale_mix.city = 0.9;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn empirical_scale_mix_tracks_spec() {
        let mut spec = tiny_scenario(19);
        spec.cohort_size = 60;
        spec.records_min = 20;
        spec.records_max = 30;
        let (store, _) = generate(&spec).unwrap();
        let mut total = 0.0;
        let mut by_kind: BTreeMap<&str, f64> = BTreeMap::new();
        for rec in store.stream() {
            let key = match rec.georef.scale() {
                None => "coordinate",
                Some(s) => s.name(),
            };
            *by_kind.entry(key).or_insert(0.0) += 1.0;
            total += 1.0;
        }
        // ≥ 1,000 records: empirical shares within ±2% of the mix.
        assert!(total >= 1000.0, "total = {total}");
        for (key, expected) in [
            ("coordinate", spec.scale_mix.coordinate),
            ("poi", spec.scale_mix.poi),
            ("neighborhood", spec.scale_mix.neighborhood),
            ("city", spec.scale_mix.city),
        ] {
            let got = by_kind.get(key).copied().unwrap_or(0.0) / total;
            assert!(
                (got - expected).abs() < 0.02,
                "{key}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn emitted_records_validate_and_round_trip() {
        let spec = tiny_scenario(3);
        let (store, _) = generate(&spec).unwrap();
        for rec in store.stream() {
            let line = crate::ingest::record_to_json_line(rec);
            let parsed = crate::ingest::record_from_json_line(&line).unwrap();
            assert_eq!(&parsed, rec);
        }
    }

    #[test]
    fn disjoint_corridor_is_a_data_error() {
        let mut spec = tiny_scenario(5);
        spec.event.corridor = rect_region("far", -10.0, -8.0, 10.0, 12.0, 0, None);
        assert!(generate(&spec).is_err());
    }
}

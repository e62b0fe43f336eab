//! End-to-end pipeline: filter → select users → fetch histories → history
//! stats → per-user VB-KDE → home inference → hotspots → temporal histogram
//! → flow tables (plus an optional baseline comparison), with a
//! deterministic run manifest.
//!
//! Every stage writes its artifact under the output directory. Outputs are
//! byte-identical across reruns and thread counts; stage wall times go to
//! stderr only.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::{build_flow_table, compare_flows, write_comparison_csv, write_flow_csv, FlowTable};
use crate::geo::{load_regions, GeoRecord, PlaceScale, Projection, Region};
use crate::inference::{
    infer_home, write_home_estimates_csv, HomeEstimate, RegionMask, DEFAULT_MIN_EVIDENCE,
};
use crate::ingest::{
    fetch_history, filter_event_records, history_stats, record_to_json_line, select_event_users,
    write_history_stats_csv, FilterSpec, RecordStore, DEFAULT_HISTORY_CAP,
};
use crate::stats::{
    count_by_zone, format_date, gi_star, parse_date, temporal_histogram, write_hotspots_csv,
    write_temporal_csv, Adjacency,
};
use crate::vbkde::{build_surface, GridSpec, KdeOptions, DEFAULT_ALPHA_M2};

/// Snap tolerance, in degrees, for deriving zone contiguity from shared
/// ring vertices.
pub const CONTIGUITY_SNAP_DEG: f64 = 1e-6;

/// Parsed pipeline configuration (flat key=value file; CLI flags override).
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub store: PathBuf,
    pub regions: PathBuf,
    pub corridor: PathBuf,
    pub gazetteer: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub baseline_store: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub keywords: Vec<String>,
    pub window_start_utc: i64,
    pub window_end_utc: i64,
    pub baseline_window: Option<(i64, i64)>,
    pub alpha: f64,
    pub min_evidence: usize,
    pub history_cap: usize,
    pub grid_max_dim: usize,
    pub hotspot_max_scale: PlaceScale,
    /// Inclusive local-day range for the temporal histogram; derived from
    /// the window when absent.
    pub temporal_days: Option<(i64, i64)>,
    pub destinations: Vec<String>,
    pub top_k: usize,
    pub threads: usize,
    pub seed: u64,
}

fn parse_time(value: &str, key: &str) -> Result<i64> {
    if value.contains('-') && value.len() >= 8 {
        return Ok(parse_date(value)? * 86_400);
    }
    value
        .parse::<i64>()
        .map_err(|_| Error::Config(format!("{key} must be epoch seconds or YYYY-MM-DD")))
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_str_with_base(&text, dir)
    }

    /// Parses key=value lines; `base` anchors relative paths.
    pub fn from_str_with_base(text: &str, base: &Path) -> Result<PipelineConfig> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    lineno + 1
                )));
            };
            if kv.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {:?}", key.trim())));
            }
        }
        let mut take = |key: &str| kv.remove(key);
        let req_path = |v: Option<String>, key: &str| -> Result<PathBuf> {
            v.map(|s| base.join(s))
                .ok_or_else(|| Error::Config(format!("missing required key {key}")))
        };

        let store = req_path(take("store"), "store")?;
        let regions = req_path(take("regions"), "regions")?;
        let corridor = req_path(take("corridor"), "corridor")?;
        let gazetteer = take("gazetteer").map(|s| base.join(s));
        let profiles = take("profiles").map(|s| base.join(s));
        let baseline_store = take("baseline_store").map(|s| base.join(s));
        let out_dir = take("out_dir").map(|s| base.join(s)).unwrap_or_else(|| base.join("out"));

        let keywords: Vec<String> = take("keywords")
            .unwrap_or_else(|| "eclipse,totality".into())
            .split(',')
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        let window_start_utc = parse_time(
            &take("window_start").ok_or_else(|| Error::Config("missing required key window_start".into()))?,
            "window_start",
        )?;
        let window_end_utc = parse_time(
            &take("window_end").ok_or_else(|| Error::Config("missing required key window_end".into()))?,
            "window_end",
        )?;
        let baseline_window = match (take("baseline_window_start"), take("baseline_window_end")) {
            (Some(s), Some(e)) => Some((
                parse_time(&s, "baseline_window_start")?,
                parse_time(&e, "baseline_window_end")?,
            )),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "baseline_window_start and baseline_window_end must be set together".into(),
                ))
            }
        };
        let parse_f64 = |v: Option<String>, key: &str, default: f64| -> Result<f64> {
            match v {
                None => Ok(default),
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Config(format!("{key} is not a number"))),
            }
        };
        let parse_usize = |v: Option<String>, key: &str, default: usize| -> Result<usize> {
            match v {
                None => Ok(default),
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Config(format!("{key} is not an integer"))),
            }
        };
        let alpha = parse_f64(take("alpha"), "alpha", DEFAULT_ALPHA_M2)?;
        let min_evidence = parse_usize(take("min_evidence"), "min_evidence", DEFAULT_MIN_EVIDENCE)?;
        let history_cap = parse_usize(take("history_cap"), "history_cap", DEFAULT_HISTORY_CAP)?;
        let grid_max_dim = parse_usize(take("grid_max_dim"), "grid_max_dim", 512)?;
        let hotspot_max_scale = take("hotspot_max_scale")
            .map(|s| s.parse::<PlaceScale>())
            .transpose()
            .map_err(|e| Error::Config(format!("hotspot_max_scale: {e}")))?
            .unwrap_or(PlaceScale::City);
        let temporal_days = match (take("temporal_day_start"), take("temporal_day_end")) {
            (Some(s), Some(e)) => Some((parse_date(&s)?, parse_date(&e)?)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "temporal_day_start and temporal_day_end must be set together".into(),
                ))
            }
        };
        let destinations: Vec<String> = take("destinations")
            .map(|s| {
                s.split(',')
                    .map(|d| d.trim().to_string())
                    .filter(|d| !d.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        let top_k = parse_usize(take("top_k"), "top_k", 10)?;
        let threads = parse_usize(take("threads"), "threads", 1)?;
        let seed = parse_usize(take("seed"), "seed", 42)? as u64;

        if let Some(unknown) = kv.keys().next() {
            return Err(Error::Config(format!("unknown config key {unknown:?}")));
        }

        let config = PipelineConfig {
            store,
            regions,
            corridor,
            gazetteer,
            profiles,
            baseline_store,
            out_dir,
            keywords,
            window_start_utc,
            window_end_utc,
            baseline_window,
            alpha,
            min_evidence,
            history_cap,
            grid_max_dim,
            hotspot_max_scale,
            temporal_days,
            destinations,
            top_k,
            threads,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (path, label) in [
            (Some(&self.store), "store"),
            (Some(&self.regions), "regions"),
            (Some(&self.corridor), "corridor"),
            (self.gazetteer.as_ref(), "gazetteer"),
            (self.profiles.as_ref(), "profiles"),
            (self.baseline_store.as_ref(), "baseline_store"),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{label} file does not exist: {}",
                        path.display()
                    )));
                }
            }
        }
        if self.keywords.is_empty() {
            return Err(Error::Config("keywords must not be empty".into()));
        }
        if self.window_start_utc > self.window_end_utc {
            return Err(Error::Config("window_start is after window_end".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.history_cap == 0 {
            return Err(Error::Config("history_cap must be at least 1".into()));
        }
        if self.grid_max_dim < 8 {
            return Err(Error::Config("grid_max_dim must be at least 8".into()));
        }
        Ok(())
    }

    /// Local-day range for the temporal histogram; one day of slack on
    /// each side of the window absorbs offset spill.
    pub fn temporal_day_range(&self) -> (i64, i64) {
        self.temporal_days.unwrap_or_else(|| {
            (
                self.window_start_utc.div_euclid(86_400) - 1,
                (self.window_end_utc - 1).div_euclid(86_400) + 1,
            )
        })
    }
}

/// Loaded inputs shared by most subcommands.
pub struct Inputs {
    pub store: RecordStore,
    pub regions: Vec<Region>,
    pub corridor: Region,
}

pub fn load_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let store = RecordStore::open(&config.store)?;
    let regions = load_regions(&config.regions)?;
    let corridor = load_regions(&config.corridor)?
        .into_iter()
        .next()
        .ok_or_else(|| {
            Error::Config(format!(
                "corridor file has no features: {}",
                config.corridor.display()
            ))
        })?;
    Ok(Inputs {
        store,
        regions,
        corridor,
    })
}

pub fn event_filter_spec(config: &PipelineConfig) -> Result<FilterSpec> {
    FilterSpec::new(
        config.keywords.clone(),
        config.window_start_utc,
        config.window_end_utc,
        None,
    )
}

/// Per-destination flow summary for the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStageSummary {
    pub users_observed: usize,
    pub rows: usize,
    pub undetermined: u64,
}

/// Deterministic per-stage counts, echoed into the manifest.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub records_total: usize,
    pub malformed_lines: usize,
    pub filtered_records: usize,
    pub event_users: usize,
    pub users_with_history: usize,
    pub users_empty_history: usize,
    pub surfaces_built: usize,
    pub surfaces_zero_mass: usize,
    pub homes_determined: usize,
    pub homes_undetermined: usize,
    pub hotspot_zones: usize,
    pub hotspot_residual: u64,
    pub hotspot_excluded_coarse: u64,
    pub temporal_binned: u64,
    pub temporal_offset_fallbacks: u64,
    pub flows: BTreeMap<String, FlowStageSummary>,
    pub baseline_users: BTreeMap<String, usize>,
    pub projection_origin: (f64, f64),
    pub grid: Option<GridSpec>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stage_timer(name: &str, start: Instant, detail: &str) {
    eprintln!(
        "[stage] {name}: {detail} ({:.3}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Fetches capped histories for every user, in user-id order.
pub fn fetch_all_histories(
    store: &RecordStore,
    users: &BTreeSet<String>,
    cap: usize,
) -> Result<BTreeMap<String, Vec<GeoRecord>>> {
    let mut histories = BTreeMap::new();
    for user in users {
        histories.insert(user.clone(), fetch_history(store, user, cap)?);
    }
    Ok(histories)
}

/// The shared analysis grid: the projected region extent with a 2% margin.
pub fn analysis_grid(
    regions: &[Region],
    proj: &Projection,
    grid_max_dim: usize,
) -> Result<(GridSpec, RegionMask)> {
    let projected = regions
        .iter()
        .map(|r| r.project(proj))
        .collect::<Result<Vec<_>>>()?;
    let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for r in &projected {
        bbox.0 = bbox.0.min(r.bbox.0);
        bbox.1 = bbox.1.min(r.bbox.1);
        bbox.2 = bbox.2.max(r.bbox.2);
        bbox.3 = bbox.3.max(r.bbox.3);
    }
    let grid = GridSpec::covering(bbox, grid_max_dim, 0.02)?;
    let mask = RegionMask::build(grid, &projected);
    Ok((grid, mask))
}

/// Builds each user's variable-bandwidth surface on the shared grid and
/// infers homes. Users with empty histories, or whose kernels all miss the
/// grid, come back undetermined. Returns (estimates, zero_mass_count).
pub fn compute_estimates(
    histories: &BTreeMap<String, Vec<GeoRecord>>,
    proj: &Projection,
    grid: GridSpec,
    mask: &RegionMask,
    alpha: f64,
    min_evidence: usize,
) -> Result<(Vec<HomeEstimate>, usize)> {
    let opts = KdeOptions {
        alpha,
        max_cells: grid.cells(),
        ..KdeOptions::default()
    };
    let results: Vec<Result<(HomeEstimate, bool)>> = histories
        .par_iter()
        .map(|(user, records)| {
            if records.is_empty() {
                return Ok((HomeEstimate::undetermined(user.clone(), 0), false));
            }
            match build_surface(records, proj, Some(grid), &opts) {
                Ok(surface) => {
                    let est = infer_home(user, &surface, mask, min_evidence)?;
                    Ok((est, false))
                }
                // All kernels outside the analysis extent: no zonal
                // evidence, not a fatal error for the cohort.
                Err(Error::Data(_)) => {
                    Ok((HomeEstimate::undetermined(user.clone(), records.len()), true))
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut estimates = Vec::with_capacity(results.len());
    let mut zero_mass = 0usize;
    for r in results {
        let (est, zm) = r?;
        if zm {
            zero_mass += 1;
        }
        estimates.push(est);
    }
    Ok((estimates, zero_mass))
}

/// Users (already restricted to `users`, when given) with at least one of
/// `records` inside the destination region.
fn users_observed_at(
    records: &[&GeoRecord],
    destination: &Region,
    users: Option<&BTreeSet<String>>,
) -> BTreeSet<String> {
    records
        .iter()
        .filter(|r| {
            users.is_none_or(|u| u.contains(&r.user_id))
                && destination.contains_latlon(r.georef.representative())
        })
        .map(|r| r.user_id.clone())
        .collect()
}

/// Runs the full pipeline, writing every stage artifact under
/// `config.out_dir`. Any stage error aborts with the stage name attached;
/// artifacts written so far are retained.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_pipeline_inner(config))
}

fn run_pipeline_inner(config: &PipelineConfig) -> Result<RunSummary> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let mut summary = RunSummary::default();

    // Stage: load.
    let t = Instant::now();
    let inputs = load_inputs(config).map_err(|e| e.with_stage("load"))?;
    summary.records_total = inputs.store.len();
    summary.malformed_lines = inputs.store.malformed_lines();
    stage_timer(
        "load",
        t,
        &format!(
            "{} records, {} malformed lines skipped",
            inputs.store.len(),
            inputs.store.malformed_lines()
        ),
    );

    // Stage: filter.
    let t = Instant::now();
    let spec = event_filter_spec(config).map_err(|e| e.with_stage("filter"))?;
    let filtered: Vec<&GeoRecord> = filter_event_records(&inputs.store, &spec).collect();
    summary.filtered_records = filtered.len();
    let mut ndjson = String::new();
    for rec in &filtered {
        ndjson.push_str(&record_to_json_line(rec));
        ndjson.push('\n');
    }
    write_text(&config.out_dir.join("filtered.ndjson"), &ndjson)
        .map_err(|e| e.with_stage("filter"))?;
    stage_timer("filter", t, &format!("{} event records", filtered.len()));

    // Stage: select-users.
    let t = Instant::now();
    let users = select_event_users(filtered.iter().copied(), &inputs.corridor);
    if users.is_empty() {
        return Err(Error::Data("no event users inside the corridor".into())
            .with_stage("select-users"));
    }
    summary.event_users = users.len();
    let mut users_csv = String::from("user_id\n");
    for u in &users {
        users_csv.push_str(u);
        users_csv.push('\n');
    }
    write_text(&config.out_dir.join("users.csv"), &users_csv)
        .map_err(|e| e.with_stage("select-users"))?;
    stage_timer("select-users", t, &format!("{} users", users.len()));

    // Stage: histories.
    let t = Instant::now();
    let histories = fetch_all_histories(&inputs.store, &users, config.history_cap)
        .map_err(|e| e.with_stage("histories"))?;
    summary.users_with_history = histories.values().filter(|h| !h.is_empty()).count();
    summary.users_empty_history = histories.values().filter(|h| h.is_empty()).count();
    let mut hist_ndjson = String::new();
    for records in histories.values() {
        for rec in records {
            hist_ndjson.push_str(&record_to_json_line(rec));
            hist_ndjson.push('\n');
        }
    }
    write_text(&config.out_dir.join("histories.ndjson"), &hist_ndjson)
        .map_err(|e| e.with_stage("histories"))?;
    stage_timer(
        "histories",
        t,
        &format!(
            "{} users with history, {} empty",
            summary.users_with_history, summary.users_empty_history
        ),
    );

    // Stage: history-stats.
    let t = Instant::now();
    let (per_user, aggregate) = history_stats(&histories);
    let mut buf = Vec::new();
    write_history_stats_csv(&per_user, aggregate.as_ref(), &mut buf)
        .map_err(|e| e.with_stage("history-stats"))?;
    std::fs::write(config.out_dir.join("history_stats.csv"), &buf)
        .map_err(|e| Error::io(config.out_dir.join("history_stats.csv"), e))?;
    stage_timer("history-stats", t, &format!("{} rows", per_user.len()));

    // Stage: surfaces + homes.
    let t = Instant::now();
    let proj = Projection::centered_on_records(filtered.iter().copied())
        .map_err(|e| e.with_stage("surfaces"))?;
    summary.projection_origin = (proj.origin_lat, proj.origin_lon);
    let (grid, mask) = analysis_grid(&inputs.regions, &proj, config.grid_max_dim)
        .map_err(|e| e.with_stage("surfaces"))?;
    summary.grid = Some(grid);
    let (estimates, zero_mass) = compute_estimates(
        &histories,
        &proj,
        grid,
        &mask,
        config.alpha,
        config.min_evidence,
    )
    .map_err(|e| e.with_stage("surfaces"))?;
    summary.surfaces_built = estimates.len() - summary.users_empty_history;
    summary.surfaces_zero_mass = zero_mass;
    summary.homes_determined = estimates.iter().filter(|e| e.region_id.is_some()).count();
    summary.homes_undetermined = estimates.len() - summary.homes_determined;
    let mut buf = Vec::new();
    write_home_estimates_csv(&estimates, &mut buf).map_err(|e| e.with_stage("infer-home"))?;
    std::fs::write(config.out_dir.join("homes.csv"), &buf)
        .map_err(|e| Error::io(config.out_dir.join("homes.csv"), e))?;
    stage_timer(
        "surfaces+homes",
        t,
        &format!(
            "{} surfaces, {} homes determined",
            summary.surfaces_built, summary.homes_determined
        ),
    );

    // Stage: hotspots (raw and population-normalized).
    let t = Instant::now();
    let counts = count_by_zone(
        filtered.iter().copied(),
        &inputs.regions,
        config.hotspot_max_scale,
    );
    summary.hotspot_zones = counts.zones.len();
    summary.hotspot_residual = counts.residual;
    summary.hotspot_excluded_coarse = counts.excluded_coarse;
    let adjacency = Adjacency::from_regions(&inputs.regions, CONTIGUITY_SNAP_DEG);
    for (use_rate, file) in [(false, "hotspots_raw.csv"), (true, "hotspots_rate.csv")] {
        let result = gi_star(&counts, &adjacency, use_rate).map_err(|e| e.with_stage("hotspot"))?;
        let mut buf = Vec::new();
        write_hotspots_csv(&result, &mut buf).map_err(|e| e.with_stage("hotspot"))?;
        std::fs::write(config.out_dir.join(file), &buf)
            .map_err(|e| Error::io(config.out_dir.join(file), e))?;
    }
    stage_timer("hotspot", t, &format!("{} zones", counts.zones.len()));

    // Stage: temporal.
    let t = Instant::now();
    let day_range = config.temporal_day_range();
    let hist = temporal_histogram(
        filtered.iter().copied(),
        &inputs.corridor,
        &inputs.regions,
        day_range,
    );
    summary.temporal_binned = hist.total_binned;
    summary.temporal_offset_fallbacks = hist.offset_fallbacks;
    let mut buf = Vec::new();
    write_temporal_csv(&hist, &mut buf).map_err(|e| e.with_stage("temporal"))?;
    std::fs::write(config.out_dir.join("temporal.csv"), &buf)
        .map_err(|e| Error::io(config.out_dir.join("temporal.csv"), e))?;
    stage_timer("temporal", t, &format!("{} records binned", hist.total_binned));

    // Stage: flows per destination.
    let estimates_by_user: BTreeMap<&str, &HomeEstimate> = estimates
        .iter()
        .map(|e| (e.user_id.as_str(), e))
        .collect();
    let mut event_tables: BTreeMap<String, FlowTable> = BTreeMap::new();
    for dest_id in &config.destinations {
        let t = Instant::now();
        let dest = crate::geo::region_by_id(&inputs.regions, dest_id).ok_or_else(|| {
            Error::Config(format!("unknown destination region {dest_id:?}")).with_stage("flows")
        })?;
        let observed = users_observed_at(&filtered, dest, Some(&users));
        let dest_estimates: Vec<HomeEstimate> = observed
            .iter()
            .filter_map(|u| estimates_by_user.get(u.as_str()).copied().cloned())
            .collect();
        let table = build_flow_table(&dest_estimates, dest_id, &inputs.regions)
            .map_err(|e| e.with_stage("flows"))?;
        let mut buf = Vec::new();
        write_flow_csv(&table, &mut buf).map_err(|e| e.with_stage("flows"))?;
        let file = config.out_dir.join(format!("flows_{dest_id}.csv"));
        std::fs::write(&file, &buf).map_err(|e| Error::io(&file, e))?;
        summary.flows.insert(
            dest_id.clone(),
            FlowStageSummary {
                users_observed: observed.len(),
                rows: table.rows.len(),
                undetermined: table.undetermined,
            },
        );
        stage_timer(
            "flows",
            t,
            &format!("{dest_id}: {} users observed", observed.len()),
        );
        event_tables.insert(dest_id.clone(), table);
    }

    // Stage: baseline comparison (optional).
    if let (Some(baseline_store), Some((b_start, b_end))) =
        (&config.baseline_store, config.baseline_window)
    {
        let t = Instant::now();
        let baseline = RecordStore::open(baseline_store).map_err(|e| e.with_stage("baseline"))?;
        // Regular-period visitors: windowed records in the destination, no
        // keyword filter.
        let windowed: Vec<&GeoRecord> = baseline
            .stream()
            .filter(|r| r.timestamp_utc >= b_start && r.timestamp_utc < b_end)
            .collect();
        let mut baseline_users_all: BTreeSet<String> = BTreeSet::new();
        let mut per_dest_users: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for dest_id in &config.destinations {
            let dest = crate::geo::region_by_id(&inputs.regions, dest_id).ok_or_else(|| {
                Error::Config(format!("unknown destination region {dest_id:?}"))
                    .with_stage("baseline")
            })?;
            let observed = users_observed_at(&windowed, dest, None);
            baseline_users_all.extend(observed.iter().cloned());
            per_dest_users.insert(dest_id.clone(), observed);
        }
        let histories = fetch_all_histories(&baseline, &baseline_users_all, config.history_cap)
            .map_err(|e| e.with_stage("baseline"))?;
        let (grid, mask) = analysis_grid(&inputs.regions, &proj, config.grid_max_dim)
            .map_err(|e| e.with_stage("baseline"))?;
        let (baseline_estimates, _) = compute_estimates(
            &histories,
            &proj,
            grid,
            &mask,
            config.alpha,
            config.min_evidence,
        )
        .map_err(|e| e.with_stage("baseline"))?;
        let baseline_by_user: BTreeMap<&str, &HomeEstimate> = baseline_estimates
            .iter()
            .map(|e| (e.user_id.as_str(), e))
            .collect();
        for dest_id in &config.destinations {
            let observed = &per_dest_users[dest_id];
            summary.baseline_users.insert(dest_id.clone(), observed.len());
            let dest_estimates: Vec<HomeEstimate> = observed
                .iter()
                .filter_map(|u| baseline_by_user.get(u.as_str()).copied().cloned())
                .collect();
            let baseline_table = build_flow_table(&dest_estimates, dest_id, &inputs.regions)
                .map_err(|e| e.with_stage("baseline"))?;
            let event_table = &event_tables[dest_id];
            let cmp = compare_flows(&baseline_table, event_table, config.top_k)
                .map_err(|e| e.with_stage("compare-flows"))?;
            let mut buf = Vec::new();
            write_comparison_csv(&cmp, &mut buf).map_err(|e| e.with_stage("compare-flows"))?;
            let file = config.out_dir.join(format!("comparison_{dest_id}.csv"));
            std::fs::write(&file, &buf).map_err(|e| Error::io(&file, e))?;
        }
        stage_timer("baseline", t, &format!("{} baseline users", baseline_users_all.len()));
    }

    // Manifest: deterministic content only (no wall times, no out_dir, no
    // thread count).
    let manifest = render_manifest(config, &summary);
    write_text(&config.out_dir.join("manifest.txt"), &manifest)
        .map_err(|e| e.with_stage("manifest"))?;

    Ok(summary)
}

fn render_manifest(config: &PipelineConfig, summary: &RunSummary) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    line("format", "eventflow-run-manifest-v1".into());
    line("seed", config.seed.to_string());
    line("store", config.store.display().to_string());
    line("regions", config.regions.display().to_string());
    line("corridor", config.corridor.display().to_string());
    line("keywords", config.keywords.join(","));
    line("window_start_utc", config.window_start_utc.to_string());
    line("window_end_utc", config.window_end_utc.to_string());
    if let Some((s, e)) = config.baseline_window {
        line("baseline_window_start_utc", s.to_string());
        line("baseline_window_end_utc", e.to_string());
    }
    line("alpha", config.alpha.to_string());
    line("min_evidence", config.min_evidence.to_string());
    line("history_cap", config.history_cap.to_string());
    line("grid_max_dim", config.grid_max_dim.to_string());
    line("hotspot_max_scale", config.hotspot_max_scale.to_string());
    let (d0, d1) = config.temporal_day_range();
    line("temporal_day_start", format_date(d0));
    line("temporal_day_end", format_date(d1));
    line("destinations", config.destinations.join(","));
    line("top_k", config.top_k.to_string());
    line(
        "projection_origin",
        format!("{},{}", summary.projection_origin.0, summary.projection_origin.1),
    );
    if let Some(grid) = &summary.grid {
        line("grid_cell_size_m", grid.cell_size.to_string());
        line("grid_rows", grid.n_rows.to_string());
        line("grid_cols", grid.n_cols.to_string());
    }
    line("records_total", summary.records_total.to_string());
    line("malformed_lines", summary.malformed_lines.to_string());
    line("filtered_records", summary.filtered_records.to_string());
    line("event_users", summary.event_users.to_string());
    line("users_with_history", summary.users_with_history.to_string());
    line("users_empty_history", summary.users_empty_history.to_string());
    line("surfaces_built", summary.surfaces_built.to_string());
    line("surfaces_zero_mass", summary.surfaces_zero_mass.to_string());
    line("homes_determined", summary.homes_determined.to_string());
    line("homes_undetermined", summary.homes_undetermined.to_string());
    line("hotspot_zones", summary.hotspot_zones.to_string());
    line("hotspot_residual", summary.hotspot_residual.to_string());
    line(
        "hotspot_excluded_coarse",
        summary.hotspot_excluded_coarse.to_string(),
    );
    line("temporal_binned", summary.temporal_binned.to_string());
    line(
        "temporal_offset_fallbacks",
        summary.temporal_offset_fallbacks.to_string(),
    );
    for (dest, flow) in &summary.flows {
        line(
            &format!("flow_users_observed.{dest}"),
            flow.users_observed.to_string(),
        );
        line(&format!("flow_rows.{dest}"), flow.rows.to_string());
        line(
            &format!("flow_undetermined.{dest}"),
            flow.undetermined.to_string(),
        );
    }
    for (dest, n) in &summary.baseline_users {
        line(&format!("baseline_users.{dest}"), n.to_string());
    }
    out
}

/// Writes the fixed- and variable-bandwidth surfaces of one user to
/// `<user>_fixed.asc` and `<user>_vb.asc` for side-by-side inspection.
pub fn write_user_surfaces(
    config: &PipelineConfig,
    inputs: &Inputs,
    user_id: &str,
) -> Result<(PathBuf, PathBuf)> {
    let history = fetch_history(&inputs.store, user_id, config.history_cap)?;
    if history.is_empty() {
        return Err(Error::Data(format!("unknown user {user_id:?} (no records in store)")));
    }
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let proj = Projection::centered_on_records(history.iter())?;
    let mut paths = Vec::with_capacity(2);
    for (variable, suffix) in [(false, "fixed"), (true, "vb")] {
        let opts = KdeOptions {
            alpha: config.alpha,
            variable,
            ..KdeOptions::default()
        };
        let surface = build_surface(&history, &proj, None, &opts)?;
        let path = config.out_dir.join(format!("{user_id}_{suffix}.asc"));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        surface.write_esri_ascii(&mut w).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok((paths.remove(0), paths.remove(0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture_files(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let regions = crate::synth::grid_regions(1, 3, 40.0, -100.0, 2.0, &[1000, 1000, 1000]);
        let regions_path = dir.join("regions.geojson");
        crate::geo::write_regions_geojson(&regions, &regions_path).unwrap();
        let corridor = crate::synth::rect_region("corr", 40.0, 42.0, -100.0, -94.0, 0, None);
        let corridor_path = dir.join("corridor.geojson");
        crate::geo::write_regions_geojson(&[corridor], &corridor_path).unwrap();
        let store_path = dir.join("store.ndjson");
        let mut f = std::fs::File::create(&store_path).unwrap();
        writeln!(
            f,
            "{}",
            crate::ingest::record_to_json_line(&GeoRecord {
                record_id: "r1".into(),
                user_id: "u1".into(),
                timestamp_utc: 100,
                text: "eclipse".into(),
                georef: crate::geo::Georeference::coordinate(41.0, -99.0).unwrap(),
            })
        )
        .unwrap();
        (store_path, regions_path, corridor_path)
    }

    #[test]
    fn config_parses_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let (store, regions, corridor) = write_fixture_files(dir.path());
        let text = format!(
            "store = {}\nregions = {}\ncorridor = {}\nwindow_start = 0\nwindow_end = 1000\n",
            store.display(),
            regions.display(),
            corridor.display()
        );
        let config = PipelineConfig::from_str_with_base(&text, dir.path()).unwrap();
        assert_eq!(config.alpha, DEFAULT_ALPHA_M2);
        assert_eq!(config.history_cap, DEFAULT_HISTORY_CAP);
        assert_eq!(config.min_evidence, DEFAULT_MIN_EVIDENCE);
        assert_eq!(config.keywords, vec!["eclipse".to_string(), "totality".to_string()]);

        let bad = format!("{text}nonsense_key = 1\n");
        assert!(PipelineConfig::from_str_with_base(&bad, dir.path()).is_err());

        let dup = format!("{text}alpha = 1\nalpha = 2\n");
        assert!(PipelineConfig::from_str_with_base(&dup, dir.path()).is_err());
    }

    #[test]
    fn config_accepts_dates_and_validates_paths() {
        let dir = tempfile::tempdir().unwrap();
        let (store, regions, corridor) = write_fixture_files(dir.path());
        let text = format!(
            "store = {}\nregions = {}\ncorridor = {}\nwindow_start = 2017-08-18\nwindow_end = 2017-08-26\n",
            store.display(),
            regions.display(),
            corridor.display()
        );
        let config = PipelineConfig::from_str_with_base(&text, dir.path()).unwrap();
        assert_eq!(config.window_start_utc, 1_503_014_400);
        assert_eq!(config.window_end_utc, 1_503_705_600);

        let missing = format!(
            "store = {}\nregions = {}\ncorridor = missing.geojson\nwindow_start = 0\nwindow_end = 1\n",
            store.display(),
            regions.display()
        );
        assert!(PipelineConfig::from_str_with_base(&missing, dir.path()).is_err());
    }

    #[test]
    fn temporal_day_range_derived_from_window() {
        let dir = tempfile::tempdir().unwrap();
        let (store, regions, corridor) = write_fixture_files(dir.path());
        let text = format!(
            "store = {}\nregions = {}\ncorridor = {}\nwindow_start = 2017-08-18\nwindow_end = 2017-08-26\n",
            store.display(),
            regions.display(),
            corridor.display()
        );
        let config = PipelineConfig::from_str_with_base(&text, dir.path()).unwrap();
        let (d0, d1) = config.temporal_day_range();
        assert_eq!(format_date(d0), "2017-08-17");
        assert_eq!(format_date(d1), "2017-08-26");
    }
}

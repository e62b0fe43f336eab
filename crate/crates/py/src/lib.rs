//! Python bindings for the main eventflow types and operations: the
//! projection, bandwidth formulas, surface construction, Gi* hotspots,
//! flow shares, scenario generation, and the full pipeline run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use eventflow::error::Error;
use eventflow::geo::{LatLon, PlanarPoint};
use eventflow::inference::HomeEstimate;
use eventflow::stats::{Adjacency, ZoneCount, ZoneCounts};
use eventflow::vbkde::KdeOptions;

fn to_py_err(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Equirectangular projection about a fixed origin.
#[pyclass(name = "Projection")]
struct PyProjection {
    inner: eventflow::geo::Projection,
}

#[pymethods]
impl PyProjection {
    #[new]
    fn new(origin_lat: f64, origin_lon: f64) -> PyResult<Self> {
        Ok(PyProjection {
            inner: eventflow::geo::Projection::new(origin_lat, origin_lon).map_err(to_py_err)?,
        })
    }

    /// (lat, lon) degrees → (x, y) meters.
    fn forward(&self, lat: f64, lon: f64) -> PyResult<(f64, f64)> {
        let p = self
            .inner
            .forward(LatLon::new(lat, lon))
            .map_err(to_py_err)?;
        Ok((p.x, p.y))
    }

    /// (x, y) meters → (lat, lon) degrees.
    fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.inner.inverse(PlanarPoint::new(x, y));
        (p.lat, p.lon)
    }
}

/// Base bandwidth from planar points: 0.9 · min(SD, sqrt(1/ln 2) · Dm) ·
/// n^(-0.2), floored at 100 m.
#[pyfunction]
fn base_bandwidth(points: Vec<(f64, f64)>) -> PyResult<f64> {
    let pts: Vec<PlanarPoint> = points.iter().map(|&(x, y)| PlanarPoint::new(x, y)).collect();
    eventflow::vbkde::base_bandwidth(&pts).map_err(to_py_err)
}

/// Per-record bandwidth sqrt((area_m2 + alpha) / alpha) * bw_s.
#[pyfunction]
#[pyo3(signature = (area_m2, bw_s, alpha = 80.0))]
fn record_bandwidth(area_m2: f64, bw_s: f64, alpha: f64) -> PyResult<f64> {
    if !(bw_s.is_finite() && bw_s > 0.0) {
        return Err(PyValueError::new_err("bw_s must be positive"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(PyValueError::new_err("alpha must be positive"));
    }
    if !(area_m2.is_finite() && area_m2 >= 0.0) {
        return Err(PyValueError::new_err("area_m2 must be non-negative"));
    }
    Ok(((area_m2 + alpha) / alpha).sqrt() * bw_s)
}

/// Absolute shoelace area of a planar ring [(x, y), ...] in m².
#[pyfunction]
fn polygon_area(ring: Vec<(f64, f64)>) -> PyResult<f64> {
    let pts: Vec<PlanarPoint> = ring.iter().map(|&(x, y)| PlanarPoint::new(x, y)).collect();
    eventflow::geo::polygon_area(&pts).map_err(to_py_err)
}

/// Normalized activity surface for one user's records in an NDJSON store.
///
/// Returns (values row-major south-to-north, n_rows, n_cols, cell_size,
/// origin_x, origin_y). `variable=False` gives the fixed-bandwidth surface.
#[pyfunction]
#[pyo3(signature = (store_path, user_id, variable = true, alpha = 80.0, cap = 3200))]
fn user_surface(
    store_path: PathBuf,
    user_id: String,
    variable: bool,
    alpha: f64,
    cap: usize,
) -> PyResult<(Vec<f64>, usize, usize, f64, f64, f64)> {
    let store = eventflow::ingest::RecordStore::open(&store_path).map_err(to_py_err)?;
    let history = eventflow::ingest::fetch_history(&store, &user_id, cap).map_err(to_py_err)?;
    if history.is_empty() {
        return Err(PyValueError::new_err(format!(
            "unknown user {user_id:?} (no records in store)"
        )));
    }
    let proj = eventflow::geo::Projection::centered_on_records(history.iter()).map_err(to_py_err)?;
    let opts = KdeOptions {
        alpha,
        variable,
        ..KdeOptions::default()
    };
    let surface =
        eventflow::vbkde::build_surface(&history, &proj, None, &opts).map_err(to_py_err)?;
    Ok((
        surface.values.clone(),
        surface.grid.n_rows,
        surface.grid.n_cols,
        surface.grid.cell_size,
        surface.grid.origin.x,
        surface.grid.origin.y,
    ))
}

/// Getis-Ord Gi* over explicit zone values and neighbor lists.
///
/// `values` maps zone id → value; `neighbors` maps zone id → list of
/// neighbor ids. Returns {zone: (z, classification)}.
#[pyfunction]
fn gi_star(
    values: BTreeMap<String, f64>,
    neighbors: BTreeMap<String, Vec<String>>,
) -> PyResult<BTreeMap<String, (f64, String)>> {
    let zones: Vec<ZoneCount> = values
        .iter()
        .map(|(id, &v)| ZoneCount {
            region_id: id.clone(),
            raw_count: 0,
            population: 1,
            rate: Some(v),
        })
        .collect();
    let counts = ZoneCounts {
        zones,
        residual: 0,
        excluded_coarse: 0,
    };
    let mut adjacency = Adjacency::new();
    for (a, nbs) in &neighbors {
        for b in nbs {
            adjacency.add_edge(a.clone(), b.clone());
        }
    }
    let result = eventflow::stats::gi_star(&counts, &adjacency, true).map_err(to_py_err)?;
    Ok(result
        .rows
        .into_iter()
        .map(|r| (r.region_id, (r.gi_star_z, r.classification.name().to_string())))
        .collect())
}

/// Population-calibrated flow shares: origin → (raw_count, weight, share,
/// rank).
#[pyfunction]
fn flow_shares(
    counts: BTreeMap<String, u64>,
    populations: BTreeMap<String, u64>,
) -> PyResult<BTreeMap<String, (u64, f64, f64, u32)>> {
    let estimates: Vec<HomeEstimate> = counts
        .iter()
        .flat_map(|(origin, &n)| {
            (0..n).map(move |i| HomeEstimate {
                user_id: format!("{origin}-{i}"),
                region_id: Some(origin.clone()),
                zonal_mass: BTreeMap::new(),
                evidence_count: 1,
            })
        })
        .collect();
    let regions: Vec<eventflow::geo::Region> = populations
        .iter()
        .map(|(id, &pop)| {
            eventflow::synth::rect_region(id, 0.0, 1.0, 0.0, 1.0, pop, None)
        })
        .collect();
    let table =
        eventflow::flows::build_flow_table(&estimates, "destination", &regions).map_err(to_py_err)?;
    Ok(table
        .rows
        .into_iter()
        .map(|r| (r.origin_region_id, (r.raw_count, r.weight, r.share, r.rank)))
        .collect())
}

/// Generates a synthetic scenario (spec file) into out_dir, writing
/// store.ndjson and ground_truth.csv.
#[pyfunction]
#[pyo3(signature = (spec_path, out_dir, seed = None))]
fn generate_scenario(spec_path: PathBuf, out_dir: PathBuf, seed: Option<u64>) -> PyResult<usize> {
    let mut spec = eventflow::synth::ScenarioSpec::from_file(&spec_path).map_err(to_py_err)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", out_dir.display())))?;
    let (store, truth) = eventflow::synth::generate(&spec).map_err(to_py_err)?;
    store
        .write_ndjson(&out_dir.join("store.ndjson"))
        .map_err(to_py_err)?;
    let file = std::fs::File::create(out_dir.join("ground_truth.csv"))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    truth.write_csv(file).map_err(to_py_err)?;
    Ok(store.len())
}

/// Runs the full pipeline from a config file; returns the per-stage counts
/// as a dict of strings.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir = None, threads = 1))]
fn run_pipeline(
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    threads: usize,
) -> PyResult<BTreeMap<String, String>> {
    let mut config =
        eventflow::pipeline::PipelineConfig::from_file(&config_path).map_err(to_py_err)?;
    if let Some(out_dir) = out_dir {
        config.out_dir = out_dir;
    }
    config.threads = threads;
    let summary = eventflow::pipeline::run_pipeline(&config).map_err(to_py_err)?;
    let mut out = BTreeMap::new();
    out.insert("records_total".into(), summary.records_total.to_string());
    out.insert("malformed_lines".into(), summary.malformed_lines.to_string());
    out.insert("filtered_records".into(), summary.filtered_records.to_string());
    out.insert("event_users".into(), summary.event_users.to_string());
    out.insert("users_with_history".into(), summary.users_with_history.to_string());
    out.insert("homes_determined".into(), summary.homes_determined.to_string());
    out.insert("homes_undetermined".into(), summary.homes_undetermined.to_string());
    out.insert("temporal_binned".into(), summary.temporal_binned.to_string());
    for (dest, flow) in &summary.flows {
        out.insert(
            format!("flow_users_observed.{dest}"),
            flow.users_observed.to_string(),
        );
    }
    Ok(out)
}

#[pymodule]
fn eventflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProjection>()?;
    m.add_function(wrap_pyfunction!(base_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(record_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(polygon_area, m)?)?;
    m.add_function(wrap_pyfunction!(user_surface, m)?)?;
    m.add_function(wrap_pyfunction!(gi_star, m)?)?;
    m.add_function(wrap_pyfunction!(flow_shares, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}

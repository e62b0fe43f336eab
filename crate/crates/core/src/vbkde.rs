//! Variable-bandwidth kernel density estimation: fuses coordinate- and
//! place-referenced footprints into a per-user probability activity surface.
//!
//! Each record contributes one quartic (biweight) kernel at its
//! representative point. The base bandwidth follows the two-dimensional
//! rule-of-thumb BW_s = 0.9 · min(SD, sqrt(1/ln 2) · D_m) · n^(−0.2); a
//! place record's kernel widens with the areal uncertainty of its boundary,
//! BW_p = sqrt((Area_p + α) / α) · BW_s.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{polygon_area, GeoRecord, Georeference, PlanarPoint, Projection};

/// Lower bound on any bandwidth, in meters. Matches the nominal 50–100 m
/// positional accuracy of coordinate records and keeps single-point inputs
/// from degenerating to a zero-width kernel.
pub const BANDWIDTH_FLOOR_M: f64 = 100.0;

/// Default areal adjustment factor α, in m².
pub const DEFAULT_ALPHA_M2: f64 = 80.0;

/// Maximum rows/columns chosen by the automatic grid.
pub const AUTO_GRID_MAX_DIM: usize = 2048;

/// Default cap on total grid cells.
pub const DEFAULT_MAX_GRID_CELLS: usize = AUTO_GRID_MAX_DIM * AUTO_GRID_MAX_DIM;

const SQRT_INV_LN2: f64 = 1.201_122_408_786_449_8;

/// Raster layout: `origin` is the lower-left corner, rows run south to
/// north, values are stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: PlanarPoint,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GridSpec {
    pub fn new(origin: PlanarPoint, cell_size: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidArgument("grid needs at least one cell".into()));
        }
        Ok(GridSpec {
            origin,
            cell_size,
            n_rows,
            n_cols,
        })
    }

    pub fn cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Cell centers are the evaluation points.
    pub fn cell_center(&self, row: usize, col: usize) -> PlanarPoint {
        PlanarPoint::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Grid covering `regions`' planar bounding box with at most `max_dim`
    /// rows/columns, expanded by `margin_frac` of the span on each side.
    pub fn covering(
        bbox: (f64, f64, f64, f64),
        max_dim: usize,
        margin_frac: f64,
    ) -> Result<GridSpec> {
        let (min_x, min_y, max_x, max_y) = bbox;
        if !(min_x.is_finite() && max_x > min_x && min_y.is_finite() && max_y > min_y) {
            return Err(Error::InvalidArgument("empty or non-finite extent".into()));
        }
        if max_dim == 0 {
            return Err(Error::InvalidArgument("max_dim must be positive".into()));
        }
        let margin_x = (max_x - min_x) * margin_frac;
        let margin_y = (max_y - min_y) * margin_frac;
        let width = (max_x - min_x) + 2.0 * margin_x;
        let height = (max_y - min_y) + 2.0 * margin_y;
        let cell = (width / max_dim as f64).max(height / max_dim as f64);
        let n_cols = ((width / cell).ceil() as usize).clamp(1, max_dim);
        let n_rows = ((height / cell).ceil() as usize).clamp(1, max_dim);
        GridSpec::new(
            PlanarPoint::new(min_x - margin_x, min_y - margin_y),
            cell,
            n_rows,
            n_cols,
        )
    }
}

/// Per-user raster of kernel density values, normalizable to a probability
/// surface (Σ value · cell² = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySurface {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub normalized: bool,
    /// Number of records that contributed kernels.
    pub n_records: usize,
}

impl ActivitySurface {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.n_cols + col]
    }

    pub fn cell_area(&self) -> f64 {
        self.grid.cell_size * self.grid.cell_size
    }

    /// Σ value · cell².
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// (row, col) of the maximum cell; first in row-major order on ties.
    pub fn argmax_cell(&self) -> (usize, usize) {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in self.values.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        (best / self.grid.n_cols, best % self.grid.n_cols)
    }

    fn normalize(&mut self) -> Result<()> {
        let mass = self.total_mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Data(
                "surface has no kernel mass on the grid; nothing to normalize".into(),
            ));
        }
        let inv = 1.0 / mass;
        for v in &mut self.values {
            *v *= inv;
        }
        self.normalized = true;
        Ok(())
    }

    /// ESRI ASCII grid export: six header lines then rows north to south,
    /// space separated, full (round-trip) precision.
    pub fn write_esri_ascii<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "ncols {}", self.grid.n_cols)?;
        writeln!(w, "nrows {}", self.grid.n_rows)?;
        writeln!(w, "xllcorner {}", self.grid.origin.x)?;
        writeln!(w, "yllcorner {}", self.grid.origin.y)?;
        writeln!(w, "cellsize {}", self.grid.cell_size)?;
        writeln!(w, "NODATA_value -9999")?;
        let mut line = String::new();
        for row in (0..self.grid.n_rows).rev() {
            line.clear();
            for col in 0..self.grid.n_cols {
                if col > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{}", self.value(row, col)));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Options for surface construction.
#[derive(Debug, Clone, Copy)]
pub struct KdeOptions {
    /// Areal adjustment factor α in m².
    pub alpha: f64,
    /// Bandwidth floor in meters.
    pub bandwidth_floor: f64,
    /// Cap on total cells for explicit grids.
    pub max_cells: usize,
    /// false = fixed-bandwidth mode: every kernel uses BW_s.
    pub variable: bool,
}

impl Default for KdeOptions {
    fn default() -> Self {
        KdeOptions {
            alpha: DEFAULT_ALPHA_M2,
            bandwidth_floor: BANDWIDTH_FLOOR_M,
            max_cells: DEFAULT_MAX_GRID_CELLS,
            variable: true,
        }
    }
}

/// Base bandwidth BW_s = max(floor, 0.9 · min(SD, sqrt(1/ln 2) · D_m) ·
/// n^(−0.2)), where SD is the standard distance and D_m the median distance
/// to the mean center.
pub fn base_bandwidth(points: &[PlanarPoint]) -> Result<f64> {
    base_bandwidth_with_floor(points, BANDWIDTH_FLOOR_M)
}

pub fn base_bandwidth_with_floor(points: &[PlanarPoint], floor: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "base bandwidth needs at least one point".into(),
        ));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.x).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mut dists: Vec<f64> = points
        .iter()
        .map(|p| (p.x - mean_x).hypot(p.y - mean_y))
        .collect();
    let sd = (dists.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let d_m = crate::ingest::median_of_sorted(&dists);
    let bw = 0.9 * sd.min(SQRT_INV_LN2 * d_m) * n.powf(-0.2);
    Ok(bw.max(floor))
}

/// Per-record bandwidth BW_p = sqrt((Area_p + α) / α) · BW_s, with Area_p =
/// 0 for coordinate records and the projected boundary area in m² for place
/// records.
pub fn record_bandwidth(
    record: &GeoRecord,
    proj: &Projection,
    bw_s: f64,
    alpha: f64,
) -> Result<f64> {
    if !(bw_s.is_finite() && bw_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "base bandwidth must be positive, got {bw_s}"
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let area = georef_area_m2(&record.georef, proj)?;
    Ok(((area + alpha) / alpha).sqrt() * bw_s)
}

/// Projected boundary area in m²; zero for coordinates.
pub fn georef_area_m2(georef: &Georeference, proj: &Projection) -> Result<f64> {
    match georef {
        Georeference::Coordinate(_) => Ok(0.0),
        Georeference::Place { boundary, .. } => {
            let mut total = 0.0;
            for ring in boundary {
                let planar: Vec<PlanarPoint> = ring
                    .iter()
                    .map(|v| proj.forward(*v))
                    .collect::<Result<Vec<_>>>()?;
                total += polygon_area(&planar)?;
            }
            Ok(total)
        }
    }
}

struct Kernel {
    point: PlanarPoint,
    bandwidth: f64,
    /// 3 / (π h² n): quartic kernel normalizer times the per-record weight.
    coefficient: f64,
}

/// Builds a normalized activity surface from a user's records.
///
/// Every record contributes a quartic kernel of mass 1/n at its
/// representative point: density (1/n) · 3/(π h²) · (1 − (d/h)²)² for d < h.
/// Without an explicit grid, the extent is the bounding box of the
/// representative points buffered by the largest bandwidth, with cell size
/// max(min bandwidth / 4, extent / 2048 per axis).
pub fn build_surface(
    records: &[GeoRecord],
    proj: &Projection,
    grid: Option<GridSpec>,
    opts: &KdeOptions,
) -> Result<ActivitySurface> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "surface needs at least one record with a usable georeference".into(),
        ));
    }
    let points: Vec<PlanarPoint> = records
        .iter()
        .map(|r| proj.forward(r.georef.representative()))
        .collect::<Result<Vec<_>>>()?;
    let bw_s = base_bandwidth_with_floor(&points, opts.bandwidth_floor)?;
    let n = records.len() as f64;
    let kernels: Vec<Kernel> = records
        .iter()
        .zip(&points)
        .map(|(rec, &point)| {
            let bandwidth = if opts.variable {
                record_bandwidth(rec, proj, bw_s, opts.alpha)?
            } else {
                bw_s
            };
            Ok(Kernel {
                point,
                bandwidth,
                coefficient: 3.0 / (std::f64::consts::PI * bandwidth * bandwidth * n),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let grid = match grid {
        Some(g) => {
            if g.cells() > opts.max_cells {
                return Err(Error::ResourceLimit(format!(
                    "grid has {} cells, cap is {}",
                    g.cells(),
                    opts.max_cells
                )));
            }
            g
        }
        None => auto_grid(&points, &kernels, opts)?,
    };

    let values = accumulate(&grid, &kernels);
    let mut surface = ActivitySurface {
        grid,
        values,
        normalized: false,
        n_records: records.len(),
    };
    surface.normalize()?;
    Ok(surface)
}

fn auto_grid(points: &[PlanarPoint], kernels: &[Kernel], opts: &KdeOptions) -> Result<GridSpec> {
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let max_bw = kernels.iter().map(|k| k.bandwidth).fold(0.0, f64::max);
    let min_bw = kernels.iter().map(|k| k.bandwidth).fold(f64::INFINITY, f64::min);
    min_x -= max_bw;
    min_y -= max_bw;
    max_x += max_bw;
    max_y += max_bw;
    let width = max_x - min_x;
    let height = max_y - min_y;
    let max_dim = AUTO_GRID_MAX_DIM.min((opts.max_cells as f64).sqrt().floor() as usize).max(1);
    let cell = (min_bw / 4.0)
        .max(width / max_dim as f64)
        .max(height / max_dim as f64);
    let n_cols = ((width / cell).ceil() as usize).clamp(1, max_dim);
    let n_rows = ((height / cell).ceil() as usize).clamp(1, max_dim);
    GridSpec::new(PlanarPoint::new(min_x, min_y), cell, n_rows, n_cols)
}

/// Kernel accumulation, parallelized over row bands. Within a row every
/// cell receives its contributions in record order, so the result is
/// bit-identical for any thread count.
fn accumulate(grid: &GridSpec, kernels: &[Kernel]) -> Vec<f64> {
    let n_cols = grid.n_cols;
    let cell = grid.cell_size;
    let origin = grid.origin;
    let mut values = vec![0.0f64; grid.cells()];
    values
        .par_chunks_mut(n_cols)
        .enumerate()
        .for_each(|(row, row_values)| {
            let cy = origin.y + (row as f64 + 0.5) * cell;
            for k in kernels {
                let dy = cy - k.point.y;
                let h2 = k.bandwidth * k.bandwidth;
                let rem = h2 - dy * dy;
                if rem <= 0.0 {
                    continue;
                }
                let dx = rem.sqrt();
                // Columns whose centers fall within the circle slice.
                let lo = ((k.point.x - dx - origin.x) / cell - 0.5).ceil().max(0.0) as usize;
                let hi_f = ((k.point.x + dx - origin.x) / cell - 0.5).floor();
                if hi_f < 0.0 {
                    continue;
                }
                let hi = (hi_f as usize).min(n_cols - 1);
                if lo > hi {
                    continue;
                }
                let inv_h2 = 1.0 / h2;
                for (col, slot) in row_values.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    let cx = origin.x + (col as f64 + 0.5) * cell;
                    let ddx = cx - k.point.x;
                    let u = (ddx * ddx + dy * dy) * inv_h2;
                    if u < 1.0 {
                        let t = 1.0 - u;
                        *slot += k.coefficient * t * t;
                    }
                }
            }
        });
    values
}

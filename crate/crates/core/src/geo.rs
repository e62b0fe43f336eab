//! Domain types and planar geometry shared by every other module: place
//! scales, georeferences, analysis regions, the equirectangular projection,
//! and polygon primitives (area, centroid, point-in-polygon).
//!
//! All metric formulas operate on planar meters. The projection is
//! equirectangular about a caller-supplied origin, which is an affine map of
//! (lat, lon); affine maps commute with centroids and preserve containment,
//! so representative points and joins may be computed in either space.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters used by the equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Spatial scale of a place georeference, ordered from finest to coarsest.
///
/// The derived `Ord` puts `Poi < Neighborhood < City < Admin < Country`, so
/// "coarser-than" is decidable for any pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceScale {
    Poi,
    Neighborhood,
    City,
    Admin,
    Country,
}

impl PlaceScale {
    pub fn is_coarser_than(self, other: PlaceScale) -> bool {
        self > other
    }

    pub const ALL: [PlaceScale; 5] = [
        PlaceScale::Poi,
        PlaceScale::Neighborhood,
        PlaceScale::City,
        PlaceScale::Admin,
        PlaceScale::Country,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlaceScale::Poi => "poi",
            PlaceScale::Neighborhood => "neighborhood",
            PlaceScale::City => "city",
            PlaceScale::Admin => "admin",
            PlaceScale::Country => "country",
        }
    }
}

impl FromStr for PlaceScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poi" => Ok(PlaceScale::Poi),
            "neighborhood" => Ok(PlaceScale::Neighborhood),
            "city" => Ok(PlaceScale::City),
            "admin" => Ok(PlaceScale::Admin),
            "country" => Ok(PlaceScale::Country),
            other => Err(Error::InvalidArgument(format!(
                "unknown place scale {other:?}"
            ))),
        }
    }
}

impl fmt::Display for PlaceScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A WGS84 geographic coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// A closed polygon ring of lat/lon vertices.
///
/// Normalized rings end with a copy of their first vertex.
pub type Ring = Vec<LatLon>;

/// Closes the ring if needed and checks it has at least 3 distinct vertices
/// with valid coordinates.
pub fn normalize_ring(mut ring: Ring) -> Result<Ring> {
    for v in &ring {
        if !v.is_valid() {
            return Err(Error::InvalidGeometry(format!(
                "ring vertex out of range: ({}, {})",
                v.lat, v.lon
            )));
        }
    }
    if let (Some(first), Some(last)) = (ring.first().copied(), ring.last().copied()) {
        if first != last {
            ring.push(first);
        }
    }
    let distinct: HashSet<(u64, u64)> = ring
        .iter()
        .map(|v| (v.lat.to_bits(), v.lon.to_bits()))
        .collect();
    if distinct.len() < 3 {
        return Err(Error::InvalidGeometry(format!(
            "ring needs at least 3 distinct vertices, got {}",
            distinct.len()
        )));
    }
    Ok(ring)
}

/// Either a precise coordinate or a place polygon at one of five scales.
#[derive(Debug, Clone, PartialEq)]
pub enum Georeference {
    Coordinate(LatLon),
    Place {
        scale: PlaceScale,
        boundary: Vec<Ring>,
    },
}

impl Georeference {
    pub fn coordinate(lat: f64, lon: f64) -> Result<Self> {
        let p = LatLon::new(lat, lon);
        if !p.is_valid() {
            return Err(Error::InvalidGeometry(format!(
                "coordinate out of range: ({lat}, {lon})"
            )));
        }
        Ok(Georeference::Coordinate(p))
    }

    pub fn place(scale: PlaceScale, boundary: Vec<Ring>) -> Result<Self> {
        if boundary.is_empty() {
            return Err(Error::InvalidGeometry("place has no boundary rings".into()));
        }
        let boundary = boundary
            .into_iter()
            .map(normalize_ring)
            .collect::<Result<Vec<_>>>()?;
        Ok(Georeference::Place { scale, boundary })
    }

    pub fn is_place(&self) -> bool {
        matches!(self, Georeference::Place { .. })
    }

    pub fn scale(&self) -> Option<PlaceScale> {
        match self {
            Georeference::Coordinate(_) => None,
            Georeference::Place { scale, .. } => Some(*scale),
        }
    }

    /// Representative lat/lon point: the coordinate itself, or the
    /// area-weighted centroid of the place boundary (vertex mean for
    /// zero-area boundaries).
    pub fn representative(&self) -> LatLon {
        match self {
            Georeference::Coordinate(p) => *p,
            Georeference::Place { boundary, .. } => latlon_rings_centroid(boundary),
        }
    }
}

/// One social record with a georeference.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRecord {
    pub record_id: String,
    pub user_id: String,
    pub timestamp_utc: i64,
    pub text: String,
    pub georef: Georeference,
}

/// Named analysis zone with polygon boundary and population.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: String,
    pub name: String,
    pub boundary: Vec<Ring>,
    pub population: u64,
    pub utc_offset_hours: Option<f64>,
}

impl Region {
    pub fn new(
        region_id: impl Into<String>,
        name: impl Into<String>,
        boundary: Vec<Ring>,
        population: u64,
        utc_offset_hours: Option<f64>,
    ) -> Result<Self> {
        let boundary = boundary
            .into_iter()
            .map(normalize_ring)
            .collect::<Result<Vec<_>>>()?;
        if boundary.is_empty() {
            return Err(Error::InvalidGeometry("region has no boundary rings".into()));
        }
        Ok(Region {
            region_id: region_id.into(),
            name: name.into(),
            boundary,
            population,
            utc_offset_hours,
        })
    }

    /// Containment test in lat/lon space (equivalent to the projected test,
    /// since the projection is affine in lat/lon). Boundary points count as
    /// inside.
    pub fn contains_latlon(&self, p: LatLon) -> bool {
        point_in_rings_xy(
            (p.lon, p.lat),
            self.boundary
                .iter()
                .map(|r| r.iter().map(|v| (v.lon, v.lat))),
        )
    }

    /// Area-weighted centroid of the boundary in lat/lon.
    pub fn centroid_latlon(&self) -> LatLon {
        latlon_rings_centroid(&self.boundary)
    }

    pub fn project(&self, proj: &Projection) -> Result<ProjectedRegion> {
        let rings = self
            .boundary
            .iter()
            .map(|ring| ring.iter().map(|v| proj.forward(*v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in rings.iter().flatten() {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        Ok(ProjectedRegion {
            region_id: self.region_id.clone(),
            name: self.name.clone(),
            population: self.population,
            utc_offset_hours: self.utc_offset_hours,
            rings,
            bbox: (min_x, min_y, max_x, max_y),
        })
    }
}

/// A point in planar meters east/north of the projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Equirectangular projection about a fixed origin.
///
/// forward: x = R·Δλ·cos(φ₀), y = R·Δφ (angles in radians). Injective for
/// |Δlon| < 180°, and exactly invertible away from the poles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub earth_radius: f64,
    cos_origin_lat: f64,
}

impl Projection {
    pub fn new(origin_lat: f64, origin_lon: f64) -> Result<Self> {
        let origin = LatLon::new(origin_lat, origin_lon);
        if !origin.is_valid() {
            return Err(Error::InvalidGeometry(format!(
                "projection origin out of range: ({origin_lat}, {origin_lon})"
            )));
        }
        Ok(Projection {
            origin_lat,
            origin_lon,
            earth_radius: EARTH_RADIUS_M,
            cos_origin_lat: origin_lat.to_radians().cos(),
        })
    }

    /// Origin at the mean representative point of `records`; falls back to
    /// (0, 0) for an empty set.
    pub fn centered_on_records<'a, I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a GeoRecord>,
    {
        let mut n = 0usize;
        let mut lat_sum = 0.0;
        let mut lon_sum = 0.0;
        for rec in records {
            let p = rec.georef.representative();
            lat_sum += p.lat;
            lon_sum += p.lon;
            n += 1;
        }
        if n == 0 {
            return Projection::new(0.0, 0.0);
        }
        Projection::new(lat_sum / n as f64, lon_sum / n as f64)
    }

    pub fn forward(&self, p: LatLon) -> Result<PlanarPoint> {
        if !p.is_valid() {
            return Err(Error::InvalidGeometry(format!(
                "point out of range: ({}, {})",
                p.lat, p.lon
            )));
        }
        Ok(self.forward_unchecked(p))
    }

    pub(crate) fn forward_unchecked(&self, p: LatLon) -> PlanarPoint {
        let x = self.earth_radius * (p.lon - self.origin_lon).to_radians() * self.cos_origin_lat;
        let y = self.earth_radius * (p.lat - self.origin_lat).to_radians();
        PlanarPoint::new(x, y)
    }

    pub fn inverse(&self, p: PlanarPoint) -> LatLon {
        let lat = self.origin_lat + (p.y / self.earth_radius).to_degrees();
        let lon = self.origin_lon + (p.x / (self.earth_radius * self.cos_origin_lat)).to_degrees();
        LatLon::new(lat, lon)
    }
}

/// Projects a lat/lon point to planar meters.
pub fn project_forward(p: LatLon, proj: &Projection) -> Result<PlanarPoint> {
    proj.forward(p)
}

fn distinct_vertex_count<I: Iterator<Item = (f64, f64)>>(ring: I) -> usize {
    ring.map(|(x, y)| (x.to_bits(), y.to_bits()))
        .collect::<HashSet<_>>()
        .len()
}

fn signed_area_xy(ring: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    for w in ring.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        sum += x0 * y1 - x1 * y0;
    }
    // Close implicitly in case the caller passed an open ring.
    if let (Some(&(xl, yl)), Some(&(x0, y0))) = (ring.last(), ring.first()) {
        if (xl, yl) != (x0, y0) {
            sum += xl * y0 - x0 * yl;
        }
    }
    sum / 2.0
}

/// Absolute shoelace area of a closed planar ring, in m² for projected input.
///
/// Degenerate rings (fewer than 3 distinct vertices, or zero area) are
/// invalid.
pub fn polygon_area(ring: &[PlanarPoint]) -> Result<f64> {
    let xy: Vec<(f64, f64)> = ring.iter().map(|p| (p.x, p.y)).collect();
    if distinct_vertex_count(xy.iter().copied()) < 3 {
        return Err(Error::InvalidGeometry(
            "polygon needs at least 3 distinct vertices".into(),
        ));
    }
    let area = signed_area_xy(&xy).abs();
    if area == 0.0 {
        return Err(Error::InvalidGeometry("degenerate zero-area polygon".into()));
    }
    Ok(area)
}

/// Area-weighted centroid of a closed planar ring by the shoelace centroid
/// formula; falls back to the vertex mean for zero-area rings.
pub fn polygon_centroid(ring: &[PlanarPoint]) -> Result<PlanarPoint> {
    let xy: Vec<(f64, f64)> = ring.iter().map(|p| (p.x, p.y)).collect();
    if distinct_vertex_count(xy.iter().copied()) < 3 {
        return Err(Error::InvalidGeometry(
            "polygon needs at least 3 distinct vertices".into(),
        ));
    }
    let (cx, cy) = centroid_xy(&xy);
    Ok(PlanarPoint::new(cx, cy))
}

/// Shoelace centroid over (x, y) pairs; vertex mean when the signed area is
/// zero. Accepts open or closed rings.
fn centroid_xy(ring: &[(f64, f64)]) -> (f64, f64) {
    let closed: Vec<(f64, f64)> = if ring.first() == ring.last() {
        ring.to_vec()
    } else {
        let mut v = ring.to_vec();
        if let Some(&first) = ring.first() {
            v.push(first);
        }
        v
    };
    let a = signed_area_xy(&closed);
    if a == 0.0 {
        // Vertex mean over the ring without its closing duplicate.
        let open = &closed[..closed.len() - 1];
        let n = open.len() as f64;
        let sx: f64 = open.iter().map(|p| p.0).sum();
        let sy: f64 = open.iter().map(|p| p.1).sum();
        return (sx / n, sy / n);
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for w in closed.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let cross = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    (cx / (6.0 * a), cy / (6.0 * a))
}

/// Area-weighted centroid of multiple lat/lon rings, used as the
/// representative point of place boundaries. Works directly in lat/lon
/// space; the equirectangular projection is affine, so this commutes with
/// projecting first.
pub fn latlon_rings_centroid(rings: &[Ring]) -> LatLon {
    let mut total_area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for ring in rings {
        let xy: Vec<(f64, f64)> = ring.iter().map(|v| (v.lon, v.lat)).collect();
        let a = signed_area_xy(&xy).abs();
        let (rx, ry) = centroid_xy(&xy);
        cx += rx * a;
        cy += ry * a;
        total_area += a;
    }
    if total_area == 0.0 {
        // All rings degenerate: mean over all vertices (closing duplicates
        // excluded).
        let mut n = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for ring in rings {
            let open = if ring.first() == ring.last() && ring.len() > 1 {
                &ring[..ring.len() - 1]
            } else {
                &ring[..]
            };
            for v in open {
                sx += v.lon;
                sy += v.lat;
                n += 1.0;
            }
        }
        return LatLon::new(sy / n, sx / n);
    }
    LatLon::new(cy / total_area, cx / total_area)
}

/// Even-odd ray casting over generic (x, y) rings; points on a boundary edge
/// or vertex count as inside.
fn point_in_rings_xy<I, R>(p: (f64, f64), rings: I) -> bool
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = (f64, f64)>,
{
    let (px, py) = p;
    let mut inside = false;
    for ring in rings {
        let pts: Vec<(f64, f64)> = ring.into_iter().collect();
        if pts.len() < 2 {
            continue;
        }
        let closed: Vec<(f64, f64)> = if pts.first() == pts.last() {
            pts
        } else {
            let mut v = pts.clone();
            v.push(pts[0]);
            v
        };
        for w in closed.windows(2) {
            let (ax, ay) = w[0];
            let (bx, by) = w[1];
            if on_segment((px, py), (ax, ay), (bx, by)) {
                return true;
            }
            if (ay > py) != (by > py) {
                let x_int = ax + (py - ay) * (bx - ax) / (by - ay);
                if px < x_int {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    if cross != 0.0 {
        return false;
    }
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// A region with its rings projected to planar meters plus a cached bbox.
#[derive(Debug, Clone)]
pub struct ProjectedRegion {
    pub region_id: String,
    pub name: String,
    pub population: u64,
    pub utc_offset_hours: Option<f64>,
    pub rings: Vec<Vec<PlanarPoint>>,
    /// (min_x, min_y, max_x, max_y)
    pub bbox: (f64, f64, f64, f64),
}

impl ProjectedRegion {
    pub fn contains(&self, p: PlanarPoint) -> bool {
        let (min_x, min_y, max_x, max_y) = self.bbox;
        if p.x < min_x || p.x > max_x || p.y < min_y || p.y > max_y {
            return false;
        }
        point_in_rings_xy(
            (p.x, p.y),
            self.rings.iter().map(|r| r.iter().map(|v| (v.x, v.y))),
        )
    }

    /// Sum of ring areas (holes are not modeled; rings form a disjoint
    /// union).
    pub fn area(&self) -> Result<f64> {
        let mut total = 0.0;
        for ring in &self.rings {
            total += polygon_area(ring)?;
        }
        Ok(total)
    }
}

/// Even-odd containment with boundary points inside.
pub fn point_in_region(p: PlanarPoint, region: &ProjectedRegion) -> bool {
    region.contains(p)
}

// ---------------------------------------------------------------------------
// Region file I/O: a GeoJSON subset (FeatureCollection of Polygon /
// MultiPolygon features with properties region_id, name, population,
// utc_offset_hours). Only exterior rings are read; GeoJSON positions are
// [lon, lat].
// ---------------------------------------------------------------------------

pub fn load_regions(path: &Path) -> Result<Vec<Region>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| Error::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    regions_from_geojson(&value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn regions_from_geojson(value: &serde_json::Value) -> Result<Vec<Region>> {
    let features = value
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::Config("expected FeatureCollection with features".into()))?;
    let mut regions = Vec::with_capacity(features.len());
    let mut seen = HashSet::new();
    for (idx, feature) in features.iter().enumerate() {
        let props = feature
            .get("properties")
            .ok_or_else(|| Error::Config(format!("feature {idx}: missing properties")))?;
        let region_id = props
            .get("region_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Config(format!("feature {idx}: missing region_id")))?
            .to_string();
        if !seen.insert(region_id.clone()) {
            return Err(Error::Config(format!(
                "feature {idx}: duplicate region_id {region_id:?}"
            )));
        }
        let name = props
            .get("name")
            .and_then(|v| v.as_str())
            .unwrap_or(&region_id)
            .to_string();
        let population = match props.get("population") {
            None | Some(serde_json::Value::Null) => 0,
            Some(v) => v.as_u64().ok_or_else(|| {
                Error::Config(format!(
                    "feature {idx}: population must be a non-negative integer"
                ))
            })?,
        };
        let utc_offset_hours = match props.get("utc_offset_hours") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| {
                Error::Config(format!("feature {idx}: utc_offset_hours must be a number"))
            })?),
        };
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::Config(format!("feature {idx}: missing geometry")))?;
        let gtype = geometry.get("type").and_then(|v| v.as_str()).unwrap_or("");
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| Error::Config(format!("feature {idx}: missing coordinates")))?;
        let mut rings: Vec<Ring> = Vec::new();
        match gtype {
            "Polygon" => {
                if let Some(exterior) = coords.as_array().and_then(|rs| rs.first()) {
                    rings.push(geojson_ring(exterior, idx)?);
                }
            }
            "MultiPolygon" => {
                for poly in coords.as_array().into_iter().flatten() {
                    if let Some(exterior) = poly.as_array().and_then(|rs| rs.first()) {
                        rings.push(geojson_ring(exterior, idx)?);
                    }
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "feature {idx}: unsupported geometry type {other:?}"
                )))
            }
        }
        let region = Region::new(region_id, name, rings, population, utc_offset_hours)
            .map_err(|e| Error::Config(format!("feature {idx}: {e}")))?;
        regions.push(region);
    }
    Ok(regions)
}

fn geojson_ring(ring: &serde_json::Value, feature_idx: usize) -> Result<Ring> {
    let positions = ring.as_array().ok_or_else(|| {
        Error::Config(format!("feature {feature_idx}: ring is not an array"))
    })?;
    let mut out = Vec::with_capacity(positions.len());
    for pos in positions {
        let pair = pos.as_array().filter(|a| a.len() >= 2).ok_or_else(|| {
            Error::Config(format!(
                "feature {feature_idx}: position is not a [lon, lat] pair"
            ))
        })?;
        let lon = pair[0].as_f64().ok_or_else(|| {
            Error::Config(format!("feature {feature_idx}: non-numeric longitude"))
        })?;
        let lat = pair[1].as_f64().ok_or_else(|| {
            Error::Config(format!("feature {feature_idx}: non-numeric latitude"))
        })?;
        out.push(LatLon::new(lat, lon));
    }
    Ok(out)
}

/// Serializes regions back to the GeoJSON subset accepted by
/// [`load_regions`].
pub fn regions_to_geojson(regions: &[Region]) -> serde_json::Value {
    let features: Vec<serde_json::Value> = regions
        .iter()
        .map(|r| {
            let rings: Vec<Vec<[f64; 2]>> = r
                .boundary
                .iter()
                .map(|ring| ring.iter().map(|v| [v.lon, v.lat]).collect())
                .collect();
            let mut props = serde_json::json!({
                "region_id": r.region_id,
                "name": r.name,
                "population": r.population,
            });
            if let Some(off) = r.utc_offset_hours {
                props["utc_offset_hours"] = serde_json::json!(off);
            }
            serde_json::json!({
                "type": "Feature",
                "properties": props,
                "geometry": {
                    "type": "Polygon",
                    "coordinates": rings,
                },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_regions_geojson(regions: &[Region], path: &Path) -> Result<()> {
    let value = regions_to_geojson(regions);
    let text = serde_json::to_string_pretty(&value)
        .map_err(|e| Error::Config(format!("serializing regions: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn region_by_id<'a>(regions: &'a [Region], id: &str) -> Option<&'a Region> {
    regions.iter().find(|r| r.region_id == id)
}

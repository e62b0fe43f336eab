//! Home-region inference: zonal probability masses over an activity
//! surface, argmax home assignment, and cross-validation against
//! self-reported profile locations through a gazetteer.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::ProjectedRegion;
use crate::vbkde::{ActivitySurface, GridSpec};

/// Default minimum number of georeferenced history records required before
/// a home is assigned.
pub const DEFAULT_MIN_EVIDENCE: usize = 5;

/// A user's inferred home region with the per-region probability masses.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeEstimate {
    pub user_id: String,
    /// None = undetermined.
    pub region_id: Option<String>,
    pub zonal_mass: BTreeMap<String, f64>,
    pub evidence_count: usize,
}

impl HomeEstimate {
    pub fn undetermined(user_id: impl Into<String>, evidence_count: usize) -> Self {
        HomeEstimate {
            user_id: user_id.into(),
            region_id: None,
            zonal_mass: BTreeMap::new(),
            evidence_count,
        }
    }

    /// Top regions by (mass desc, region_id asc).
    pub fn top_regions(&self, k: usize) -> Vec<(&str, f64)> {
        let mut entries: Vec<(&str, f64)> = self
            .zonal_mass
            .iter()
            .map(|(id, &m)| (id.as_str(), m))
            .collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
        entries.truncate(k);
        entries
    }
}

/// Cell-center → region assignment for one grid, shared across all users on
/// that grid. Boundary cells go to the lexicographically smallest
/// containing region_id.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub grid: GridSpec,
    pub region_ids: Vec<String>,
    /// Per cell: index into `region_ids`, or -1 for cells outside all
    /// regions.
    assignment: Vec<i32>,
}

impl RegionMask {
    pub fn build(grid: GridSpec, regions: &[ProjectedRegion]) -> RegionMask {
        let mut order: Vec<usize> = (0..regions.len()).collect();
        order.sort_by(|&a, &b| regions[a].region_id.cmp(&regions[b].region_id));
        let region_ids: Vec<String> = order
            .iter()
            .map(|&i| regions[i].region_id.clone())
            .collect();
        let mut assignment = vec![-1i32; grid.cells()];
        for row in 0..grid.n_rows {
            for col in 0..grid.n_cols {
                let center = grid.cell_center(row, col);
                for (slot, &ri) in order.iter().enumerate() {
                    if regions[ri].contains(center) {
                        assignment[row * grid.n_cols + col] = slot as i32;
                        break;
                    }
                }
            }
        }
        RegionMask {
            grid,
            region_ids,
            assignment,
        }
    }

    /// Probability mass per region: Σ value · cell² over cells whose center
    /// lies in the region.
    pub fn zonal_masses(&self, surface: &ActivitySurface) -> Result<Vec<f64>> {
        if surface.grid != self.grid {
            return Err(Error::InvalidArgument(
                "surface grid does not match the region mask grid".into(),
            ));
        }
        let cell_area = surface.cell_area();
        let mut masses = vec![0.0f64; self.region_ids.len()];
        for (&slot, &v) in self.assignment.iter().zip(&surface.values) {
            if slot >= 0 {
                masses[slot as usize] += v * cell_area;
            }
        }
        Ok(masses)
    }
}

/// Assigns the region holding the maximum probability mass of the surface;
/// undetermined when evidence is short or no mass falls inside any region.
pub fn infer_home(
    user_id: &str,
    surface: &ActivitySurface,
    mask: &RegionMask,
    min_evidence: usize,
) -> Result<HomeEstimate> {
    if !surface.normalized {
        return Err(Error::InvalidArgument(
            "home inference needs a normalized surface".into(),
        ));
    }
    let masses = mask.zonal_masses(surface)?;
    let zonal_mass: BTreeMap<String, f64> = mask
        .region_ids
        .iter()
        .cloned()
        .zip(masses.iter().copied())
        .collect();
    let evidence_count = surface.n_records;
    if evidence_count < min_evidence {
        return Ok(HomeEstimate {
            user_id: user_id.to_string(),
            region_id: None,
            zonal_mass,
            evidence_count,
        });
    }
    // Argmax with ties to the lexicographically smallest region_id; the
    // BTreeMap iterates in id order, so strict improvement keeps the first.
    let mut best: Option<(&str, f64)> = None;
    for (id, &mass) in &zonal_mass {
        if mass > 0.0 && best.is_none_or(|(_, bm)| mass > bm) {
            best = Some((id, mass));
        }
    }
    Ok(HomeEstimate {
        user_id: user_id.to_string(),
        region_id: best.map(|(id, _)| id.to_string()),
        zonal_mass,
        evidence_count,
    })
}

/// Name/abbreviation lookup table mapping profile-location text to region
/// ids. Two-letter aliases act as abbreviations, longer aliases as names.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    /// (lowercased alias, region_id), insertion order preserved.
    entries: Vec<(String, String)>,
}

impl Gazetteer {
    pub fn new() -> Self {
        Gazetteer::default()
    }

    pub fn insert(&mut self, alias: impl AsRef<str>, region_id: impl Into<String>) {
        self.entries
            .push((alias.as_ref().trim().to_lowercase(), region_id.into()));
    }

    /// Loads a two-column CSV (alias, region_id) without a header.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .from_reader(reader);
        let mut gaz = Gazetteer::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Config(format!("gazetteer: {e}")))?;
            if row.len() < 2 {
                return Err(Error::Config(
                    "gazetteer rows need two columns: alias, region_id".into(),
                ));
            }
            gaz.insert(&row[0], row[1].trim().to_string());
        }
        Ok(gaz)
    }

    fn abbreviations(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .filter(|(a, _)| a.len() == 2 && a.chars().all(|c| c.is_ascii_alphabetic()))
            .map(|(a, r)| (a.as_str(), r.as_str()))
    }

    fn names(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .filter(|(a, _)| !(a.len() == 2 && a.chars().all(|c| c.is_ascii_alphabetic())))
            .map(|(a, r)| (a.as_str(), r.as_str()))
    }
}

/// Matches free-form profile text against the gazetteer, in priority
/// order: trailing ", XX" abbreviation, then full-name substring, then a
/// bare abbreviation token.
pub fn match_profile_location(profile_text: &str, gazetteer: &Gazetteer) -> Option<String> {
    let text = profile_text.trim();
    if text.is_empty() {
        return None;
    }
    let lower = text.to_lowercase();

    // 1. Trailing ", XX".
    if let Some((_, tail)) = lower.rsplit_once(',') {
        let tail = tail.trim();
        if tail.len() == 2 && tail.chars().all(|c| c.is_ascii_alphabetic()) {
            for (abbrev, region) in gazetteer.abbreviations() {
                if abbrev == tail {
                    return Some(region.to_string());
                }
            }
        }
    }

    // 2. Full region name substring; longest alias wins, ties to the
    // smallest region_id.
    let mut best: Option<(&str, &str)> = None;
    for (name, region) in gazetteer.names() {
        if lower.contains(name) {
            let better = match best {
                None => true,
                Some((bn, br)) => {
                    name.len() > bn.len() || (name.len() == bn.len() && region < br)
                }
            };
            if better {
                best = Some((name, region));
            }
        }
    }
    if let Some((_, region)) = best {
        return Some(region.to_string());
    }

    // 3. Bare abbreviation token.
    for token in lower.split(|c: char| !c.is_ascii_alphanumeric()) {
        if token.len() == 2 {
            for (abbrev, region) in gazetteer.abbreviations() {
                if abbrev == token {
                    return Some(region.to_string());
                }
            }
        }
    }
    None
}

/// Gazetteer match for one user's profile text, joined against the home
/// estimate when both exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatch {
    pub user_id: String,
    pub profile_text: String,
    pub matched_region_id: Option<String>,
    pub agrees_with_estimate: Option<bool>,
}

/// Builds profile matches and joins them with estimates by user_id.
pub fn match_profiles(
    profiles: &BTreeMap<String, String>,
    estimates: &[HomeEstimate],
    gazetteer: &Gazetteer,
) -> Vec<ProfileMatch> {
    let by_user: BTreeMap<&str, &HomeEstimate> = estimates
        .iter()
        .map(|e| (e.user_id.as_str(), e))
        .collect();
    profiles
        .iter()
        .map(|(user_id, text)| {
            let matched = match_profile_location(text, gazetteer);
            let agrees = match (&matched, by_user.get(user_id.as_str())) {
                (Some(m), Some(est)) => est.region_id.as_ref().map(|r| r == m),
                _ => None,
            };
            ProfileMatch {
                user_id: user_id.clone(),
                profile_text: text.clone(),
                matched_region_id: matched,
                agrees_with_estimate: agrees,
            }
        })
        .collect()
}

/// Fraction of users with both a determined estimate and a matched profile
/// region where the two agree. None when no user is comparable.
pub fn agreement_rate(estimates: &[HomeEstimate], matches: &[ProfileMatch]) -> Option<f64> {
    let estimate_by_user: BTreeMap<&str, &HomeEstimate> = estimates
        .iter()
        .map(|e| (e.user_id.as_str(), e))
        .collect();
    let mut comparable = 0u64;
    let mut agreeing = 0u64;
    for m in matches {
        let Some(matched) = &m.matched_region_id else {
            continue;
        };
        let Some(est) = estimate_by_user.get(m.user_id.as_str()) else {
            continue;
        };
        let Some(home) = &est.region_id else {
            continue;
        };
        comparable += 1;
        if home == matched {
            agreeing += 1;
        }
    }
    if comparable == 0 {
        None
    } else {
        Some(agreeing as f64 / comparable as f64)
    }
}

/// CSV export: user_id, region_id ("undetermined" when unassigned),
/// evidence_count, and the top-3 regions with their masses.
pub fn write_home_estimates_csv<W: Write>(estimates: &[HomeEstimate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing home estimates: {e}"));
    w.write_record([
        "user_id",
        "region_id",
        "evidence_count",
        "top1_region",
        "top1_mass",
        "top2_region",
        "top2_mass",
        "top3_region",
        "top3_mass",
    ])
    .map_err(err)?;
    for est in estimates {
        let top = est.top_regions(3);
        let mut fields: Vec<String> = vec![
            est.user_id.clone(),
            est.region_id.clone().unwrap_or_else(|| "undetermined".into()),
            est.evidence_count.to_string(),
        ];
        for i in 0..3 {
            match top.get(i) {
                Some((id, mass)) => {
                    fields.push((*id).to_string());
                    fields.push(mass.to_string());
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        w.write_record(&fields).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("flushing home estimates: {e}")))
}

/// CSV export of profile matches plus the agreement join.
pub fn write_profile_matches_csv<W: Write>(matches: &[ProfileMatch], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing profile matches: {e}"));
    w.write_record(["user_id", "profile_text", "matched_region_id", "agrees_with_estimate"])
        .map_err(err)?;
    for m in matches {
        w.write_record([
            m.user_id.as_str(),
            m.profile_text.as_str(),
            m.matched_region_id.as_deref().unwrap_or(""),
            match m.agrees_with_estimate {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            },
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("flushing profile matches: {e}")))
}

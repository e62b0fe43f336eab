//! Population-calibrated origin-destination flow shares per destination
//! region, and baseline-vs-event comparisons.
//!
//! Origin counts are weighted per capita (count / population), then
//! normalized so shares sum to one; high-population origins therefore carry
//! lower weight.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::error::{Error, Result};
use crate::geo::Region;
use crate::inference::HomeEstimate;

/// One origin row of a flow table.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub origin_region_id: String,
    pub raw_count: u64,
    /// raw_count / population.
    pub weight: f64,
    /// weight / Σ weights.
    pub share: f64,
    /// 1-based rank by (share desc, origin asc).
    pub rank: u32,
}

/// Population-calibrated origin shares for one destination.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    pub destination_region_id: String,
    /// Sorted by rank.
    pub rows: Vec<FlowRow>,
    /// Users with determined homes that entered the table.
    pub total_users: u64,
    /// Users dropped for undetermined home estimates.
    pub undetermined: u64,
    /// Origins dropped for zero population.
    pub excluded_zero_population: Vec<String>,
}

impl FlowTable {
    pub fn share_of(&self, origin: &str) -> f64 {
        self.rows
            .iter()
            .find(|r| r.origin_region_id == origin)
            .map_or(0.0, |r| r.share)
    }

    pub fn rank_of(&self, origin: &str) -> Option<u32> {
        self.rows
            .iter()
            .find(|r| r.origin_region_id == origin)
            .map(|r| r.rank)
    }
}

/// Groups estimates by home region, weights per capita, and normalizes to
/// shares. Estimates must belong to users observed at the destination.
pub fn build_flow_table(
    estimates: &[HomeEstimate],
    destination: &str,
    populations: &[Region],
) -> Result<FlowTable> {
    let pop_by_id: BTreeMap<&str, u64> = populations
        .iter()
        .map(|r| (r.region_id.as_str(), r.population))
        .collect();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut undetermined = 0u64;
    for est in estimates {
        match &est.region_id {
            Some(home) => *counts.entry(home.clone()).or_insert(0) += 1,
            None => undetermined += 1,
        }
    }
    let mut excluded = Vec::new();
    let mut weighted: Vec<(String, u64, f64)> = Vec::new();
    for (origin, count) in &counts {
        let population = pop_by_id.get(origin.as_str()).copied().unwrap_or(0);
        if population == 0 {
            excluded.push(origin.clone());
            continue;
        }
        weighted.push((origin.clone(), *count, *count as f64 / population as f64));
    }
    let weight_sum: f64 = weighted.iter().map(|(_, _, w)| w).sum();
    if weight_sum <= 0.0 {
        return Err(Error::EmptyFlowTable(format!(
            "destination {destination}: no origin carries positive weight"
        )));
    }
    let mut rows: Vec<FlowRow> = weighted
        .into_iter()
        .map(|(origin, raw_count, weight)| FlowRow {
            origin_region_id: origin,
            raw_count,
            weight,
            share: weight / weight_sum,
            rank: 0,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.share
            .partial_cmp(&a.share)
            .unwrap()
            .then_with(|| a.origin_region_id.cmp(&b.origin_region_id))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = (i + 1) as u32;
    }
    let total_users = rows.iter().map(|r| r.raw_count).sum();
    Ok(FlowTable {
        destination_region_id: destination.to_string(),
        rows,
        total_users,
        undetermined,
        excluded_zero_population: excluded,
    })
}

/// One origin's movement between the baseline and event rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub origin_region_id: String,
    pub share_baseline: f64,
    pub share_event: f64,
    pub share_delta: f64,
    pub rank_baseline: u32,
    pub rank_event: u32,
}

/// Baseline-vs-event comparison for one destination.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowComparison {
    pub destination_region_id: String,
    /// Sorted by event rank; holds the union of both top-k sets.
    pub rows: Vec<ComparisonRow>,
}

fn ranks_over(origins: &BTreeSet<String>, table: &FlowTable) -> BTreeMap<String, (f64, u32)> {
    let mut entries: Vec<(&String, f64)> = origins
        .iter()
        .map(|o| (o, table.share_of(o)))
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    entries
        .into_iter()
        .enumerate()
        .map(|(i, (origin, share))| (origin.clone(), (share, (i + 1) as u32)))
        .collect()
}

/// Aligns both tables on the union of their origins (missing origin →
/// share 0), recomputes ranks over the aligned set, and returns every
/// origin ranked in either table's top k.
pub fn compare_flows(baseline: &FlowTable, event: &FlowTable, top_k: usize) -> Result<FlowComparison> {
    if baseline.destination_region_id != event.destination_region_id {
        return Err(Error::InvalidArgument(format!(
            "destination mismatch: baseline {} vs event {}",
            baseline.destination_region_id, event.destination_region_id
        )));
    }
    let origins: BTreeSet<String> = baseline
        .rows
        .iter()
        .chain(event.rows.iter())
        .map(|r| r.origin_region_id.clone())
        .collect();
    let base_ranks = ranks_over(&origins, baseline);
    let event_ranks = ranks_over(&origins, event);
    let mut rows: Vec<ComparisonRow> = origins
        .iter()
        .filter(|origin| {
            base_ranks[*origin].1 as usize <= top_k || event_ranks[*origin].1 as usize <= top_k
        })
        .map(|origin| {
            let (share_baseline, rank_baseline) = base_ranks[origin];
            let (share_event, rank_event) = event_ranks[origin];
            ComparisonRow {
                origin_region_id: origin.clone(),
                share_baseline,
                share_event,
                share_delta: share_event - share_baseline,
                rank_baseline,
                rank_event,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.rank_event);
    Ok(FlowComparison {
        destination_region_id: baseline.destination_region_id.clone(),
        rows,
    })
}

pub fn write_flow_csv<W: Write>(table: &FlowTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing flow table: {e}"));
    w.write_record(["destination", "origin", "raw_count", "weight", "share", "rank"])
        .map_err(err)?;
    for row in &table.rows {
        w.write_record([
            table.destination_region_id.as_str(),
            row.origin_region_id.as_str(),
            &row.raw_count.to_string(),
            &row.weight.to_string(),
            &row.share.to_string(),
            &row.rank.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("flushing flow table: {e}")))
}

pub fn write_comparison_csv<W: Write>(cmp: &FlowComparison, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing flow comparison: {e}"));
    w.write_record([
        "destination",
        "origin",
        "share_baseline",
        "share_event",
        "share_delta",
        "rank_baseline",
        "rank_event",
    ])
    .map_err(err)?;
    for row in &cmp.rows {
        w.write_record([
            cmp.destination_region_id.as_str(),
            row.origin_region_id.as_str(),
            &row.share_baseline.to_string(),
            &row.share_event.to_string(),
            &row.share_delta.to_string(),
            &row.rank_baseline.to_string(),
            &row.rank_event.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("flushing flow comparison: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LatLon;
    use std::collections::BTreeMap as Map;

    fn region(id: &str, population: u64) -> Region {
        Region::new(
            id,
            id,
            vec![vec![
                LatLon::new(0.0, 0.0),
                LatLon::new(0.0, 1.0),
                LatLon::new(1.0, 1.0),
            ]],
            population,
            None,
        )
        .unwrap()
    }

    fn estimate(user: &str, home: Option<&str>) -> HomeEstimate {
        HomeEstimate {
            user_id: user.into(),
            region_id: home.map(String::from),
            zonal_mass: Map::new(),
            evidence_count: 10,
        }
    }

    fn estimates_with_counts(counts: &[(&str, usize)]) -> Vec<HomeEstimate> {
        let mut out = Vec::new();
        for (origin, n) in counts {
            for i in 0..*n {
                out.push(estimate(&format!("{origin}-{i}"), Some(origin)));
            }
        }
        out
    }

    #[test]
    fn weighting_example() {
        // counts {A:100, B:50}, populations {A:1000, B:100} → weights
        // {0.1, 0.5} → shares {1/6, 5/6}.
        let estimates = estimates_with_counts(&[("A", 100), ("B", 50)]);
        let populations = vec![region("A", 1000), region("B", 100)];
        let table = build_flow_table(&estimates, "D", &populations).unwrap();
        assert_eq!(table.total_users, 150);
        let a = table.rows.iter().find(|r| r.origin_region_id == "A").unwrap();
        let b = table.rows.iter().find(|r| r.origin_region_id == "B").unwrap();
        assert!((a.weight - 0.1).abs() < 1e-15);
        assert!((b.weight - 0.5).abs() < 1e-15);
        assert!((a.share - 1.0 / 6.0).abs() < 1e-12);
        assert!((b.share - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(b.rank, 1);
        assert_eq!(a.rank, 2);
        let sum: f64 = table.rows.iter().map(|r| r.share).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_origin_and_equal_per_capita() {
        let estimates = estimates_with_counts(&[("A", 7)]);
        let populations = vec![region("A", 100)];
        let table = build_flow_table(&estimates, "D", &populations).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!((table.rows[0].share - 1.0).abs() < 1e-15);

        // Equal per-capita counts → equal shares.
        let estimates = estimates_with_counts(&[("A", 10), ("B", 100)]);
        let populations = vec![region("A", 1000), region("B", 10_000)];
        let table = build_flow_table(&estimates, "D", &populations).unwrap();
        for row in &table.rows {
            assert!((row.share - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn undetermined_excluded_and_counted() {
        let mut estimates = estimates_with_counts(&[("A", 3)]);
        estimates.push(estimate("u-x", None));
        estimates.push(estimate("u-y", None));
        let populations = vec![region("A", 10)];
        let table = build_flow_table(&estimates, "D", &populations).unwrap();
        assert_eq!(table.undetermined, 2);
        assert_eq!(table.total_users, 3);
    }

    #[test]
    fn zero_population_origins_reported_and_empty_table_errors() {
        let estimates = estimates_with_counts(&[("A", 3), ("B", 4)]);
        let populations = vec![region("A", 10), region("B", 0)];
        let table = build_flow_table(&estimates, "D", &populations).unwrap();
        assert_eq!(table.excluded_zero_population, vec!["B".to_string()]);

        let populations = vec![region("A", 0), region("B", 0)];
        let err = build_flow_table(&estimates, "D", &populations).unwrap_err();
        assert!(matches!(err, Error::EmptyFlowTable(_)));
    }

    #[test]
    fn share_invariance_under_common_population_scaling() {
        let estimates = estimates_with_counts(&[("A", 13), ("B", 40), ("C", 7)]);
        let base_pops = [("A", 120u64), ("B", 3_000), ("C", 55)];
        let table1 = build_flow_table(
            &estimates,
            "D",
            &base_pops.map(|(id, p)| region(id, p)),
        )
        .unwrap();
        let table2 = build_flow_table(
            &estimates,
            "D",
            &base_pops.map(|(id, p)| region(id, p * 17)),
        )
        .unwrap();
        for (a, b) in table1.rows.iter().zip(&table2.rows) {
            assert_eq!(a.origin_region_id, b.origin_region_id);
            assert!((a.share - b.share).abs() < 1e-12);
            assert_eq!(a.rank, b.rank);
        }
    }

    #[test]
    fn top_rank_stable_under_count_scaling() {
        let populations = vec![region("A", 100), region("B", 1000), region("C", 10)];
        let t1 = build_flow_table(
            &estimates_with_counts(&[("A", 5), ("B", 20), ("C", 2)]),
            "D",
            &populations,
        )
        .unwrap();
        let t2 = build_flow_table(
            &estimates_with_counts(&[("A", 15), ("B", 60), ("C", 6)]),
            "D",
            &populations,
        )
        .unwrap();
        assert_eq!(t1.rows[0].origin_region_id, t2.rows[0].origin_region_id);
    }

    #[test]
    fn comparison_identity_and_new_origin() {
        let populations = vec![region("A", 100), region("B", 100), region("C", 100)];
        let table = build_flow_table(
            &estimates_with_counts(&[("A", 5), ("B", 3)]),
            "D",
            &populations,
        )
        .unwrap();
        let cmp = compare_flows(&table, &table, 10).unwrap();
        for row in &cmp.rows {
            assert_eq!(row.share_delta, 0.0);
            assert_eq!(row.rank_baseline, row.rank_event);
        }

        let event = build_flow_table(
            &estimates_with_counts(&[("A", 5), ("B", 3), ("C", 9)]),
            "D",
            &populations,
        )
        .unwrap();
        let cmp = compare_flows(&table, &event, 10).unwrap();
        let c = cmp.rows.iter().find(|r| r.origin_region_id == "C").unwrap();
        assert_eq!(c.share_baseline, 0.0);
        assert!(c.share_delta > 0.0);

        let other = build_flow_table(
            &estimates_with_counts(&[("A", 1)]),
            "E",
            &populations,
        )
        .unwrap();
        assert!(compare_flows(&table, &other, 10).is_err());
    }
}

//! Hybrid query execution over the correlation index, plus the two baseline
//! executors the bench harness compares against.
//!
//! A range query on the target column runs in four steps: collect the inlier
//! host buckets of every overlapping target bucket and merge their key
//! ranges; pull every stash entry of the same target buckets; drop stash
//! entries whose key already falls inside a merged scan range (the scans are
//! bucket-wide, so those rows would surface twice); then range-scan with the
//! value predicate and point-look-up what is left, pruning fetched rows that
//! miss the filter. Both arms resolve at bucket granularity, so wider
//! queries organically absorb more of the stash into the scans.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::correlation::{buckets_overlapping, CellGrid, TargetBucket};
use crate::error::{Error, Result};
use crate::host::{BucketId, HostIndex};
use crate::index::CortexIndex;
use crate::store::{ClusteredKey, Table};

/// Half-open value filter `[lo, hi)` on one column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeQuery {
    pub column: String,
    pub lo: i64,
    pub hi: i64,
}

/// Work counters for one executed query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionStats {
    /// Records touched by range scans (matching or not).
    pub range_records_touched: u64,
    /// Point lookups issued for stashed rows.
    pub point_lookups: u64,
    /// Rows returned.
    pub result_size: u64,
    /// Stash entries dropped because a scan range already covered their key.
    pub dedup_removed: u64,
    pub elapsed_nanos: u64,
}

/// Resolved execution plan: which key ranges to scan, which keys to fetch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryPlan {
    pub scan_ranges: Vec<(ClusteredKey, ClusteredKey)>,
    pub lookup_keys: Vec<ClusteredKey>,
    pub dedup_removed: u64,
}

/// Merges key ranges, unifying overlapping or back-to-back neighbors.
fn merge_key_ranges(mut ranges: Vec<(ClusteredKey, ClusteredKey)>) -> Vec<(ClusteredKey, ClusteredKey)> {
    ranges.sort_unstable();
    let mut merged: Vec<(ClusteredKey, ClusteredKey)> = Vec::with_capacity(ranges.len());
    for (lo, hi) in ranges {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

fn check_target_column(index: &CortexIndex, query: &RangeQuery) -> Result<()> {
    if query.column != index.target_column_name() {
        return Err(Error::BadConfig(format!(
            "index answers range queries on '{}', not '{}'",
            index.target_column_name(),
            query.column
        )));
    }
    Ok(())
}

/// Plans a query without running it.
pub fn plan(index: &CortexIndex, query: &RangeQuery) -> Result<QueryPlan> {
    check_target_column(index, query)?;
    if query.lo >= query.hi {
        return Ok(QueryPlan::default());
    }
    let t_range = buckets_overlapping(index.targets(), query.lo, query.hi);

    let mut ranges = Vec::new();
    for h in index.assignment().inlier_hosts_for(t_range.clone()) {
        let hb = index.host().bucket(h);
        ranges.push((hb.key_lo, hb.key_hi));
    }
    let scan_ranges = merge_key_ranges(ranges);

    let entries = index.assignment().stash_entries_for(t_range);
    let mut lookup_keys: Vec<ClusteredKey> = entries.iter().map(|e| e.key).collect();
    lookup_keys.sort_unstable();
    let before = lookup_keys.len();

    // One sorted sweep drops keys the scans will produce anyway.
    let mut keep = Vec::with_capacity(lookup_keys.len());
    let mut r = 0;
    for key in lookup_keys {
        while r < scan_ranges.len() && scan_ranges[r].1 <= key {
            r += 1;
        }
        let covered = r < scan_ranges.len() && scan_ranges[r].0 <= key;
        if !covered {
            keep.push(key);
        }
    }
    let dedup_removed = (before - keep.len()) as u64;
    Ok(QueryPlan { scan_ranges, lookup_keys: keep, dedup_removed })
}

/// Executes a query; returns matching row ids (sorted) plus work counters.
pub fn execute(index: &CortexIndex, query: &RangeQuery) -> Result<(Vec<usize>, ExecutionStats)> {
    let plan = plan(index, query)?;
    let start = Instant::now();
    let mut stats = ExecutionStats { dedup_removed: plan.dedup_removed, ..Default::default() };
    let mut rows = Vec::new();
    let predicate = Some((index.target_col(), query.lo, query.hi));
    for &(lo, hi) in &plan.scan_ranges {
        let (matched, touched) = index.table().range_scan(lo, hi, predicate);
        stats.range_records_touched += touched;
        rows.extend(matched);
    }
    for &key in &plan.lookup_keys {
        stats.point_lookups += 1;
        let row = index
            .table()
            .point_lookup(key)
            .expect("stashed key must resolve to a live row");
        let v = index.table().value(index.target_col(), row);
        if query.lo <= v && v < query.hi {
            rows.push(row);
        }
    }
    rows.sort_unstable();
    debug_assert!(rows.windows(2).all(|w| w[0] < w[1]), "executor produced duplicate rows");
    stats.result_size = rows.len() as u64;
    stats.elapsed_nanos = start.elapsed().as_nanos() as u64;
    Ok((rows, stats))
}

/// Brute-force oracle: scans the whole table. Works on any column.
pub fn full_scan(table: &Table, query: &RangeQuery) -> Result<(Vec<usize>, ExecutionStats)> {
    let col = table.column_index(&query.column)?;
    let start = Instant::now();
    let n = table.row_count();
    let mut rows = Vec::new();
    if query.lo < query.hi {
        for r in 0..n {
            let v = table.value(col, r);
            if query.lo <= v && v < query.hi {
                rows.push(r);
            }
        }
    }
    let stats = ExecutionStats {
        range_records_touched: n as u64,
        result_size: rows.len() as u64,
        elapsed_nanos: start.elapsed().as_nanos() as u64,
        ..Default::default()
    };
    Ok((rows, stats))
}

/// Dense secondary index baseline: every row as a sorted `(value, key)`
/// entry, answered purely by point lookups.
#[derive(Debug)]
pub struct SecondaryIndex {
    column: usize,
    entries: Vec<(i64, ClusteredKey)>,
}

impl SecondaryIndex {
    pub fn build(table: &Table, column: &str) -> Result<SecondaryIndex> {
        let column = table.column_index(column)?;
        let mut entries: Vec<(i64, ClusteredKey)> = (0..table.row_count())
            .map(|r| (table.value(column, r), table.key_at(r)))
            .collect();
        entries.sort_unstable();
        Ok(SecondaryIndex { column, entries })
    }

    pub fn entry_count(&self) -> u64 {
        self.entries.len() as u64
    }

    /// 16 bytes per entry: value plus key.
    pub fn size_bytes(&self) -> u64 {
        self.entries.len() as u64 * 16
    }

    pub fn execute(&self, table: &Table, query: &RangeQuery) -> Result<(Vec<usize>, ExecutionStats)> {
        let col = table.column_index(&query.column)?;
        if col != self.column {
            return Err(Error::BadConfig(format!(
                "secondary index covers column {}, not '{}'",
                self.column, query.column
            )));
        }
        let start = Instant::now();
        let mut stats = ExecutionStats::default();
        let mut rows = Vec::new();
        if query.lo < query.hi {
            let from = self.entries.partition_point(|&(v, _)| v < query.lo);
            let to = self.entries.partition_point(|&(v, _)| v < query.hi);
            for &(_, key) in &self.entries[from..to] {
                stats.point_lookups += 1;
                rows.push(table.point_lookup(key).expect("secondary entry must resolve"));
            }
        }
        rows.sort_unstable();
        stats.result_size = rows.len() as u64;
        stats.elapsed_nanos = start.elapsed().as_nanos() as u64;
        Ok((rows, stats))
    }
}

/// Correlation-map baseline: per target bucket, every host bucket holding at
/// least one of its rows. Queries scan all of them — no stash, no lookups.
#[derive(Debug)]
pub struct CorrelationMap {
    targets: Vec<TargetBucket>,
    hosts_by_target: Vec<Vec<BucketId>>,
}

impl CorrelationMap {
    pub fn build(grid: &CellGrid, targets: &[TargetBucket]) -> CorrelationMap {
        let mut hosts_by_target: Vec<Vec<BucketId>> = vec![Vec::new(); targets.len()];
        for &(h, t) in grid.cells.keys() {
            hosts_by_target[t].push(h);
        }
        CorrelationMap { targets: targets.to_vec(), hosts_by_target }
    }

    /// 4 bytes per host-list entry.
    pub fn size_bytes(&self) -> u64 {
        self.hosts_by_target.iter().map(|v| v.len() as u64 * 4).sum()
    }

    pub fn execute(
        &self,
        table: &Table,
        host: &HostIndex,
        target_col: usize,
        query: &RangeQuery,
    ) -> Result<(Vec<usize>, ExecutionStats)> {
        let col = table.column_index(&query.column)?;
        if col != target_col {
            return Err(Error::BadConfig(format!(
                "correlation map covers column {target_col}, not '{}'",
                query.column
            )));
        }
        let start = Instant::now();
        let mut stats = ExecutionStats::default();
        let mut rows = Vec::new();
        if query.lo < query.hi {
            let t_range = buckets_overlapping(&self.targets, query.lo, query.hi);
            let mut ranges = Vec::new();
            let mut seen = std::collections::BTreeSet::new();
            for t in t_range {
                for &h in &self.hosts_by_target[t] {
                    if seen.insert(h) {
                        let hb = host.bucket(h);
                        ranges.push((hb.key_lo, hb.key_hi));
                    }
                }
            }
            for (lo, hi) in merge_key_ranges(ranges) {
                let (matched, touched) = table.range_scan(lo, hi, Some((col, query.lo, query.hi)));
                stats.range_records_touched += touched;
                rows.extend(matched);
            }
        }
        rows.sort_unstable();
        stats.result_size = rows.len() as u64;
        stats.elapsed_nanos = start.elapsed().as_nanos() as u64;
        Ok((rows, stats))
    }
}

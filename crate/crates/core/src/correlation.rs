//! Target buckets, the (target × host) cell grid, and the materialized
//! inlier/outlier assignment.
//!
//! The correlated column is partitioned into *target buckets*. Crossing them
//! with the host index's buckets partitions rows into *cells*: cell `(t, h)`
//! holds the rows whose target value falls in bucket `t` and whose key lives
//! in host bucket `h`. The grid stores nonempty cell counts plus per-host
//! totals — everything the cost model needs.
//!
//! An assignment labels each nonempty cell inlier or outlier. Inlier cells
//! are answered by range-scanning their host bucket, so per target bucket we
//! keep just the list of inlier host buckets. Outlier cells are answered by
//! point lookups, so their individual rows go to the *stash*: per target
//! bucket, `(value, key)` pairs sorted by value.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::host::{BucketId, HostIndex};
use crate::store::{ClusteredKey, Table};

/// Value slab `[lo, hi)` of one target bucket; a bucket's id is its position
/// in the (sorted, contiguous) bucket list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TargetBucket {
    pub lo: i64,
    pub hi: i64,
}

/// Cell address in storage order: (host bucket, target bucket). Keying by
/// host first makes bucket-level unwinding a contiguous map range.
pub type CellKey = (BucketId, usize);

/// Partitions `values` into at most `max_buckets` equi-depth buckets. A
/// categorical column with few enough distinct codes gets one bucket per
/// code instead, so categorical predicates align with bucket boundaries.
pub fn build_target_buckets(
    values: &[i64],
    max_buckets: usize,
    categorical: bool,
) -> Result<Vec<TargetBucket>> {
    if max_buckets == 0 {
        return Err(Error::BadConfig("target bucket count must be positive".into()));
    }
    if values.is_empty() {
        return Ok(vec![TargetBucket { lo: i64::MIN, hi: i64::MAX }]);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    if categorical {
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() <= max_buckets {
            return Ok(distinct
                .into_iter()
                .map(|v| TargetBucket { lo: v, hi: v.saturating_add(1) })
                .collect());
        }
    }
    let edges = crate::host::equi_depth_edges(&sorted, max_buckets.min(sorted.len()));
    Ok(edges.windows(2).map(|w| TargetBucket { lo: w[0], hi: w[1] }).collect())
}

/// Target bucket containing `v`, clamping out-of-range values into the
/// extreme buckets (mirrors how the host index clamps).
pub fn bucket_of_value(buckets: &[TargetBucket], v: i64) -> usize {
    let idx = buckets.partition_point(|b| b.lo <= v);
    idx.saturating_sub(1).min(buckets.len() - 1)
}

/// Target buckets a value range `[lo, hi)` resolves to; empty range → empty.
/// Out-of-domain ends clamp into the extreme buckets, which is exactly where
/// out-of-domain row values live.
pub fn buckets_overlapping(buckets: &[TargetBucket], lo: i64, hi: i64) -> Range<usize> {
    if lo >= hi {
        return 0..0;
    }
    let first = bucket_of_value(buckets, lo);
    let last = bucket_of_value(buckets, hi - 1);
    first..last + 1
}

/// Nonempty cell counts plus per-host-bucket totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellGrid {
    /// (host, target) → row count; only nonempty cells appear.
    pub cells: BTreeMap<CellKey, u64>,
    /// Alive host buckets → row count (empty buckets included, at 0).
    pub host_counts: BTreeMap<BucketId, u64>,
    pub n_rows: u64,
}

impl CellGrid {
    /// One pass over the table, walking host buckets in key order.
    pub fn build(
        table: &Table,
        host: &HostIndex,
        targets: &[TargetBucket],
        target_col: usize,
    ) -> CellGrid {
        let mut grid = CellGrid::default();
        for bucket in host.buckets() {
            grid.host_counts.insert(bucket.id, bucket.count);
            for row in table.rows_in_key_range(bucket.key_lo, bucket.key_hi) {
                let t = bucket_of_value(targets, table.value(target_col, row));
                *grid.cells.entry((bucket.id, t)).or_insert(0) += 1;
                grid.n_rows += 1;
            }
        }
        grid
    }

    pub fn host_count(&self, h: BucketId) -> u64 {
        self.host_counts.get(&h).copied().unwrap_or(0)
    }

    pub fn cell_count(&self, h: BucketId, t: usize) -> u64 {
        self.cells.get(&(h, t)).copied().unwrap_or(0)
    }

    /// Nonempty cells of one host bucket as (target, count).
    pub fn cells_of_host(&self, h: BucketId) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.cells.range((h, 0)..(BucketId(h.0 + 1), 0)).map(|(&(_, t), &c)| (t, c))
    }

    /// Number of distinct target buckets present in one host bucket.
    pub fn distinct_targets_of_host(&self, h: BucketId) -> u64 {
        self.cells_of_host(h).count() as u64
    }
}

/// One stashed row: target value plus clustered key, ordered by value so
/// range queries can binary-search the stash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct StashEntry {
    pub value: i64,
    pub key: ClusteredKey,
}

/// Materialized assignment: which cells are outliers, plus the two query-time
/// structures (per-target inlier host lists and the stash).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutlierAssignment {
    pub outliers: BTreeSet<CellKey>,
    /// Per target bucket: host buckets answered by range scan, sorted by id.
    pub inlier_hosts: Vec<Vec<BucketId>>,
    /// Per target bucket: stashed rows sorted by (value, key).
    pub stash: Vec<Vec<StashEntry>>,
}

impl OutlierAssignment {
    pub fn stash_len(&self) -> u64 {
        self.stash.iter().map(|s| s.len() as u64).sum()
    }

    /// Stash footprint: value + key per entry.
    pub fn stash_bytes(&self) -> u64 {
        self.stash_len() * 16
    }

    /// Inlier-map footprint: one bucket id per (target, host) pair.
    pub fn map_bytes(&self) -> u64 {
        self.inlier_hosts.iter().map(|v| v.len() as u64 * 4).sum()
    }

    /// Union of inlier host buckets across a target-bucket range.
    pub fn inlier_hosts_for(&self, t_range: Range<usize>) -> BTreeSet<BucketId> {
        let mut out = BTreeSet::new();
        for t in t_range {
            out.extend(self.inlier_hosts[t].iter().copied());
        }
        out
    }

    /// Every stashed entry of the touched target buckets. The stash resolves
    /// at bucket granularity: a bucket the query merely grazes still
    /// contributes all of its entries, and the executor prunes non-matching
    /// rows after fetching them.
    pub fn stash_entries_for(&self, t_range: Range<usize>) -> Vec<StashEntry> {
        let mut out = Vec::new();
        for t in t_range {
            out.extend_from_slice(&self.stash[t]);
        }
        out
    }

    /// JSON export: per target bucket, its inlier hosts and stash size.
    pub fn export_json(&self, targets: &[TargetBucket]) -> serde_json::Value {
        let per_target: Vec<serde_json::Value> = targets
            .iter()
            .enumerate()
            .map(|(t, tb)| {
                serde_json::json!({
                    "target": t,
                    "lo": tb.lo,
                    "hi": tb.hi,
                    "inlier_hosts": self.inlier_hosts[t].iter().map(|b| b.0).collect::<Vec<_>>(),
                    "stash_rows": self.stash[t].len(),
                })
            })
            .collect();
        serde_json::json!({
            "target_buckets": targets.len(),
            "outlier_cells": self.outliers.len(),
            "stash_rows": self.stash_len(),
            "assignments": per_target,
        })
    }
}

/// Builds the query-time structures for a chosen outlier set: inlier host
/// lists come straight from the grid, stashed rows from scanning the outlier
/// cells' host buckets.
pub fn materialize_assignment(
    table: &Table,
    host: &HostIndex,
    targets: &[TargetBucket],
    target_col: usize,
    grid: &CellGrid,
    outliers: &BTreeSet<CellKey>,
) -> OutlierAssignment {
    let mut inlier_hosts: Vec<Vec<BucketId>> = vec![Vec::new(); targets.len()];
    let mut stash: Vec<Vec<StashEntry>> = vec![Vec::new(); targets.len()];

    let mut scan_hosts: BTreeSet<BucketId> = BTreeSet::new();
    for (&(h, t), _) in &grid.cells {
        if outliers.contains(&(h, t)) {
            scan_hosts.insert(h);
        } else {
            inlier_hosts[t].push(h);
        }
    }
    for h in scan_hosts {
        let bucket = host.bucket(h);
        for row in table.rows_in_key_range(bucket.key_lo, bucket.key_hi) {
            let value = table.value(target_col, row);
            let t = bucket_of_value(targets, value);
            if outliers.contains(&(h, t)) {
                stash[t].push(StashEntry { value, key: table.key_at(row) });
            }
        }
    }
    for s in &mut stash {
        s.sort_unstable();
    }
    OutlierAssignment { outliers: outliers.clone(), inlier_hosts, stash }
}

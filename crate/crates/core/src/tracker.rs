//! Incremental maintenance of the correlation index under inserts and
//! deletes.
//!
//! A batch flows through four phases:
//!
//!   1. The host index absorbs the rows (allocating keys, possibly splitting
//!      or merging buckets) and reports placements plus structural events.
//!   2. Bookkeeping for buckets retired by events is purged wholesale —
//!      their grid cells, inlier-list entries and stash rows (located by the
//!      retired bucket's key range, which stays addressable after death).
//!   3. Surviving placements update cell/host counts in place; newborn
//!      buckets are rescanned from the table and their cells classified
//!      fresh under the updated cost parameters.
//!   4. Every cell of every touched host is re-tested against the threshold
//!      rule, since the host count on the comparison's right side changed.
//!      Flips move rows between bucket residency and the stash.
//!
//! Untouched hosts are *not* re-tested even though the global `P0/N` factor
//! drifts with every batch; [`CortexIndex::revalidate`] exists to settle that
//! drift by rebuilding the grid and re-deciding every cell from scratch.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::correlation::{
    bucket_of_value, materialize_assignment, CellGrid, CellKey, StashEntry, TargetBucket,
};
use crate::error::{Error, Result};
use crate::host::{BucketId, StructuralEvent};
use crate::index::CortexIndex;
use crate::stashing::{self, CostParams};
use crate::store::ClusteredKey;

/// Live grid statistics the maintenance path keeps current.
#[derive(Debug)]
pub struct TrackerState {
    pub grid: CellGrid,
    /// Scan overhead of the all-inlier assignment, `P0`, kept in lockstep
    /// with the grid (recomputed per batch; it is O(#cells) to derive).
    pub p0: u64,
}

impl TrackerState {
    pub fn new(grid: CellGrid) -> TrackerState {
        let p0 = stashing::initial_scan_overhead(&grid);
        TrackerState { grid, p0 }
    }

    pub fn params(&self, alpha: f64, beta: f64) -> CostParams {
        CostParams { alpha, beta, n_rows: self.grid.n_rows, p0: self.p0 }
    }
}

/// What one maintenance batch did. Stash counts include rows moved by
/// structural events (a split re-homes its rows, which shows up as removals
/// plus additions); flips count only cells that changed class while keeping
/// their identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ChangeReport {
    pub rows: u64,
    pub flips_to_outlier: u64,
    pub flips_to_inlier: u64,
    pub stash_added: u64,
    pub stash_removed: u64,
    pub splits: u64,
    pub merges: u64,
    /// Stash size after the batch.
    pub stash_rows: u64,
}

/// Prior classification of a cell, before a batch re-test.
#[derive(Clone, Copy, PartialEq)]
enum Prior {
    Absent,
    Inlier,
    Outlier,
}

fn insert_sorted(v: &mut Vec<BucketId>, id: BucketId) {
    if let Err(i) = v.binary_search(&id) {
        v.insert(i, id);
    }
}

fn remove_sorted(v: &mut Vec<BucketId>, id: BucketId) -> bool {
    match v.binary_search(&id) {
        Ok(i) => {
            v.remove(i);
            true
        }
        Err(_) => false,
    }
}

fn insert_entries(stash_t: &mut Vec<StashEntry>, mut entries: Vec<StashEntry>) {
    stash_t.append(&mut entries);
    stash_t.sort_unstable();
}

fn remove_entry(stash_t: &mut Vec<StashEntry>, entry: &StashEntry) -> bool {
    match stash_t.binary_search(entry) {
        Ok(i) => {
            stash_t.remove(i);
            true
        }
        Err(_) => false,
    }
}

/// Drops every stash entry whose key falls in `[lo, hi)`; returns how many.
fn purge_key_range(stash_t: &mut Vec<StashEntry>, lo: ClusteredKey, hi: ClusteredKey) -> u64 {
    let before = stash_t.len();
    stash_t.retain(|e| !(lo <= e.key && e.key < hi));
    (before - stash_t.len()) as u64
}

/// Splits a batch's events into buckets that died holding state and buckets
/// alive at the end. A bucket born and retired within the same batch never
/// materializes any bookkeeping, so it lands in neither set.
fn settle_events(events: &[StructuralEvent]) -> (BTreeSet<BucketId>, BTreeSet<BucketId>) {
    let mut dead = BTreeSet::new();
    let mut born = BTreeSet::new();
    for event in events {
        for &o in event.old_ids() {
            if !born.remove(&o) {
                dead.insert(o);
            }
        }
        for &n in event.new_ids() {
            born.insert(n);
        }
    }
    (dead, born)
}

impl CortexIndex {
    /// Encodes raw string rows (full schema order) for [`Self::insert_batch`].
    pub fn encode_rows(&mut self, raw: &[Vec<String>]) -> Result<Vec<Vec<i64>>> {
        raw.iter()
            .map(|r| {
                let fields: Vec<&str> = r.iter().map(String::as_str).collect();
                self.table.encode_row_for_append(&fields)
            })
            .collect()
    }

    /// Inserts encoded rows and reconciles the index.
    pub fn insert_batch(&mut self, rows: &[Vec<i64>]) -> Result<ChangeReport> {
        let (placements, events) = self.host.apply_insert(&mut self.table, rows)?;
        let mut report = ChangeReport { rows: rows.len() as u64, ..Default::default() };
        count_events(&events, &mut report);
        let (dead, born) = settle_events(&events);
        self.purge_buckets(&dead, &mut report);

        // Incremental tallies for rows that landed in undisturbed buckets.
        // Rows in dead or newborn buckets are covered by the rescan instead
        // (their recorded keys may even be stale after a split rekeyed them).
        let mut pending: BTreeMap<CellKey, Vec<StashEntry>> = BTreeMap::new();
        let mut new_cells: BTreeSet<CellKey> = BTreeSet::new();
        let mut touched: BTreeSet<BucketId> = BTreeSet::new();
        for ((key, b), row) in placements.iter().zip(rows) {
            if dead.contains(b) || born.contains(b) {
                continue;
            }
            let value = row[self.target_col];
            let t = bucket_of_value(&self.targets, value);
            let grid = &mut self.tracker.grid;
            let slot = grid.cells.entry((*b, t)).or_insert(0);
            if *slot == 0 {
                new_cells.insert((*b, t));
            }
            *slot += 1;
            *grid.host_counts.entry(*b).or_insert(0) += 1;
            pending.entry((*b, t)).or_default().push(StashEntry { value, key: *key });
            touched.insert(*b);
        }

        let fresh = self.rescan_buckets(&born);
        self.tracker.grid.n_rows = self.table.row_count() as u64;
        self.tracker.p0 = stashing::initial_scan_overhead(&self.tracker.grid);
        self.install_fresh(fresh, &mut report);
        self.retest_hosts(&touched, &mut pending, &new_cells, &mut report);
        report.stash_rows = self.assignment.stash_len();
        self.debug_verify();
        Ok(report)
    }

    /// Deletes rows by clustered key (duplicates tolerated, unknown keys
    /// rejected atomically) and reconciles the index.
    pub fn delete_batch(&mut self, keys: &[ClusteredKey]) -> Result<ChangeReport> {
        let mut keys = keys.to_vec();
        keys.sort_unstable();
        keys.dedup();

        // Resolve each doomed row's cell before anything moves.
        let mut removals: Vec<(BucketId, usize, StashEntry)> = Vec::with_capacity(keys.len());
        let mut missing: Vec<u64> = Vec::new();
        for &key in &keys {
            match (self.host.bucket_of_key(key), self.table.point_lookup(key)) {
                (Some(b), Some(row)) => {
                    let value = self.table.value(self.target_col, row);
                    let t = bucket_of_value(&self.targets, value);
                    removals.push((b, t, StashEntry { value, key }));
                }
                _ => missing.push(key.0),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingKeys(missing));
        }

        let events = self.host.apply_delete(&mut self.table, &keys)?;
        let mut report = ChangeReport { rows: keys.len() as u64, ..Default::default() };
        count_events(&events, &mut report);
        let (dead, born) = settle_events(&events);
        self.purge_buckets(&dead, &mut report);

        let mut touched: BTreeSet<BucketId> = BTreeSet::new();
        for (b, t, entry) in removals {
            if dead.contains(&b) || born.contains(&b) {
                continue;
            }
            let grid = &mut self.tracker.grid;
            let slot = grid.cells.get_mut(&(b, t)).expect("deleted row's cell must be tallied");
            *slot -= 1;
            let emptied = *slot == 0;
            if emptied {
                grid.cells.remove(&(b, t));
            }
            let hslot = grid.host_counts.get_mut(&b).expect("deleted row's host must be tallied");
            *hslot -= 1;
            if *hslot == 0 {
                grid.host_counts.remove(&b);
            }
            if self.assignment.outliers.contains(&(b, t)) {
                let removed = remove_entry(&mut self.assignment.stash[t], &entry);
                debug_assert!(removed, "stashed row missing its stash entry");
                report.stash_removed += removed as u64;
                if emptied {
                    self.assignment.outliers.remove(&(b, t));
                }
            } else if emptied {
                remove_sorted(&mut self.assignment.inlier_hosts[t], b);
            }
            touched.insert(b);
        }

        let fresh = self.rescan_buckets(&born);
        self.tracker.grid.n_rows = self.table.row_count() as u64;
        self.tracker.p0 = stashing::initial_scan_overhead(&self.tracker.grid);
        self.install_fresh(fresh, &mut report);
        let mut no_pending = BTreeMap::new();
        self.retest_hosts(&touched, &mut no_pending, &BTreeSet::new(), &mut report);
        report.stash_rows = self.assignment.stash_len();
        self.debug_verify();
        Ok(report)
    }

    /// Rebuilds the grid from the table and re-decides every cell under the
    /// current parameters, settling the drift that per-batch touched-host
    /// re-testing leaves behind. Returns how many cells changed class; a
    /// second call right after always returns 0.
    pub fn revalidate(&mut self) -> u64 {
        let grid = CellGrid::build(&self.table, &self.host, &self.targets, self.target_col);
        let p0 = stashing::initial_scan_overhead(&grid);
        let params = CostParams { alpha: self.alpha, beta: self.beta, n_rows: grid.n_rows, p0 };
        let outliers = stashing::assign_by_threshold(&grid, &params);
        let corrections =
            outliers.symmetric_difference(&self.assignment.outliers).count() as u64;
        self.assignment = materialize_assignment(
            &self.table,
            &self.host,
            &self.targets,
            self.target_col,
            &grid,
            &outliers,
        );
        self.tracker = TrackerState { grid, p0 };
        corrections
    }

    /// Median-splits one target bucket. Returns the new boundary, or `None`
    /// when the bucket holds fewer than two distinct values (nothing to
    /// separate). The grid and assignment are rebuilt afterwards.
    pub fn split_target_bucket(&mut self, t: usize) -> Result<Option<i64>> {
        if t >= self.targets.len() {
            return Err(Error::BadConfig(format!(
                "target bucket {t} out of range ({} buckets)",
                self.targets.len()
            )));
        }
        let tb = self.targets[t];
        let mut vals: Vec<i64> = self
            .table
            .column_values(self.target_col)
            .into_iter()
            .filter(|v| tb.lo <= *v && *v < tb.hi)
            .collect();
        if vals.is_empty() {
            return Ok(None);
        }
        vals.sort_unstable();
        let lowest = vals[0];
        let median = vals[vals.len() / 2];
        // The boundary must sit strictly above the lowest value so both
        // halves keep rows; with one distinct value there is no such point.
        let boundary = if median > lowest {
            median
        } else {
            match vals.iter().find(|&&v| v > lowest) {
                Some(&v) => v,
                None => return Ok(None),
            }
        };
        debug_assert!(tb.lo < boundary && boundary < tb.hi);
        self.targets[t] = TargetBucket { lo: tb.lo, hi: boundary };
        self.targets.insert(t + 1, TargetBucket { lo: boundary, hi: tb.hi });
        self.revalidate();
        Ok(Some(boundary))
    }

    /// Splits every target bucket holding more than `ratio ×` the average
    /// row count per bucket (average anchored at call time), repeating until
    /// none remain or the crowded ones are all single-valued. Returns how
    /// many splits happened.
    pub fn maybe_split_crowded_buckets(&mut self, ratio: f64) -> Result<u64> {
        if !(ratio.is_finite() && ratio >= 1.0) {
            return Err(Error::BadConfig(format!("crowding ratio {ratio} must be ≥ 1")));
        }
        let n = self.tracker.grid.n_rows as f64;
        if n == 0.0 {
            return Ok(0);
        }
        let threshold = ratio * n / self.targets.len() as f64;
        let mut splits = 0u64;
        let mut unsplittable: BTreeSet<(i64, i64)> = BTreeSet::new();
        loop {
            let mut counts = vec![0u64; self.targets.len()];
            for (&(_, t), &c) in &self.tracker.grid.cells {
                counts[t] += c;
            }
            let crowded = (0..self.targets.len()).find(|&t| {
                counts[t] as f64 > threshold
                    && !unsplittable.contains(&(self.targets[t].lo, self.targets[t].hi))
            });
            let Some(t) = crowded else { break };
            match self.split_target_bucket(t)? {
                Some(_) => splits += 1,
                None => {
                    unsplittable.insert((self.targets[t].lo, self.targets[t].hi));
                }
            }
        }
        Ok(splits)
    }

    /// Unwinds all bookkeeping held under buckets retired by structural
    /// events. Stash rows are found via the dead bucket's key range — still
    /// addressable after death, and disjoint from every other bucket's.
    fn purge_buckets(&mut self, dead: &BTreeSet<BucketId>, report: &mut ChangeReport) {
        for &d in dead {
            let cells: Vec<usize> = self.tracker.grid.cells_of_host(d).map(|(t, _)| t).collect();
            if cells.is_empty() {
                self.tracker.grid.host_counts.remove(&d);
                continue;
            }
            let hb = self.host.bucket(d);
            for t in cells {
                self.tracker.grid.cells.remove(&(d, t));
                if self.assignment.outliers.remove(&(d, t)) {
                    report.stash_removed +=
                        purge_key_range(&mut self.assignment.stash[t], hb.key_lo, hb.key_hi);
                } else {
                    remove_sorted(&mut self.assignment.inlier_hosts[t], d);
                }
            }
            self.tracker.grid.host_counts.remove(&d);
        }
    }

    /// Tallies newborn buckets from the table. Returns each new cell's rows
    /// for classification once the global parameters are updated.
    fn rescan_buckets(&mut self, born: &BTreeSet<BucketId>) -> BTreeMap<CellKey, Vec<StashEntry>> {
        let mut fresh: BTreeMap<CellKey, Vec<StashEntry>> = BTreeMap::new();
        for &b in born {
            let hb = self.host.bucket(b);
            let (rows, _) = self.table.range_scan(hb.key_lo, hb.key_hi, None);
            debug_assert_eq!(rows.len() as u64, hb.count, "rescan of bucket {b:?} disagrees");
            if hb.count > 0 {
                self.tracker.grid.host_counts.insert(b, hb.count);
            }
            for r in rows {
                let value = self.table.value(self.target_col, r);
                let t = bucket_of_value(&self.targets, value);
                *self.tracker.grid.cells.entry((b, t)).or_insert(0) += 1;
                fresh.entry((b, t)).or_default().push(StashEntry { value, key: self.table.key_at(r) });
            }
        }
        fresh
    }

    /// Classifies cells of newborn buckets under the current parameters.
    fn install_fresh(
        &mut self,
        fresh: BTreeMap<CellKey, Vec<StashEntry>>,
        report: &mut ChangeReport,
    ) {
        let params = self.params();
        for ((h, t), entries) in fresh {
            let count = self.tracker.grid.cell_count(h, t);
            debug_assert_eq!(count, entries.len() as u64);
            if params.is_outlier(count, self.tracker.grid.host_count(h)) {
                self.assignment.outliers.insert((h, t));
                report.stash_added += entries.len() as u64;
                insert_entries(&mut self.assignment.stash[t], entries);
            } else {
                insert_sorted(&mut self.assignment.inlier_hosts[t], h);
            }
        }
    }

    /// Re-tests every cell of every touched host. `pending` holds the
    /// batch's new rows per cell, consumed by whichever arm needs them.
    fn retest_hosts(
        &mut self,
        touched: &BTreeSet<BucketId>,
        pending: &mut BTreeMap<CellKey, Vec<StashEntry>>,
        new_cells: &BTreeSet<CellKey>,
        report: &mut ChangeReport,
    ) {
        let params = self.params();
        for &h in touched {
            let cells: Vec<(usize, u64)> = self.tracker.grid.cells_of_host(h).collect();
            let hcount = self.tracker.grid.host_count(h);
            let hb = self.host.bucket(h);
            for (t, count) in cells {
                let now_outlier = params.is_outlier(count, hcount);
                let prior = if new_cells.contains(&(h, t)) {
                    Prior::Absent
                } else if self.assignment.outliers.contains(&(h, t)) {
                    Prior::Outlier
                } else {
                    Prior::Inlier
                };
                match (prior, now_outlier) {
                    (Prior::Absent, true) => {
                        let entries = pending.remove(&(h, t)).expect("new cell has pending rows");
                        debug_assert_eq!(entries.len() as u64, count);
                        self.assignment.outliers.insert((h, t));
                        report.stash_added += entries.len() as u64;
                        insert_entries(&mut self.assignment.stash[t], entries);
                    }
                    (Prior::Absent, false) => {
                        pending.remove(&(h, t));
                        insert_sorted(&mut self.assignment.inlier_hosts[t], h);
                    }
                    (Prior::Inlier, true) => {
                        // The bucket scan picks up the batch's new rows too —
                        // they are already in the table.
                        pending.remove(&(h, t));
                        let tb = self.targets[t];
                        let (rows, _) = self.table.range_scan(
                            hb.key_lo,
                            hb.key_hi,
                            Some((self.target_col, tb.lo, tb.hi)),
                        );
                        debug_assert_eq!(rows.len() as u64, count);
                        let entries: Vec<StashEntry> = rows
                            .into_iter()
                            .map(|r| StashEntry {
                                value: self.table.value(self.target_col, r),
                                key: self.table.key_at(r),
                            })
                            .collect();
                        remove_sorted(&mut self.assignment.inlier_hosts[t], h);
                        self.assignment.outliers.insert((h, t));
                        report.flips_to_outlier += 1;
                        report.stash_added += entries.len() as u64;
                        insert_entries(&mut self.assignment.stash[t], entries);
                    }
                    (Prior::Inlier, false) => {
                        pending.remove(&(h, t));
                    }
                    (Prior::Outlier, true) => {
                        if let Some(entries) = pending.remove(&(h, t)) {
                            report.stash_added += entries.len() as u64;
                            insert_entries(&mut self.assignment.stash[t], entries);
                        }
                    }
                    (Prior::Outlier, false) => {
                        let pend = pending.remove(&(h, t)).map(|e| e.len() as u64).unwrap_or(0);
                        let removed =
                            purge_key_range(&mut self.assignment.stash[t], hb.key_lo, hb.key_hi);
                        debug_assert_eq!(removed + pend, count, "stash out of step with grid");
                        self.assignment.outliers.remove(&(h, t));
                        insert_sorted(&mut self.assignment.inlier_hosts[t], h);
                        report.flips_to_inlier += 1;
                        report.stash_removed += removed;
                    }
                }
            }
        }
        debug_assert!(pending.is_empty(), "pending rows left unclassified: {pending:?}");
    }

    /// Full-consistency audit, active in debug builds (and thus under test).
    #[cfg(debug_assertions)]
    fn debug_verify(&self) {
        let grid = &self.tracker.grid;
        assert_eq!(grid.n_rows, self.table.row_count() as u64);
        let cell_total: u64 = grid.cells.values().sum();
        assert_eq!(cell_total, grid.n_rows, "cell counts must sum to the row count");
        let mut per_host: BTreeMap<BucketId, u64> = BTreeMap::new();
        for (&(h, _), &c) in &grid.cells {
            *per_host.entry(h).or_insert(0) += c;
        }
        assert_eq!(per_host, grid.host_counts, "host tallies out of step with cells");
        for (&h, &c) in &grid.host_counts {
            assert_eq!(c, self.host.bucket(h).count, "grid disagrees with host bucket {h:?}");
        }
        assert_eq!(self.tracker.p0, stashing::initial_scan_overhead(grid));
        for (&(h, t), _) in &grid.cells {
            let o = self.assignment.outliers.contains(&(h, t));
            let i = self.assignment.inlier_hosts[t].binary_search(&h).is_ok();
            assert!(o ^ i, "cell ({h:?}, {t}) must be classified exactly once");
        }
        for &(h, t) in &self.assignment.outliers {
            assert!(grid.cells.contains_key(&(h, t)), "outlier set references empty cell");
        }
        for (t, hosts) in self.assignment.inlier_hosts.iter().enumerate() {
            assert!(hosts.windows(2).all(|w| w[0] < w[1]), "inlier list must stay sorted");
            for &h in hosts {
                assert!(grid.cells.contains_key(&(h, t)), "inlier list references empty cell");
            }
        }
        for (t, entries) in self.assignment.stash.iter().enumerate() {
            assert!(entries.windows(2).all(|w| w[0] < w[1]), "stash must stay strictly sorted");
            let expected: u64 = grid
                .cells
                .iter()
                .filter(|(&(h, tt), _)| tt == t && self.assignment.outliers.contains(&(h, tt)))
                .map(|(_, &c)| c)
                .sum();
            assert_eq!(entries.len() as u64, expected, "stash[{t}] size out of step");
        }
    }

    #[cfg(not(debug_assertions))]
    fn debug_verify(&self) {}
}

fn count_events(events: &[StructuralEvent], report: &mut ChangeReport) {
    for event in events {
        match event {
            StructuralEvent::Split { .. } => report.splits += 1,
            StructuralEvent::Merge { .. } => report.merges += 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::HostIndexConfig;
    use crate::index::{CortexConfig, StashPolicy, TargetBucketSpec};
    use crate::store::{ColumnKind, ColumnMeta, Table};
    use rand::rngs::StdRng;
    use rand::{Rng as _, SeedableRng as _};

    fn make_table(host: Vec<i64>, target: Vec<i64>) -> Table {
        Table::from_encoded(
            vec![
                ColumnMeta { name: "h".into(), kind: ColumnKind::Integer },
                ColumnMeta { name: "t".into(), kind: ColumnKind::Integer },
            ],
            vec![host, target],
            None,
            false,
        )
        .unwrap()
    }

    fn correlated(n: usize, seed: u64) -> (Vec<i64>, Vec<i64>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let host: Vec<i64> = (0..n).map(|_| rng.gen_range(0..10_000)).collect();
        let target: Vec<i64> = host
            .iter()
            .map(|&h| if rng.gen_bool(0.2) { rng.gen_range(0..10_000) } else { h })
            .collect();
        (host, target)
    }

    fn config(variant_1d: bool, max_buckets: usize) -> CortexConfig {
        CortexConfig {
            host: if variant_1d {
                HostIndexConfig::Clustered1d { column: "h".into(), max_buckets }
            } else {
                HostIndexConfig::Octree { columns: vec!["h".into(), "t".into()], max_leaf: 256 }
            },
            target_column: "t".into(),
            target_buckets: TargetBucketSpec::Count(32),
            policy: StashPolicy::Alpha(1.0),
            beta: 10.0,
        }
    }

    /// The incrementally maintained grid must equal one rebuilt from scratch.
    fn assert_grid_fresh(index: &CortexIndex) {
        let fresh = CellGrid::build(
            index.table(),
            index.host(),
            index.targets(),
            index.target_col(),
        );
        assert_eq!(index.grid().cells, fresh.cells);
        assert_eq!(index.grid().host_counts, fresh.host_counts);
        assert_eq!(index.grid().n_rows, fresh.n_rows);
    }

    #[test]
    fn insert_without_events_updates_in_place() {
        let (h, t) = correlated(2000, 10);
        let index = &mut CortexIndex::build(make_table(h, t), &config(true, 20)).unwrap();
        let before = index.table().row_count();
        let report = index.insert_batch(&[vec![42, 42], vec![9_999, 3]]).unwrap();
        assert_eq!(report.rows, 2);
        assert_eq!(index.table().row_count(), before + 2);
        assert_grid_fresh(index);
    }

    #[test]
    fn heavy_inserts_trigger_splits_and_stay_consistent() {
        let (h, t) = correlated(1500, 11);
        let index = &mut CortexIndex::build(make_table(h, t), &config(true, 16)).unwrap();
        let mut rng = StdRng::seed_from_u64(12);
        let mut total_splits = 0;
        for _ in 0..8 {
            let rows: Vec<Vec<i64>> = (0..400)
                .map(|_| {
                    let hv = rng.gen_range(0..10_000);
                    let tv = if rng.gen_bool(0.5) { hv } else { rng.gen_range(0..10_000) };
                    vec![hv, tv]
                })
                .collect();
            let report = index.insert_batch(&rows).unwrap();
            total_splits += report.splits;
            assert_grid_fresh(index);
        }
        assert!(total_splits > 0, "4700 rows into 16 buckets must split");
    }

    #[test]
    fn deletes_trigger_merges_and_stay_consistent() {
        let (h, t) = correlated(4000, 13);
        let index = &mut CortexIndex::build(make_table(h, t), &config(true, 32)).unwrap();
        let mut rng = StdRng::seed_from_u64(14);
        let mut total_merges = 0;
        for _ in 0..6 {
            let keys: Vec<ClusteredKey> = {
                let table = index.table();
                let mut picks: Vec<usize> =
                    (0..600).map(|_| rng.gen_range(0..table.row_count())).collect();
                picks.sort_unstable();
                picks.dedup();
                picks.iter().map(|&r| table.key_at(r)).collect()
            };
            let report = index.delete_batch(&keys).unwrap();
            total_merges += report.merges;
            assert_grid_fresh(index);
        }
        assert!(total_merges > 0, "deleting most rows must merge buckets");
    }

    #[test]
    fn octree_churn_stays_consistent() {
        let (h, t) = correlated(1200, 15);
        let index = &mut CortexIndex::build(make_table(h, t), &config(false, 0)).unwrap();
        let mut rng = StdRng::seed_from_u64(16);
        for _ in 0..5 {
            let rows: Vec<Vec<i64>> = (0..300)
                .map(|_| vec![rng.gen_range(0..10_000), rng.gen_range(0..10_000)])
                .collect();
            index.insert_batch(&rows).unwrap();
            let keys: Vec<ClusteredKey> = {
                let table = index.table();
                let mut picks: Vec<usize> =
                    (0..100).map(|_| rng.gen_range(0..table.row_count())).collect();
                picks.sort_unstable();
                picks.dedup();
                picks.iter().map(|&r| table.key_at(r)).collect()
            };
            index.delete_batch(&keys).unwrap();
            assert_grid_fresh(index);
        }
    }

    #[test]
    fn revalidate_settles_and_is_idempotent() {
        let (h, t) = correlated(3000, 17);
        let index = &mut CortexIndex::build(make_table(h, t), &config(true, 24)).unwrap();
        let mut rng = StdRng::seed_from_u64(18);
        for _ in 0..4 {
            let rows: Vec<Vec<i64>> = (0..500)
                .map(|_| vec![rng.gen_range(0..10_000), rng.gen_range(0..10_000)])
                .collect();
            index.insert_batch(&rows).unwrap();
        }
        index.revalidate();
        assert_eq!(index.revalidate(), 0, "revalidate must be idempotent");
        assert_grid_fresh(index);
        // After revalidation every cell obeys the threshold rule exactly.
        let params = index.params();
        for (&(hb, tb), &c) in &index.grid().cells.clone() {
            let is_out = index.assignment().outliers.contains(&(hb, tb));
            assert_eq!(is_out, params.is_outlier(c, index.grid().host_count(hb)));
        }
    }

    #[test]
    fn delete_unknown_key_is_atomic() {
        let (h, t) = correlated(500, 19);
        let index = &mut CortexIndex::build(make_table(h, t), &config(true, 8)).unwrap();
        let good = index.table().key_at(3);
        let err = index.delete_batch(&[good, ClusteredKey(u64::MAX)]).unwrap_err();
        assert!(matches!(err, Error::MissingKeys(_)));
        assert_eq!(index.table().row_count(), 500, "failed delete must not remove rows");
        assert!(index.table().point_lookup(good).is_some());
        assert_grid_fresh(index);
    }

    #[test]
    fn duplicate_delete_keys_count_once() {
        let (h, t) = correlated(800, 20);
        let index = &mut CortexIndex::build(make_table(h, t), &config(true, 8)).unwrap();
        let key = index.table().key_at(10);
        let report = index.delete_batch(&[key, key, key]).unwrap();
        assert_eq!(report.rows, 1);
        assert_eq!(index.table().row_count(), 799);
        assert_grid_fresh(index);
    }

    #[test]
    fn median_split_lands_between_halves() {
        let host: Vec<i64> = (1..=10).collect();
        let target: Vec<i64> = (1..=10).collect();
        let mut cfg = config(true, 2);
        cfg.target_buckets = TargetBucketSpec::Count(1);
        let index = &mut CortexIndex::build(make_table(host, target), &cfg).unwrap();
        assert_eq!(index.targets().len(), 1);
        let boundary = index.split_target_bucket(0).unwrap();
        assert_eq!(boundary, Some(6));
        assert_eq!(index.targets()[0], TargetBucket { lo: 1, hi: 6 });
        assert_eq!(index.targets()[1], TargetBucket { lo: 6, hi: 11 });
        assert_grid_fresh(index);
    }

    #[test]
    fn single_valued_bucket_refuses_split() {
        let host: Vec<i64> = (0..50).collect();
        let target = vec![7i64; 50];
        let mut cfg = config(true, 4);
        cfg.target_buckets = TargetBucketSpec::Count(1);
        let index = &mut CortexIndex::build(make_table(host, target), &cfg).unwrap();
        assert_eq!(index.split_target_bucket(0).unwrap(), None);
        assert_eq!(index.targets().len(), 1);
        assert!(index.split_target_bucket(9).is_err());
    }

    #[test]
    fn crowded_buckets_get_split() {
        // Half the rows pile into one narrow value run.
        let mut rng = StdRng::seed_from_u64(21);
        let host: Vec<i64> = (0..2000).map(|_| rng.gen_range(0..1000)).collect();
        let target: Vec<i64> = (0..2000)
            .map(|i| if i % 2 == 0 { rng.gen_range(0..4) } else { rng.gen_range(0..100_000) })
            .collect();
        let mut cfg = config(true, 16);
        cfg.target_buckets = TargetBucketSpec::Count(8);
        let index = &mut CortexIndex::build(make_table(host, target), &cfg).unwrap();
        let before = index.targets().len();
        let splits = index.maybe_split_crowded_buckets(2.0).unwrap();
        assert_eq!(index.targets().len(), before + splits as usize);
        assert_grid_fresh(index);
        assert!(index.maybe_split_crowded_buckets(0.5).is_err());
    }

    #[test]
    fn raw_rows_encode_and_insert() {
        let (h, t) = correlated(300, 22);
        let index = &mut CortexIndex::build(make_table(h, t), &config(true, 4)).unwrap();
        let rows = index
            .encode_rows(&[vec!["123".into(), "456".into()]])
            .unwrap();
        let report = index.insert_batch(&rows).unwrap();
        assert_eq!(report.rows, 1);
        assert_eq!(index.table().row_count(), 301);
    }
}

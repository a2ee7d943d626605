//! Host index: the primary clustered index that owns the table's physical
//! layout.
//!
//! Two variants share one interface: an equi-depth 1-D index over a single
//! column, and an octree over two or more columns. Either way the index
//! partitions rows into *buckets*, each owning a disjoint clustered-key range
//! `[key_lo, key_hi)`; a bucket's rows are exactly the table rows whose key
//! falls in that range, so scanning a bucket is one contiguous range scan.
//!
//! Keys follow a prefix/counter layout: the initial build hands bucket `i`
//! the range `[i·2^24, (i+1)·2^24)` (a 40-bit range prefix over a 24-bit
//! counter) and rows take consecutive keys from their bucket's counter.
//! Splits subdivide the parent's key range and rekey only the parent's rows,
//! so every other bucket's keys survive untouched. Merges (1-D only) union
//! two adjacent ranges without rekeying anything.
//!
//! Out-of-range values clamp into the nearest edge bucket rather than erroring
//! (the clamp count is observable via [`HostIndex::clamped_locates`]). The
//! load-bearing invariant, preserved across every mutation: for each row,
//! `locate(host values)` names the bucket whose key range contains the row's
//! key.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ClusteredKey, Table};

/// Default bucket cap for the 1-D variant.
pub const DEFAULT_MAX_BUCKETS: usize = 100_000;
/// Default leaf capacity for the octree variant.
pub const DEFAULT_MAX_LEAF: usize = 10_000;

/// Counter bits of a clustered key; the initial per-bucket key stride.
const KEY_SUFFIX_BITS: u32 = 24;
const KEY_STRIDE: u64 = 1 << KEY_SUFFIX_BITS;
/// Range-prefix bits: caps how many buckets an initial build may create.
const MAX_INITIAL_BUCKETS: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BucketId(pub u32);

impl std::fmt::Display for BucketId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How to build the host index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HostIndexConfig {
    /// Equi-depth buckets over one column.
    #[serde(rename = "clustered_1d")]
    Clustered1d {
        column: String,
        #[serde(default = "default_max_buckets")]
        max_buckets: usize,
    },
    /// Octree over two or more columns; leaves are buckets.
    Octree {
        columns: Vec<String>,
        #[serde(default = "default_max_leaf")]
        max_leaf: usize,
    },
}

fn default_max_buckets() -> usize {
    DEFAULT_MAX_BUCKETS
}

fn default_max_leaf() -> usize {
    DEFAULT_MAX_LEAF
}

impl HostIndexConfig {
    pub fn column_names(&self) -> &[String] {
        match self {
            HostIndexConfig::Clustered1d { column, .. } => std::slice::from_ref(column),
            HostIndexConfig::Octree { columns, .. } => columns,
        }
    }
}

/// A bucket boundary change. `old` buckets are dead afterwards but their key
/// ranges stay queryable via [`HostIndex::bucket`] so downstream bookkeeping
/// can unwind them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructuralEvent {
    Split { old: BucketId, new: Vec<BucketId> },
    Merge { old: Vec<BucketId>, new: BucketId },
}

impl StructuralEvent {
    pub fn old_ids(&self) -> &[BucketId] {
        match self {
            StructuralEvent::Split { old, .. } => std::slice::from_ref(old),
            StructuralEvent::Merge { old, .. } => old,
        }
    }

    pub fn new_ids(&self) -> &[BucketId] {
        match self {
            StructuralEvent::Split { new, .. } => new,
            StructuralEvent::Merge { new, .. } => std::slice::from_ref(new),
        }
    }
}

/// Public snapshot of one bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HostBucket {
    pub id: BucketId,
    pub key_lo: ClusteredKey,
    pub key_hi: ClusteredKey,
    pub count: u64,
    /// Per host column, the `[lo, hi)` value slab this bucket covers.
    pub region: Vec<(i64, i64)>,
}

#[derive(Debug, Clone)]
struct BucketState {
    key_lo: u64,
    key_hi: u64,
    /// Next unused key; allocation never rewinds.
    next_key: u64,
    count: u64,
    alive: bool,
    region: Vec<(i64, i64)>,
    /// Octree only: index of this bucket's leaf node.
    leaf_node: usize,
}

impl BucketState {
    fn key_span(&self) -> u64 {
        self.key_hi - self.key_lo
    }
}

#[derive(Debug)]
enum Variant {
    OneD {
        /// Region low edge → bucket, for alive buckets in value order.
        order: BTreeMap<i64, u32>,
    },
    Octree {
        nodes: Vec<OctNode>,
        root: usize,
        root_region: Vec<(i64, i64)>,
    },
}

#[derive(Debug, Clone)]
enum OctNode {
    Leaf { bucket: u32 },
    /// `children[c]` where bit `d` of `c` says coord `d` is ≥ `mids[d]`.
    Inner { mids: Vec<i64>, children: Vec<usize> },
}

#[derive(Debug)]
pub struct HostIndex {
    columns: Vec<usize>,
    column_names: Vec<String>,
    buckets: Vec<BucketState>,
    /// key_lo → bucket, for alive buckets.
    key_order: BTreeMap<u64, u32>,
    /// Build-time reference capacity: rows per bucket (1-D) or max_leaf.
    capacity: u64,
    variant: Variant,
    clamped: AtomicU64,
}

impl HostIndex {
    /// Builds the index and takes over the table's clustered keys: rows are
    /// rekeyed into bucket order.
    pub fn build(table: &mut Table, config: &HostIndexConfig) -> Result<HostIndex> {
        match config {
            HostIndexConfig::Clustered1d { column, max_buckets } => {
                Self::build_1d(table, column, *max_buckets)
            }
            HostIndexConfig::Octree { columns, max_leaf } => {
                Self::build_octree(table, columns, *max_leaf)
            }
        }
    }

    fn build_1d(table: &mut Table, column: &str, max_buckets: usize) -> Result<HostIndex> {
        if max_buckets == 0 {
            return Err(Error::BadConfig("max_buckets must be positive".into()));
        }
        let col = table.column_index(column)?;
        let values = table.column_values(col);
        let n = values.len();

        let edges = if n == 0 {
            vec![i64::MIN, i64::MAX]
        } else {
            let mut sorted = values.clone();
            sorted.sort_unstable();
            equi_depth_edges(&sorted, max_buckets.min(n))
        };
        let k = edges.len() - 1;
        if k as u64 > MAX_INITIAL_BUCKETS {
            return Err(Error::BadConfig(format!("{k} buckets exceed the key prefix space")));
        }

        let mut buckets: Vec<BucketState> = (0..k)
            .map(|i| BucketState {
                key_lo: i as u64 * KEY_STRIDE,
                key_hi: (i as u64 + 1) * KEY_STRIDE,
                next_key: i as u64 * KEY_STRIDE,
                count: 0,
                alive: true,
                region: vec![(edges[i], edges[i + 1])],
                leaf_node: 0,
            })
            .collect();

        let mut new_keys = Vec::with_capacity(n);
        for &v in &values {
            let b = bucket_of_edges(&edges, v);
            let state = &mut buckets[b];
            if state.next_key == state.key_hi {
                return Err(Error::KeySpaceExhausted {
                    bucket: b as u32,
                    count: state.count,
                    span: state.key_span(),
                });
            }
            new_keys.push(ClusteredKey(state.next_key));
            state.next_key += 1;
            state.count += 1;
        }
        table.assign_keys(new_keys)?;

        let order = (0..k).map(|i| (edges[i], i as u32)).collect();
        let key_order = buckets.iter().enumerate().map(|(i, b)| (b.key_lo, i as u32)).collect();
        let capacity = if n == 0 { 1 } else { (n as u64).div_ceil(k as u64) };
        Ok(HostIndex {
            columns: vec![col],
            column_names: vec![column.to_string()],
            buckets,
            key_order,
            capacity,
            variant: Variant::OneD { order },
            clamped: AtomicU64::new(0),
        })
    }

    fn build_octree(table: &mut Table, columns: &[String], max_leaf: usize) -> Result<HostIndex> {
        if columns.len() < 2 {
            return Err(Error::OctreeNeedsColumns(columns.len()));
        }
        if max_leaf == 0 {
            return Err(Error::BadConfig("max_leaf must be positive".into()));
        }
        let cols: Vec<usize> =
            columns.iter().map(|c| table.column_index(c)).collect::<Result<_>>()?;
        let coords: Vec<Vec<i64>> = cols.iter().map(|&c| table.column_values(c)).collect();
        let n = table.row_count();
        let dims = cols.len();

        let root_region: Vec<(i64, i64)> = (0..dims)
            .map(|d| {
                if n == 0 {
                    (i64::MIN, i64::MAX)
                } else {
                    let lo = *coords[d].iter().min().unwrap();
                    let hi = *coords[d].iter().max().unwrap();
                    (lo, hi.saturating_add(1))
                }
            })
            .collect();

        let mut builder = OctreeBuilder {
            coords: &coords,
            max_leaf: max_leaf as u64,
            nodes: Vec::new(),
            buckets: Vec::new(),
        };
        let rows: Vec<usize> = (0..n).collect();
        let root = builder.build_node(rows, root_region.clone());
        let OctreeBuilder { nodes, mut buckets, .. } = builder;

        let k = buckets.len();
        if k as u64 > MAX_INITIAL_BUCKETS {
            return Err(Error::BadConfig(format!("{k} leaves exceed the key prefix space")));
        }
        // Leaves were created in DFS order; hand out key ranges in that order.
        let mut row_keys: Vec<ClusteredKey> = vec![ClusteredKey(0); n];
        for (i, leaf) in buckets.iter_mut().enumerate() {
            leaf.state.key_lo = i as u64 * KEY_STRIDE;
            leaf.state.key_hi = (i as u64 + 1) * KEY_STRIDE;
            leaf.state.next_key = leaf.state.key_lo;
            if leaf.rows.len() as u64 > KEY_STRIDE {
                return Err(Error::KeySpaceExhausted {
                    bucket: i as u32,
                    count: leaf.rows.len() as u64,
                    span: KEY_STRIDE,
                });
            }
            for &r in &leaf.rows {
                row_keys[r] = ClusteredKey(leaf.state.next_key);
                leaf.state.next_key += 1;
            }
            leaf.state.count = leaf.rows.len() as u64;
        }
        table.assign_keys(row_keys)?;

        let states: Vec<BucketState> = buckets.into_iter().map(|l| l.state).collect();
        let key_order = states.iter().enumerate().map(|(i, b)| (b.key_lo, i as u32)).collect();
        Ok(HostIndex {
            columns: cols,
            column_names: columns.to_vec(),
            buckets: states,
            key_order,
            capacity: max_leaf as u64,
            variant: Variant::Octree { nodes, root, root_region },
            clamped: AtomicU64::new(0),
        })
    }

    // ------------------------------------------------------------------
    // Lookups
    // ------------------------------------------------------------------

    pub fn column_indices(&self) -> &[usize] {
        &self.columns
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Pulls this index's host values out of a full-width encoded row.
    pub fn host_values(&self, full_row: &[i64]) -> Vec<i64> {
        self.columns.iter().map(|&c| full_row[c]).collect()
    }

    /// Bucket for a point, clamping out-of-range values into edge buckets.
    pub fn locate(&self, host_values: &[i64]) -> BucketId {
        assert_eq!(host_values.len(), self.columns.len(), "host value arity");
        match &self.variant {
            Variant::OneD { order } => {
                let v = host_values[0];
                let b = match order.range(..=v).next_back() {
                    Some((_, &b)) => {
                        if v >= self.buckets[b as usize].region[0].1 {
                            // Only possible past the top edge of the last bucket.
                            self.clamped.fetch_add(1, Ordering::Relaxed);
                        }
                        b
                    }
                    None => {
                        self.clamped.fetch_add(1, Ordering::Relaxed);
                        *order.values().next().expect("index has no buckets")
                    }
                };
                BucketId(b)
            }
            Variant::Octree { nodes, root, root_region } => {
                let mut clamped = false;
                let coords: Vec<i64> = host_values
                    .iter()
                    .zip(root_region)
                    .map(|(&v, &(lo, hi))| {
                        let c = v.clamp(lo, hi - 1);
                        clamped |= c != v;
                        c
                    })
                    .collect();
                if clamped {
                    self.clamped.fetch_add(1, Ordering::Relaxed);
                }
                let mut node = *root;
                loop {
                    match &nodes[node] {
                        OctNode::Leaf { bucket } => return BucketId(*bucket),
                        OctNode::Inner { mids, children } => {
                            let mut child = 0usize;
                            for (d, &mid) in mids.iter().enumerate() {
                                if coords[d] >= mid {
                                    child |= 1 << d;
                                }
                            }
                            node = children[child];
                        }
                    }
                }
            }
        }
    }

    /// Bucket whose key range contains `key` (alive buckets only).
    pub fn bucket_of_key(&self, key: ClusteredKey) -> Option<BucketId> {
        let (_, &b) = self.key_order.range(..=key.0).next_back()?;
        (key.0 < self.buckets[b as usize].key_hi).then_some(BucketId(b))
    }

    /// All alive buckets whose region intersects the per-column ranges
    /// (`None` = unconstrained, values `[lo, hi)`). An empty interval yields
    /// no buckets.
    pub fn host_range_lookup(&self, ranges: &[Option<(i64, i64)>]) -> Vec<BucketId> {
        assert_eq!(ranges.len(), self.columns.len(), "host range arity");
        if ranges.iter().flatten().any(|&(lo, hi)| lo >= hi) {
            return Vec::new();
        }
        match &self.variant {
            Variant::OneD { order } => {
                let mut out = Vec::new();
                for (_, &b) in order.iter() {
                    let (blo, bhi) = self.buckets[b as usize].region[0];
                    let hit = match ranges[0] {
                        None => true,
                        Some((lo, hi)) => blo < hi && lo < bhi,
                    };
                    if hit {
                        out.push(BucketId(b));
                    }
                }
                out
            }
            Variant::Octree { nodes, root, root_region } => {
                let mut out = Vec::new();
                let mut stack = vec![(*root, root_region.clone())];
                while let Some((node, region)) = stack.pop() {
                    let disjoint = region.iter().zip(ranges).any(|(&(blo, bhi), r)| match r {
                        None => blo >= bhi, // empty node slab never matches
                        Some((lo, hi)) => blo >= *hi || *lo >= bhi || blo >= bhi,
                    });
                    if disjoint {
                        continue;
                    }
                    match &nodes[node] {
                        OctNode::Leaf { bucket } => out.push(BucketId(*bucket)),
                        OctNode::Inner { mids, children } => {
                            for (c, &child) in children.iter().enumerate() {
                                let child_region: Vec<(i64, i64)> = region
                                    .iter()
                                    .zip(mids)
                                    .enumerate()
                                    .map(|(d, (&(lo, hi), &mid))| {
                                        if c >> d & 1 == 1 {
                                            (mid, hi)
                                        } else {
                                            (lo, mid)
                                        }
                                    })
                                    .collect();
                                stack.push((child, child_region));
                            }
                        }
                    }
                }
                out.sort_unstable();
                out
            }
        }
    }

    pub fn bucket(&self, id: BucketId) -> HostBucket {
        let b = &self.buckets[id.0 as usize];
        HostBucket {
            id,
            key_lo: ClusteredKey(b.key_lo),
            key_hi: ClusteredKey(b.key_hi),
            count: b.count,
            region: b.region.clone(),
        }
    }

    pub fn is_alive(&self, id: BucketId) -> bool {
        self.buckets[id.0 as usize].alive
    }

    /// Alive buckets in key order.
    pub fn buckets(&self) -> Vec<HostBucket> {
        self.key_order.values().map(|&b| self.bucket(BucketId(b))).collect()
    }

    pub fn bucket_count(&self) -> usize {
        self.key_order.len()
    }

    pub fn row_count(&self) -> u64 {
        self.key_order.values().map(|&b| self.buckets[b as usize].count).sum()
    }

    /// Build-time reference capacity (rows per bucket for 1-D, max_leaf for
    /// the octree). Split and merge thresholds derive from it.
    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// How many locates clamped an out-of-range value into an edge bucket.
    pub fn clamped_locates(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn variant_name(&self) -> &'static str {
        match self.variant {
            Variant::OneD { .. } => "clustered_1d",
            Variant::Octree { .. } => "octree",
        }
    }

    /// Per-bucket stats, JSON-ready.
    pub fn stats_json(&self) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant_name(),
            "columns": self.column_names,
            "capacity": self.capacity,
            "clamped_locates": self.clamped_locates(),
            "buckets": self.buckets(),
        })
    }

    fn split_threshold(&self) -> u64 {
        match self.variant {
            // Equi-depth buckets start around `capacity`; double is the
            // overflow trigger.
            Variant::OneD { .. } => self.capacity * 2,
            // Octree leaves are built to hold at most `capacity` rows, so
            // anything beyond it trips a split.
            Variant::Octree { .. } => self.capacity,
        }
    }

    fn merge_threshold(&self) -> u64 {
        self.capacity / 4
    }

    // ------------------------------------------------------------------
    // Mutation
    // ------------------------------------------------------------------

    /// Routes encoded full-width rows to buckets, allocates their keys,
    /// appends them to the table and resolves any splits this triggers.
    /// Returns each row's (key, pre-split bucket) plus structural events in
    /// the order they happened.
    pub fn apply_insert(
        &mut self,
        table: &mut Table,
        rows: &[Vec<i64>],
    ) -> Result<(Vec<(ClusteredKey, BucketId)>, Vec<StructuralEvent>)> {
        for row in rows {
            if row.len() != table.column_count() {
                return Err(Error::BadConfig(format!(
                    "row holds {} values, table has {} columns",
                    row.len(),
                    table.column_count()
                )));
            }
        }
        let mut placements = Vec::with_capacity(rows.len());
        let mut pending: Vec<(ClusteredKey, Vec<i64>)> = Vec::new();
        let mut events = Vec::new();

        for row in rows {
            let host = self.host_values(row);
            loop {
                let b = self.locate(&host);
                let state = &mut self.buckets[b.0 as usize];
                if state.next_key < state.key_hi {
                    let key = ClusteredKey(state.next_key);
                    state.next_key += 1;
                    state.count += 1;
                    placements.push((key, b));
                    pending.push((key, row.clone()));
                    break;
                }
                // Key space ran dry: flush what we have so the split sees a
                // consistent table, split the bucket, and retry the locate.
                table.append(&pending)?;
                pending.clear();
                match self.split_bucket(table, b)? {
                    Some(ev) => events.push(ev),
                    None => {
                        let state = &self.buckets[b.0 as usize];
                        return Err(Error::KeySpaceExhausted {
                            bucket: b.0,
                            count: state.count,
                            span: state.key_span(),
                        });
                    }
                }
            }
        }
        table.append(&pending)?;

        // Resolve overflow splits until quiescent; unsplittable buckets
        // (e.g. a pile of identical points) are left alone.
        let mut skip: HashSet<u32> = HashSet::new();
        loop {
            let threshold = self.split_threshold();
            let next = self
                .key_order
                .values()
                .map(|&b| b)
                .find(|&b| !skip.contains(&b) && self.buckets[b as usize].count > threshold);
            let Some(b) = next else { break };
            match self.split_bucket(table, BucketId(b))? {
                Some(ev) => events.push(ev),
                None => {
                    skip.insert(b);
                }
            }
        }
        Ok((placements, events))
    }

    /// Removes rows by key and merges underfull adjacent buckets (1-D only).
    /// Atomic on missing keys.
    pub fn apply_delete(
        &mut self,
        table: &mut Table,
        keys: &[ClusteredKey],
    ) -> Result<Vec<StructuralEvent>> {
        // Dedup up front: `Table::remove_keys` drops a repeated key once, so
        // counting it twice here would corrupt bucket counts.
        let mut keys = keys.to_vec();
        keys.sort_unstable();
        keys.dedup();
        let mut per_bucket: BTreeMap<u32, u64> = BTreeMap::new();
        let mut missing = Vec::new();
        for &k in &keys {
            match (self.bucket_of_key(k), table.point_lookup(k)) {
                (Some(b), Some(_)) => *per_bucket.entry(b.0).or_insert(0) += 1,
                _ => missing.push(k.0),
            }
        }
        if !missing.is_empty() {
            missing.sort_unstable();
            missing.dedup();
            return Err(Error::MissingKeys(missing));
        }
        table.remove_keys(&keys)?;
        for (b, n) in per_bucket {
            self.buckets[b as usize].count -= n;
        }

        let mut events = Vec::new();
        if let Variant::OneD { .. } = self.variant {
            let threshold = self.merge_threshold();
            loop {
                let merged = self.try_merge_once(threshold);
                match merged {
                    Some(ev) => events.push(ev),
                    None => break,
                }
            }
        }
        Ok(events)
    }

    /// Finds one adjacent underfull 1-D pair and merges it.
    fn try_merge_once(&mut self, threshold: u64) -> Option<StructuralEvent> {
        let Variant::OneD { order } = &self.variant else { return None };
        let ids: Vec<u32> = order.values().copied().collect();
        for w in ids.windows(2) {
            let (a, b) = (w[0], w[1]);
            if self.buckets[a as usize].count < threshold
                && self.buckets[b as usize].count < threshold
            {
                return Some(self.merge_pair(BucketId(a), BucketId(b)));
            }
        }
        None
    }

    fn merge_pair(&mut self, a: BucketId, b: BucketId) -> StructuralEvent {
        let (sa, sb) = (self.buckets[a.0 as usize].clone(), self.buckets[b.0 as usize].clone());
        debug_assert_eq!(sa.key_hi, sb.key_lo, "1-D merge needs key-adjacent buckets");
        debug_assert_eq!(sa.region[0].1, sb.region[0].0, "1-D merge needs value-adjacent buckets");
        let merged = BucketState {
            key_lo: sa.key_lo,
            key_hi: sb.key_hi,
            // Everything below sb.next_key is either allocated or inside
            // sa's retired range, so allocation resumes from sb's counter.
            next_key: sb.next_key,
            count: sa.count + sb.count,
            alive: true,
            region: vec![(sa.region[0].0, sb.region[0].1)],
            leaf_node: 0,
        };
        let id = self.push_bucket(merged);
        self.buckets[a.0 as usize].alive = false;
        self.buckets[b.0 as usize].alive = false;
        self.key_order.remove(&sa.key_lo);
        self.key_order.remove(&sb.key_lo);
        self.key_order.insert(sa.key_lo, id.0);
        let Variant::OneD { order } = &mut self.variant else { unreachable!() };
        order.remove(&sa.region[0].0);
        order.remove(&sb.region[0].0);
        order.insert(sa.region[0].0, id.0);
        StructuralEvent::Merge { old: vec![a, b], new: id }
    }

    fn push_bucket(&mut self, state: BucketState) -> BucketId {
        let id = BucketId(self.buckets.len() as u32);
        self.buckets.push(state);
        id
    }

    /// Splits one bucket. `None` means unsplittable (all rows carry one
    /// routing value, or the key range is too shallow to divide).
    fn split_bucket(&mut self, table: &mut Table, b: BucketId) -> Result<Option<StructuralEvent>> {
        match &self.variant {
            Variant::OneD { .. } => self.split_1d(table, b),
            Variant::Octree { .. } => self.split_octree(table, b),
        }
    }

    fn split_1d(&mut self, table: &mut Table, b: BucketId) -> Result<Option<StructuralEvent>> {
        let state = self.buckets[b.0 as usize].clone();
        debug_assert!(state.alive);
        let (rlo, rhi) = state.region[0];
        if rhi - rlo < 2 || state.key_span() < 2 {
            return Ok(None);
        }
        let rows = table.rows_in_key_range(ClusteredKey(state.key_lo), ClusteredKey(state.key_hi));
        debug_assert_eq!(rows.len() as u64, state.count);
        let col = self.columns[0];
        let values: Vec<i64> = rows.clone().map(|r| table.value(col, r)).collect();

        let mut sorted = values.clone();
        sorted.sort_unstable();
        let mut split_value = sorted[sorted.len() / 2];
        if split_value == sorted[0] {
            match sorted.iter().find(|&&v| v > split_value) {
                Some(&v) => split_value = v,
                None => return Ok(None), // single distinct value
            }
        }
        // Region boundaries must stay inside the bucket's slab even when
        // clamped out-of-range values drag the median outside it.
        let split_value = split_value.clamp(rlo + 1, rhi - 1);

        let low_rows: Vec<usize> = (0..values.len()).filter(|&i| values[i] < split_value).collect();
        let high_rows: Vec<usize> =
            (0..values.len()).filter(|&i| values[i] >= split_value).collect();
        let children = self.carve_key_ranges(&state, &[low_rows.len() as u64, high_rows.len() as u64]);
        let Some(children) = children else { return Ok(None) };

        let mut new_keys = vec![ClusteredKey(0); values.len()];
        for (slots, (child_lo, _)) in [&low_rows, &high_rows].iter().zip(&children) {
            for (offset, &slot) in slots.iter().enumerate() {
                new_keys[slot] = ClusteredKey(child_lo + offset as u64);
            }
        }
        table.rekey_range(ClusteredKey(state.key_lo), ClusteredKey(state.key_hi), &new_keys)?;

        let low = self.push_bucket(BucketState {
            key_lo: children[0].0,
            key_hi: children[0].1,
            next_key: children[0].0 + low_rows.len() as u64,
            count: low_rows.len() as u64,
            alive: true,
            region: vec![(rlo, split_value)],
            leaf_node: 0,
        });
        let high = self.push_bucket(BucketState {
            key_lo: children[1].0,
            key_hi: children[1].1,
            next_key: children[1].0 + high_rows.len() as u64,
            count: high_rows.len() as u64,
            alive: true,
            region: vec![(split_value, rhi)],
            leaf_node: 0,
        });
        self.buckets[b.0 as usize].alive = false;
        self.key_order.remove(&state.key_lo);
        self.key_order.insert(children[0].0, low.0);
        self.key_order.insert(children[1].0, high.0);
        let Variant::OneD { order } = &mut self.variant else { unreachable!() };
        order.remove(&rlo);
        order.insert(rlo, low.0);
        order.insert(split_value, high.0);
        Ok(Some(StructuralEvent::Split { old: b, new: vec![low, high] }))
    }

    fn split_octree(&mut self, table: &mut Table, b: BucketId) -> Result<Option<StructuralEvent>> {
        let state = self.buckets[b.0 as usize].clone();
        debug_assert!(state.alive);
        let dims = self.columns.len();
        if state.region.iter().all(|&(lo, hi)| (hi as i128 - lo as i128) <= 1) {
            return Ok(None);
        }
        let Variant::Octree { root_region, .. } = &self.variant else { unreachable!() };
        let root_region = root_region.clone();

        let rows = table.rows_in_key_range(ClusteredKey(state.key_lo), ClusteredKey(state.key_hi));
        debug_assert_eq!(rows.len() as u64, state.count);
        // Routing always happens in clamped space so it matches `locate`.
        let coords: Vec<Vec<i64>> = rows
            .clone()
            .map(|r| {
                self.columns
                    .iter()
                    .zip(&root_region)
                    .map(|(&c, &(lo, hi))| table.value(c, r).clamp(lo, hi - 1))
                    .collect()
            })
            .collect();
        if coords.windows(2).all(|w| w[0] == w[1]) && !coords.is_empty() {
            return Ok(None); // identical points cannot be separated
        }

        let mids: Vec<i64> = state
            .region
            .iter()
            .map(|&(lo, hi)| lo + ((hi as i128 - lo as i128) / 2) as i64)
            .collect();
        let fan = 1usize << dims;
        let mut child_rows: Vec<Vec<usize>> = vec![Vec::new(); fan];
        for (slot, point) in coords.iter().enumerate() {
            let mut c = 0usize;
            for d in 0..dims {
                if point[d] >= mids[d] {
                    c |= 1 << d;
                }
            }
            child_rows[c].push(slot);
        }
        let counts: Vec<u64> = child_rows.iter().map(|r| r.len() as u64).collect();
        let Some(ranges) = self.carve_key_ranges(&state, &counts) else {
            return Ok(None);
        };

        let mut new_keys = vec![ClusteredKey(0); coords.len()];
        for (slots, (child_lo, _)) in child_rows.iter().zip(&ranges) {
            for (offset, &slot) in slots.iter().enumerate() {
                new_keys[slot] = ClusteredKey(child_lo + offset as u64);
            }
        }
        table.rekey_range(ClusteredKey(state.key_lo), ClusteredKey(state.key_hi), &new_keys)?;

        // Drop the parent's key_order entry first: child 0 reuses key_lo.
        self.buckets[b.0 as usize].alive = false;
        self.key_order.remove(&state.key_lo);

        let mut new_ids = Vec::with_capacity(fan);
        let mut leaf_nodes = Vec::with_capacity(fan);
        for c in 0..fan {
            let region: Vec<(i64, i64)> = state
                .region
                .iter()
                .zip(&mids)
                .enumerate()
                .map(|(d, (&(lo, hi), &mid))| if c >> d & 1 == 1 { (mid, hi) } else { (lo, mid) })
                .collect();
            let Variant::Octree { nodes, .. } = &mut self.variant else { unreachable!() };
            let node_idx = nodes.len();
            let id = BucketId(self.buckets.len() as u32);
            nodes.push(OctNode::Leaf { bucket: id.0 });
            self.buckets.push(BucketState {
                key_lo: ranges[c].0,
                key_hi: ranges[c].1,
                next_key: ranges[c].0 + counts[c],
                count: counts[c],
                alive: true,
                region,
                leaf_node: node_idx,
            });
            self.key_order.insert(ranges[c].0, id.0);
            new_ids.push(id);
            leaf_nodes.push(node_idx);
        }
        let Variant::Octree { nodes, .. } = &mut self.variant else { unreachable!() };
        nodes[state.leaf_node] = OctNode::Inner { mids, children: leaf_nodes };
        Ok(Some(StructuralEvent::Split { old: b, new: new_ids }))
    }

    /// Carves a bucket's key range into one sub-range per child, each at
    /// least 1 wide and at least the child's row count, roughly proportional
    /// to the counts. `None` if the range is too shallow.
    fn carve_key_ranges(&self, state: &BucketState, counts: &[u64]) -> Option<Vec<(u64, u64)>> {
        let span = state.key_span();
        let total: u64 = counts.iter().sum();
        let min_total: u64 = counts.iter().map(|&c| c.max(1)).sum();
        if span < min_total {
            return None;
        }
        let slack = span - min_total;
        let mut ranges = Vec::with_capacity(counts.len());
        let mut cursor = state.key_lo;
        for (i, &c) in counts.iter().enumerate() {
            let width = if i + 1 == counts.len() {
                state.key_hi - cursor
            } else {
                let bonus = if total == 0 { slack / counts.len() as u64 } else { slack * c / total };
                c.max(1) + bonus
            };
            ranges.push((cursor, cursor + width));
            cursor += width;
        }
        debug_assert_eq!(ranges.last().unwrap().1, state.key_hi);
        debug_assert!(ranges.iter().zip(counts).all(|(&(lo, hi), &c)| hi - lo >= c.max(1)));
        Some(ranges)
    }
}

/// Recursive octree construction over row index lists. Leaves are emitted in
/// DFS order, which later becomes their key-range order.
struct OctreeBuilder<'a> {
    coords: &'a [Vec<i64>],
    max_leaf: u64,
    nodes: Vec<OctNode>,
    buckets: Vec<LeafDraft>,
}

struct LeafDraft {
    state: BucketState,
    rows: Vec<usize>,
}

impl OctreeBuilder<'_> {
    fn build_node(&mut self, rows: Vec<usize>, region: Vec<(i64, i64)>) -> usize {
        let dims = self.coords.len();
        let all_thin = region.iter().all(|&(lo, hi)| (hi as i128 - lo as i128) <= 1);
        let all_same = rows
            .windows(2)
            .all(|w| (0..dims).all(|d| self.coords[d][w[0]] == self.coords[d][w[1]]));
        if rows.len() as u64 <= self.max_leaf || all_thin || all_same {
            let node = self.nodes.len();
            let bucket = self.buckets.len() as u32;
            self.nodes.push(OctNode::Leaf { bucket });
            self.buckets.push(LeafDraft {
                state: BucketState {
                    key_lo: 0,
                    key_hi: 0,
                    next_key: 0,
                    count: 0,
                    alive: true,
                    region,
                    leaf_node: node,
                },
                rows,
            });
            return node;
        }

        let mids: Vec<i64> = region
            .iter()
            .map(|&(lo, hi)| lo + ((hi as i128 - lo as i128) / 2) as i64)
            .collect();
        let fan = 1usize << dims;
        let mut child_rows: Vec<Vec<usize>> = vec![Vec::new(); fan];
        for &r in &rows {
            let mut c = 0usize;
            for d in 0..dims {
                if self.coords[d][r] >= mids[d] {
                    c |= 1 << d;
                }
            }
            child_rows[c].push(r);
        }
        let mut children = Vec::with_capacity(fan);
        for (c, rows_c) in child_rows.into_iter().enumerate() {
            let child_region: Vec<(i64, i64)> = region
                .iter()
                .zip(&mids)
                .enumerate()
                .map(|(d, (&(lo, hi), &mid))| if c >> d & 1 == 1 { (mid, hi) } else { (lo, mid) })
                .collect();
            children.push(self.build_node(rows_c, child_region));
        }
        let node = self.nodes.len();
        self.nodes.push(OctNode::Inner { mids, children });
        node
    }
}

/// Strictly increasing bucket edges for an equi-depth histogram over sorted
/// values; edge list covers `[first, last+1)`. Duplicate-heavy data yields
/// fewer buckets rather than empty ones. Shared with target bucketing.
pub(crate) fn equi_depth_edges(sorted: &[i64], buckets: usize) -> Vec<i64> {
    let n = sorted.len();
    let mut edges = vec![sorted[0]];
    for j in 1..buckets {
        let cand = sorted[j * n / buckets];
        if cand > *edges.last().unwrap() {
            edges.push(cand);
        }
    }
    let hi = sorted[n - 1].saturating_add(1);
    if hi > *edges.last().unwrap() {
        edges.push(hi);
    } else {
        // All values equal (saturated): close the range artificially.
        edges.push(edges.last().unwrap().saturating_add(1));
    }
    edges
}

/// Index of the edge interval containing `v`, clamped into the extremes.
fn bucket_of_edges(edges: &[i64], v: i64) -> usize {
    let k = edges.len() - 1;
    let idx = edges[..k].partition_point(|&e| e <= v);
    idx.saturating_sub(1).min(k - 1)
}

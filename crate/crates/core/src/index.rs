//! The assembled correlation index.
//!
//! [`CortexIndex`] owns the table, its host index, the target buckets, the
//! live cell grid (via [`crate::tracker::TrackerState`]) and the materialized
//! inlier/outlier assignment. Building one is: build the host index (which
//! rekeys the table into bucket order), bucket the target column, tally the
//! grid, pick outliers, materialize.
//!
//! Outlier selection runs under one of two policies. `Alpha` applies the
//! threshold rule directly. `Budget` greedily fills a stash-row cap; the
//! marginal benefit density of the last admitted cell is converted into an
//! *effective* alpha (`alpha = λ·N/P0`), which is what incremental
//! maintenance and revalidation then enforce — the row cap itself binds only
//! at build time, so heavy drift can move the stash away from the cap until
//! a rebuild.

use serde::{Deserialize, Serialize};

use crate::correlation::{
    build_target_buckets, materialize_assignment, CellGrid, OutlierAssignment, TargetBucket,
};
use crate::error::{Error, Result};
use crate::host::{HostIndex, HostIndexConfig};
use crate::stashing::{self, CostParams};
use crate::store::{ColumnKind, Table};
use crate::tracker::TrackerState;

/// How many target buckets to create.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetBucketSpec {
    /// Explicit cap.
    Count(usize),
    /// Enough buckets that one bucket is no wider than the smallest
    /// selectivity of interest: `max(1, ceil(1 / s))`.
    FromSelectivity(f64),
}

impl TargetBucketSpec {
    pub fn bucket_cap(&self) -> Result<usize> {
        match *self {
            TargetBucketSpec::Count(0) => {
                Err(Error::BadConfig("target bucket count must be positive".into()))
            }
            TargetBucketSpec::Count(n) => Ok(n),
            TargetBucketSpec::FromSelectivity(s) => {
                if !(s.is_finite() && 0.0 < s && s <= 1.0) {
                    return Err(Error::BadConfig(format!(
                        "selectivity {s} must lie in (0, 1]"
                    )));
                }
                Ok(((1.0 / s).ceil() as usize).max(1))
            }
        }
    }
}

/// Outlier-selection policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StashPolicy {
    /// Threshold rule with this memory-pressure weight.
    Alpha(f64),
    /// Greedy fill of at most `max_stash` stash rows, optionally biased by
    /// per-target-bucket weights.
    Budget {
        max_stash: u64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CortexConfig {
    pub host: HostIndexConfig,
    pub target_column: String,
    pub target_buckets: TargetBucketSpec,
    pub policy: StashPolicy,
    /// Point-lookup cost in scanned-record units (calibrate to ground it).
    pub beta: f64,
}

#[derive(Debug)]
pub struct CortexIndex {
    pub(crate) table: Table,
    pub(crate) host: HostIndex,
    pub(crate) target_col: usize,
    pub(crate) targets: Vec<TargetBucket>,
    pub(crate) tracker: TrackerState,
    pub(crate) assignment: OutlierAssignment,
    /// Effective memory-pressure weight driving re-tests (derived from the
    /// marginal density under the budget policy).
    pub(crate) alpha: f64,
    pub(crate) beta: f64,
    policy: StashPolicy,
}

impl CortexIndex {
    pub fn build(mut table: Table, config: &CortexConfig) -> Result<CortexIndex> {
        if !(config.beta.is_finite() && config.beta >= 0.0) {
            return Err(Error::BadConfig(format!("beta {} must be finite and ≥ 0", config.beta)));
        }
        if let StashPolicy::Alpha(a) = config.policy {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::BadConfig(format!("alpha {a} must be finite and ≥ 0")));
            }
        }
        let target_col = table.column_index(&config.target_column)?;
        let categorical = matches!(table.meta(target_col).kind, ColumnKind::Categorical(_));
        let cap = config.target_buckets.bucket_cap()?;
        let targets = build_target_buckets(&table.column_values(target_col), cap, categorical)?;

        let host = HostIndex::build(&mut table, &config.host)?;
        let grid = CellGrid::build(&table, &host, &targets, target_col);
        let tracker = TrackerState::new(grid);

        let (outliers, alpha) = match &config.policy {
            StashPolicy::Alpha(a) => {
                let params = tracker.params(*a, config.beta);
                (stashing::assign_by_threshold(&tracker.grid, &params), *a)
            }
            StashPolicy::Budget { max_stash, weights } => {
                let (set, marginal) = stashing::assign_by_budget(
                    &tracker.grid,
                    config.beta,
                    *max_stash,
                    weights.as_deref(),
                )?;
                let alpha = if tracker.p0 > 0 {
                    marginal * tracker.grid.n_rows as f64 / tracker.p0 as f64
                } else {
                    0.0
                };
                (set, alpha)
            }
        };
        let assignment =
            materialize_assignment(&table, &host, &targets, target_col, &tracker.grid, &outliers);
        Ok(CortexIndex {
            table,
            host,
            target_col,
            targets,
            tracker,
            assignment,
            alpha,
            beta: config.beta,
            policy: config.policy.clone(),
        })
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn host(&self) -> &HostIndex {
        &self.host
    }

    pub fn targets(&self) -> &[TargetBucket] {
        &self.targets
    }

    pub fn assignment(&self) -> &OutlierAssignment {
        &self.assignment
    }

    pub fn grid(&self) -> &CellGrid {
        &self.tracker.grid
    }

    pub fn target_column_name(&self) -> &str {
        &self.table.meta(self.target_col).name
    }

    pub fn target_col(&self) -> usize {
        self.target_col
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Current cost-model parameters (live N and P0).
    pub fn params(&self) -> CostParams {
        self.tracker.params(self.alpha, self.beta)
    }

    /// Value span `[lo, hi)` covered by the target buckets.
    pub fn target_domain(&self) -> (i64, i64) {
        (self.targets[0].lo, self.targets[self.targets.len() - 1].hi)
    }

    pub fn stash_len(&self) -> u64 {
        self.assignment.stash_len()
    }

    /// Index footprint: stash entries plus the per-target inlier host lists.
    pub fn index_bytes(&self) -> u64 {
        self.assignment.stash_bytes() + self.assignment.map_bytes()
    }

    /// Build/maintenance summary, JSON-ready.
    pub fn summary_json(&self) -> serde_json::Value {
        let params = self.params();
        serde_json::json!({
            "rows": self.table.row_count(),
            "host_variant": self.host.variant_name(),
            "host_buckets": self.host.bucket_count(),
            "target_column": self.target_column_name(),
            "target_buckets": self.targets.len(),
            "nonempty_cells": self.tracker.grid.cells.len(),
            "outlier_cells": self.assignment.outliers.len(),
            "stash_rows": self.stash_len(),
            "index_bytes": self.index_bytes(),
            "alpha": self.alpha,
            "beta": self.beta,
            "policy": self.policy,
            "initial_scan_overhead": self.tracker.p0,
            "lookup_penalty": params.lookup_penalty(),
        })
    }
}

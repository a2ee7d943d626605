//! Correlation-aware secondary indexing over a clustered column store.
//!
//! The core idea: when a table is physically clustered by one attribute (the
//! *host*), a correlated attribute can be indexed almost for free. Instead of
//! mapping every row, the index partitions the correlated column into target
//! buckets, crosses them with the host's buckets, and classifies each
//! (target, host) cell as *inlier* (answered by range-scanning the host
//! bucket) or *outlier* (individual rows stashed for point lookup). Queries
//! then run as a hybrid of a few wide range scans plus a handful of point
//! lookups, with exact results guaranteed by construction.
//!
//! Module map:
//! - [`store`]: columnar table, encodings, clustered keys, scans ([`compress`]
//!   holds the bit-packed block format, [`format`] the on-disk container).
//! - [`host`]: the primary clustered index (equi-depth 1-D or octree) that
//!   owns bucket boundaries and clustered-key allocation.
//! - [`correlation`]: target buckets, the (target × host) cell grid, and the
//!   materialized inlier/outlier assignment.
//! - [`stashing`]: the cost model and outlier selection (threshold rule and
//!   budgeted greedy).
//! - [`calibrate`]: least-squares fit of the scan/lookup timing model that
//!   grounds the cost ratio `beta`.
//! - [`index`]: ties the above into a queryable [`index::CortexIndex`].
//! - [`tracker`]: incremental maintenance under inserts/deletes, including
//!   bucket split/merge handling and class re-validation.
//! - [`query`]: hybrid execution, plus full-scan / secondary-index /
//!   correlation-map baselines.
//! - [`synth`], [`workload`], [`bench`]: data generation, selectivity-tuned
//!   query workloads, and the benchmark harness.

pub mod bench;
pub mod calibrate;
pub mod compress;
pub mod correlation;
pub mod error;
pub mod format;
pub mod host;
pub mod index;
pub mod query;
pub mod stashing;
pub mod store;
pub mod synth;
pub mod tracker;
pub mod workload;

pub use error::{Error, Result};
pub use host::{BucketId, HostIndex, HostIndexConfig, StructuralEvent};
pub use index::{CortexConfig, CortexIndex, StashPolicy, TargetBucketSpec};
pub use query::{ExecutionStats, RangeQuery};
pub use store::{ClusteredKey, ColumnKind, Table};
pub use tracker::ChangeReport;

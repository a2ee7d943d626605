//! Benchmark harness: datasets × configurations × workloads, with a
//! full-scan exactness oracle on every executed query.
//!
//! A run loads (or generates) one dataset, builds one correlation index per
//! requested alpha, and measures each against selectivity-tuned workloads.
//! Requested baselines run against the first index's clustering so every
//! engine answers over the same physical table. Any disagreement with the
//! full-scan oracle aborts the run with
//! [`Error::ExactnessViolation`] — paging through a report whose
//! numbers came from wrong answers helps nobody.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::HostIndexConfig;
use crate::index::{CortexConfig, CortexIndex, StashPolicy, TargetBucketSpec};
use crate::query::{self, CorrelationMap, ExecutionStats, RangeQuery, SecondaryIndex};
use crate::store::{ingest_csv, SchemaColumn, Table};
use crate::synth::{self, SyntheticSpec};
use crate::workload::{self, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
    },
    Csv {
        path: PathBuf,
        /// `name:kind` declarations, e.g. `"x:int"`, `"price:float"`.
        columns: Vec<String>,
        #[serde(default)]
        key_column: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    FullScan,
    Secondary,
    CorrelationMap,
}

fn default_alphas() -> Vec<f64> {
    vec![1.0]
}

fn default_beta() -> f64 {
    10.0
}

fn default_selectivities() -> Vec<f64> {
    vec![0.001, 0.01]
}

fn default_queries() -> usize {
    100
}

fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::FullScan, Baseline::Secondary, Baseline::CorrelationMap]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dataset: DatasetSpec,
    pub host: HostIndexConfig,
    pub target_column: String,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_selectivities")]
    pub selectivities: Vec<f64>,
    #[serde(default = "default_queries")]
    pub queries_per_selectivity: usize,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    /// Target bucket count; defaults to matching the smallest selectivity.
    #[serde(default)]
    pub target_buckets: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// One engine × selectivity aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEntry {
    pub engine: String,
    pub alpha: Option<f64>,
    pub selectivity: f64,
    pub actual_selectivity: f64,
    pub queries: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub mean_records_touched: f64,
    pub mean_point_lookups: f64,
    pub mean_result_rows: f64,
    pub stash_rows: Option<u64>,
    pub index_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub dataset_rows: usize,
    pub host_variant: String,
    pub target_buckets: usize,
    pub beta: f64,
    pub entries: Vec<BenchEntry>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Table> {
    match spec {
        DatasetSpec::Synthetic { spec } => synth::generate(spec),
        DatasetSpec::Csv { path, columns, key_column } => {
            let schema: Vec<SchemaColumn> =
                columns.iter().map(|c| c.parse()).collect::<Result<_>>()?;
            let file = File::open(path)?;
            Ok(ingest_csv(file, &schema, key_column.as_deref(), false)?.table)
        }
    }
}

fn summarize(stats: &[ExecutionStats], no_timing: bool) -> (f64, f64, f64, f64, f64) {
    let n = stats.len().max(1) as f64;
    let mean = |f: fn(&ExecutionStats) -> u64| stats.iter().map(|s| f(s) as f64).sum::<f64>() / n;
    let (mean_ns, median_ns) = if no_timing || stats.is_empty() {
        (0.0, 0.0)
    } else {
        let mut ns: Vec<u64> = stats.iter().map(|s| s.elapsed_nanos).collect();
        ns.sort_unstable();
        (mean(|s| s.elapsed_nanos), ns[ns.len() / 2] as f64)
    };
    (
        mean_ns,
        median_ns,
        mean(|s| s.range_records_touched),
        mean(|s| s.point_lookups),
        mean(|s| s.result_size),
    )
}

/// Runs one workload through `exec`, checking every answer against the
/// full-scan oracle over `table`.
fn run_checked(
    table: &Table,
    queries: &[RangeQuery],
    engine: &str,
    mut exec: impl FnMut(&RangeQuery) -> Result<(Vec<usize>, ExecutionStats)>,
) -> Result<Vec<ExecutionStats>> {
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let (rows, stats) = exec(q)?;
        let (want, _) = query::full_scan(table, q)?;
        if rows != want {
            return Err(Error::ExactnessViolation(format!(
                "{engine} returned {} rows, oracle {} for [{}, {}) on {:?}",
                rows.len(),
                want.len(),
                q.lo,
                q.hi,
                q.column
            )));
        }
        out.push(stats);
    }
    Ok(out)
}

pub fn run(config: &BenchConfig, no_timing: bool) -> Result<BenchReport> {
    if config.alphas.is_empty() {
        return Err(Error::BadConfig("bench needs at least one alpha".into()));
    }
    if config.selectivities.is_empty() {
        return Err(Error::BadConfig("bench needs at least one selectivity".into()));
    }
    let table = load_dataset(&config.dataset)?;
    let smallest = config.selectivities.iter().cloned().fold(f64::INFINITY, f64::min);
    let target_buckets = match config.target_buckets {
        Some(n) => TargetBucketSpec::Count(n),
        None => TargetBucketSpec::FromSelectivity(smallest),
    };

    // One workload per selectivity, drawn from the raw table (clustering
    // changes row order, never the value multiset the workload depends on).
    let mut workloads: Vec<(f64, Vec<RangeQuery>)> = Vec::new();
    for (i, &s) in config.selectivities.iter().enumerate() {
        let spec = WorkloadSpec {
            column: config.target_column.clone(),
            selectivity: s,
            count: config.queries_per_selectivity,
            seed: config.seed.wrapping_add(i as u64),
        };
        workloads.push((s, workload::generate(&table, &spec)?));
    }

    let mut entries = Vec::new();
    let mut reference: Option<CortexIndex> = None;
    for &alpha in &config.alphas {
        let cfg = CortexConfig {
            host: config.host.clone(),
            target_column: config.target_column.clone(),
            target_buckets,
            policy: StashPolicy::Alpha(alpha),
            beta: config.beta,
        };
        let index = CortexIndex::build(table.clone(), &cfg)?;
        for (s, queries) in &workloads {
            let stats =
                run_checked(index.table(), queries, "cortex", |q| query::execute(&index, q))?;
            let (mean_ns, median_ns, touched, lookups, result) = summarize(&stats, no_timing);
            entries.push(BenchEntry {
                engine: "cortex".into(),
                alpha: Some(alpha),
                selectivity: *s,
                actual_selectivity: result / index.table().row_count().max(1) as f64,
                queries: queries.len(),
                mean_ns,
                median_ns,
                mean_records_touched: touched,
                mean_point_lookups: lookups,
                mean_result_rows: result,
                stash_rows: Some(index.stash_len()),
                index_bytes: index.index_bytes(),
            });
        }
        if reference.is_none() {
            reference = Some(index);
        }
    }
    let reference = reference.expect("at least one alpha was validated above");

    for baseline in &config.baselines {
        let (engine, index_bytes) = match baseline {
            Baseline::FullScan => ("full_scan".to_string(), 0),
            Baseline::Secondary => {
                let s = SecondaryIndex::build(reference.table(), &config.target_column)?;
                ("secondary".to_string(), s.size_bytes())
            }
            Baseline::CorrelationMap => {
                let cm = CorrelationMap::build(reference.grid(), reference.targets());
                ("correlation_map".to_string(), cm.size_bytes())
            }
        };
        // Rebuilt per closure below to keep borrows simple; both are cheap.
        let secondary = SecondaryIndex::build(reference.table(), &config.target_column)?;
        let cm = CorrelationMap::build(reference.grid(), reference.targets());
        for (s, queries) in &workloads {
            let stats = match baseline {
                Baseline::FullScan => run_checked(reference.table(), queries, &engine, |q| {
                    query::full_scan(reference.table(), q)
                })?,
                Baseline::Secondary => run_checked(reference.table(), queries, &engine, |q| {
                    secondary.execute(reference.table(), q)
                })?,
                Baseline::CorrelationMap => run_checked(reference.table(), queries, &engine, |q| {
                    cm.execute(reference.table(), reference.host(), reference.target_col(), q)
                })?,
            };
            let (mean_ns, median_ns, touched, lookups, result) = summarize(&stats, no_timing);
            entries.push(BenchEntry {
                engine: engine.clone(),
                alpha: None,
                selectivity: *s,
                actual_selectivity: result / reference.table().row_count().max(1) as f64,
                queries: queries.len(),
                mean_ns,
                median_ns,
                mean_records_touched: touched,
                mean_point_lookups: lookups,
                mean_result_rows: result,
                stash_rows: None,
                index_bytes,
            });
        }
    }

    Ok(BenchReport {
        dataset_rows: reference.table().row_count(),
        host_variant: reference.host().variant_name().to_string(),
        target_buckets: reference.targets().len(),
        beta: config.beta,
        entries,
    })
}

/// Writes the report as CSV (one line per engine × selectivity).
pub fn write_csv<W: Write>(report: &BenchReport, mut w: W) -> Result<()> {
    writeln!(
        w,
        "engine,alpha,selectivity,actual_selectivity,queries,mean_ns,median_ns,\
         mean_records_touched,mean_point_lookups,mean_result_rows,stash_rows,index_bytes"
    )?;
    for e in &report.entries {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            e.engine,
            e.alpha.map_or(String::new(), |a| a.to_string()),
            e.selectivity,
            e.actual_selectivity,
            e.queries,
            e.mean_ns,
            e.median_ns,
            e.mean_records_touched,
            e.mean_point_lookups,
            e.mean_result_rows,
            e.stash_rows.map_or(String::new(), |s| s.to_string()),
            e.index_bytes
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BenchConfig {
        BenchConfig {
            dataset: DatasetSpec::Synthetic {
                spec: SyntheticSpec {
                    rows: 4000,
                    noise_fraction: 0.2,
                    noise_scale: 200_000.0,
                    seed: 60,
                },
            },
            host: HostIndexConfig::Clustered1d { column: "host".into(), max_buckets: 50 },
            target_column: "target".into(),
            alphas: vec![0.5, 2.0],
            beta: 10.0,
            selectivities: vec![0.01, 0.1],
            queries_per_selectivity: 12,
            baselines: default_baselines(),
            target_buckets: None,
            seed: 61,
        }
    }

    #[test]
    fn full_run_produces_expected_grid_of_entries() {
        let report = run(&tiny_config(), true).unwrap();
        assert_eq!(report.dataset_rows, 4000);
        // 2 alphas × 2 selectivities + 3 baselines × 2 selectivities.
        assert_eq!(report.entries.len(), 10);
        // Cap derives from s=0.01 → 100; duplicate ties may trim a few edges.
        assert!((90..=100).contains(&report.target_buckets), "got {}", report.target_buckets);
        for e in &report.entries {
            assert_eq!(e.mean_ns, 0.0, "no_timing must zero the clocks");
            assert!(e.actual_selectivity > 0.0);
            assert!(
                e.actual_selectivity >= e.selectivity / 2.0
                    && e.actual_selectivity <= e.selectivity * 2.0,
                "{} at s={} got {}",
                e.engine,
                e.selectivity,
                e.actual_selectivity
            );
        }
        let cortex_entries: Vec<_> =
            report.entries.iter().filter(|e| e.engine == "cortex").collect();
        assert!(cortex_entries.iter().all(|e| e.stash_rows.is_some()));
        // Heavier alpha cannot stash more.
        assert!(cortex_entries[0].stash_rows >= cortex_entries[2].stash_rows);
    }

    #[test]
    fn csv_writer_emits_one_line_per_entry() {
        let report = run(&tiny_config(), true).unwrap();
        let mut buf = Vec::new();
        write_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + report.entries.len());
        assert!(text.starts_with("engine,alpha,"));
    }

    #[test]
    fn minimal_json_config_fills_defaults() {
        let json = r#"{
            "dataset": {"kind": "synthetic", "rows": 100, "noise_fraction": 0.1, "noise_scale": 1000.0},
            "host": {"kind": "clustered_1d", "column": "host"},
            "target_column": "target"
        }"#;
        let config: BenchConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.alphas, vec![1.0]);
        assert_eq!(config.beta, 10.0);
        assert_eq!(config.queries_per_selectivity, 100);
        assert_eq!(config.baselines.len(), 3);
        assert_eq!(config.seed, 0);
    }

    #[test]
    fn empty_axes_are_rejected() {
        let mut config = tiny_config();
        config.alphas.clear();
        assert!(run(&config, true).is_err());
        let mut config = tiny_config();
        config.selectivities.clear();
        assert!(run(&config, true).is_err());
    }
}

//! Workbench CLI for the correlation index.
//!
//! Every subcommand prints machine-readable JSON on stdout (one object, or
//! one object per line for `query`) and human-readable errors on stderr.
//! Exit codes: 0 on success, 2 when an indexed execution disagreed with the
//! full-scan oracle, 1 for everything else. Setting `CORTEX_SEED` overrides
//! the seed of any command that consumes randomness.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};

use cortex::bench::{self, BenchConfig, DatasetSpec};
use cortex::calibrate::{self, TimingMode};
use cortex::format;
use cortex::index::{CortexConfig, CortexIndex, StashPolicy, TargetBucketSpec};
use cortex::query::{self, ExecutionStats, RangeQuery};
use cortex::store::{ingest_csv, SchemaColumn};
use cortex::synth::{self, SyntheticSpec};
use cortex::workload::{self, WorkloadSpec};
use cortex::{Error, HostIndexConfig};

#[derive(Parser)]
#[command(
    name = "cortex",
    version,
    about = "Correlation-index workbench over a clustered column store"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV file into the columnar table format.
    Ingest(IngestArgs),
    /// Generate a synthetic correlated dataset.
    Synth(SynthArgs),
    /// Generate a selectivity-tuned range-query workload.
    Workload(WorkloadArgs),
    /// Build an index and print its summary.
    Build(BuildCmd),
    /// Probe an index to fit the scan/lookup timing model behind beta.
    Calibrate(CalibrateArgs),
    /// Execute a workload file against an index.
    Query(QueryArgs),
    /// Insert rows through the maintenance path and report what it did.
    Insert(InsertArgs),
    /// Run the benchmark matrix described by a JSON config.
    Bench(BenchArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Source CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Column declaration `name:kind` (kind: int | float | cat); repeatable.
    #[arg(long = "column", required = true)]
    columns: Vec<String>,
    /// Schema column whose values become the clustered keys (must be unique).
    #[arg(long)]
    key_column: Option<String>,
    /// Bit-pack the value blocks in the output file.
    #[arg(long)]
    compress: bool,
    /// Destination table file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    rows: usize,
    /// Fraction of rows whose target is displaced off the host diagonal.
    #[arg(long, default_value_t = 0.2)]
    noise_fraction: f64,
    /// Laplace scale of the displacement.
    #[arg(long, default_value_t = 200_000.0)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination table file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct WorkloadArgs {
    /// Table file produced by `ingest` or `synth`.
    #[arg(long)]
    table: PathBuf,
    /// Column the queries filter on.
    #[arg(long)]
    column: String,
    #[arg(long)]
    selectivity: f64,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination workload JSON.
    #[arg(long)]
    output: PathBuf,
}

/// Everything needed to (re)build an index from a table file. Indexes are
/// deterministic given the table and these parameters, so they are rebuilt
/// per invocation instead of persisted.
#[derive(Args)]
struct BuildArgs {
    /// Table file produced by `ingest` or `synth`.
    #[arg(long)]
    table: PathBuf,
    /// Host column for the 1-D clustered variant.
    #[arg(long, conflicts_with = "octree_columns")]
    host_column: Option<String>,
    /// Bucket cap for the 1-D variant.
    #[arg(long, default_value_t = 1000)]
    max_buckets: usize,
    /// Comma-separated host columns for the octree variant.
    #[arg(long)]
    octree_columns: Option<String>,
    /// Leaf capacity for the octree variant.
    #[arg(long, default_value_t = 10_000)]
    max_leaf: usize,
    /// Column the index answers range queries on.
    #[arg(long)]
    target_column: String,
    /// Explicit target bucket count.
    #[arg(long, conflicts_with = "target_selectivity")]
    target_buckets: Option<usize>,
    /// Size target buckets for this smallest selectivity of interest.
    #[arg(long)]
    target_selectivity: Option<f64>,
    /// Memory-pressure weight of the threshold policy.
    #[arg(long, conflicts_with = "budget")]
    alpha: Option<f64>,
    /// Stash-row cap: greedily fill this budget instead of thresholding.
    #[arg(long)]
    budget: Option<u64>,
    /// Point-lookup cost in scanned-record units (see `calibrate`).
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
}

impl BuildArgs {
    fn config(&self) -> anyhow::Result<CortexConfig> {
        let host = match (&self.host_column, &self.octree_columns) {
            (Some(column), None) => HostIndexConfig::Clustered1d {
                column: column.clone(),
                max_buckets: self.max_buckets,
            },
            (None, Some(cols)) => HostIndexConfig::Octree {
                columns: cols.split(',').map(|c| c.trim().to_string()).collect(),
                max_leaf: self.max_leaf,
            },
            _ => bail!("pass exactly one of --host-column or --octree-columns"),
        };
        let target_buckets = match (self.target_buckets, self.target_selectivity) {
            (Some(n), None) => TargetBucketSpec::Count(n),
            (None, Some(s)) => TargetBucketSpec::FromSelectivity(s),
            (None, None) => TargetBucketSpec::Count(1000),
            (Some(_), Some(_)) => unreachable!("clap rejects the conflict"),
        };
        let policy = match (self.alpha, self.budget) {
            (_, Some(max_stash)) => StashPolicy::Budget { max_stash, weights: None },
            (alpha, None) => StashPolicy::Alpha(alpha.unwrap_or(1.0)),
        };
        Ok(CortexConfig {
            host,
            target_column: self.target_column.clone(),
            target_buckets,
            policy,
            beta: self.beta,
        })
    }

    fn build(&self) -> anyhow::Result<CortexIndex> {
        let table = format::load_table_from_path(&self.table)
            .with_context(|| format!("loading table {}", self.table.display()))?;
        Ok(CortexIndex::build(table, &self.config()?)?)
    }
}

#[derive(Args)]
struct BuildCmd {
    #[command(flatten)]
    build: BuildArgs,
    /// Also write the per-target inlier/stash assignment as JSON.
    #[arg(long)]
    export_assignment: Option<PathBuf>,
    /// Also write the host bucket layout as JSON.
    #[arg(long)]
    export_buckets: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    build: BuildArgs,
    /// Probe queries to fit against.
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// `measured` (wall clock) or `injected` (synthetic coefficients).
    #[arg(long, default_value = "measured")]
    mode: String,
    /// Dry runs per probe before timing (measured mode).
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Injected nanos per scanned record.
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    /// Injected nanos per point lookup.
    #[arg(long, default_value_t = 20.0)]
    c2: f64,
    /// Injected fixed nanos per query.
    #[arg(long, default_value_t = 500.0)]
    c3: f64,
    /// Injected multiplicative noise amplitude.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    build: BuildArgs,
    /// Workload JSON produced by `workload`.
    #[arg(long)]
    queries: PathBuf,
    /// Check every answer against the full-scan oracle; exit 2 on mismatch.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct InsertArgs {
    #[command(flatten)]
    build: BuildArgs,
    /// CSV of new rows; header columns must match the table schema.
    #[arg(long)]
    rows: PathBuf,
    /// Rebuild-and-rediff after the batch; reports corrected cells.
    #[arg(long)]
    revalidate: bool,
    /// Write the updated table back out.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json and report.csv.
    #[arg(long, default_value = "bench-out")]
    output_dir: PathBuf,
    /// Zero out wall-clock fields (stable output for comparisons).
    #[arg(long)]
    no_timing: bool,
}

fn main() -> ExitCode {
    // Die quietly when stdout closes early (`cortex ... | head`) instead of
    // panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    // Parse by hand so usage mistakes exit 1 like any other error; clap's
    // default of 2 would collide with the exactness-violation code. Help and
    // version requests surface here as "errors" but are successes.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code =
                if err.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
            let _ = err.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let exactness = err
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::ExactnessViolation(_))));
            if exactness {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// `CORTEX_SEED` beats per-command seed flags and config fields.
fn seed_override() -> anyhow::Result<Option<u64>> {
    match std::env::var("CORTEX_SEED") {
        Ok(v) => Ok(Some(v.parse().context("CORTEX_SEED must be an unsigned integer")?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context("reading CORTEX_SEED"),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Workload(args) => cmd_workload(args),
        Command::Build(args) => cmd_build(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Query(args) => cmd_query(args),
        Command::Insert(args) => cmd_insert(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_ingest(args: IngestArgs) -> anyhow::Result<()> {
    let schema: Vec<SchemaColumn> = args
        .columns
        .iter()
        .map(|c| c.parse().map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let file = File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))?;
    let outcome = ingest_csv(BufReader::new(file), &schema, args.key_column.as_deref(), args.compress)?;
    format::dump_table_to_path(&outcome.table, &args.output)?;
    print_json(&serde_json::json!({
        "rows": outcome.table.row_count(),
        "columns": schema.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
        "compressed": args.compress,
        "warnings": outcome.warnings,
        "output": args.output,
    }));
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        rows: args.rows,
        noise_fraction: args.noise_fraction,
        noise_scale: args.noise_scale,
        seed: seed_override()?.unwrap_or(args.seed),
    };
    let table = synth::generate(&spec)?;
    format::dump_table_to_path(&table, &args.output)?;
    print_json(&serde_json::json!({
        "rows": table.row_count(),
        "noise_fraction": spec.noise_fraction,
        "noise_scale": spec.noise_scale,
        "seed": spec.seed,
        "output": args.output,
    }));
    Ok(())
}

fn cmd_workload(args: WorkloadArgs) -> anyhow::Result<()> {
    let table = format::load_table_from_path(&args.table)?;
    let spec = WorkloadSpec {
        column: args.column,
        selectivity: args.selectivity,
        count: args.count,
        seed: seed_override()?.unwrap_or(args.seed),
    };
    let queries = workload::generate(&table, &spec)?;
    let out = File::create(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(out), &queries)?;
    print_json(&serde_json::json!({
        "queries": queries.len(),
        "selectivity": spec.selectivity,
        "seed": spec.seed,
        "output": args.output,
    }));
    Ok(())
}

fn cmd_build(args: BuildCmd) -> anyhow::Result<()> {
    let index = args.build.build()?;
    if let Some(path) = &args.export_assignment {
        let out = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(
            BufWriter::new(out),
            &index.assignment().export_json(index.targets()),
        )?;
    }
    if let Some(path) = &args.export_buckets {
        let out = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(out), &index.host().stats_json())?;
    }
    print_json(&index.summary_json());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let mode = match args.mode.as_str() {
        "measured" => TimingMode::Measured { warmup: args.warmup },
        "injected" => {
            TimingMode::Injected { c1: args.c1, c2: args.c2, c3: args.c3, noise: args.noise }
        }
        other => bail!("unknown calibration mode {other:?} (use measured or injected)"),
    };
    let index = args.build.build()?;
    let seed = seed_override()?.unwrap_or(args.seed);
    let fit = calibrate::run_calibration(&index, args.samples, seed, &mode)?;
    let mut out = serde_json::json!({
        "c1_ns_per_scanned": fit.c1,
        "c2_ns_per_lookup": fit.c2,
        "c3_ns_fixed": fit.c3,
        "beta": fit.beta(),
        "r_squared": fit.r_squared,
        "samples": fit.samples,
        "mode": args.mode,
    });
    if fit.c1 == 0.0 || fit.c2 == 0.0 {
        out["note"] = serde_json::json!(
            "fit pinned a cost at zero: timings on this machine/dataset do not \
             separate scan and lookup costs, so treat beta as unreliable and \
             prefer an explicitly chosen --beta"
        );
    }
    print_json(&out);
    Ok(())
}

fn cmd_query(args: QueryArgs) -> anyhow::Result<()> {
    let file = File::open(&args.queries)
        .with_context(|| format!("opening {}", args.queries.display()))?;
    let queries: Vec<RangeQuery> = serde_json::from_reader(BufReader::new(file))?;
    let index = args.build.build()?;
    let mut totals = ExecutionStats::default();
    for q in &queries {
        let (rows, stats) = query::execute(&index, q)?;
        if args.verify {
            let (want, _) = query::full_scan(index.table(), q)?;
            if rows != want {
                return Err(Error::ExactnessViolation(format!(
                    "query [{}, {}) returned {} rows, oracle {}",
                    q.lo,
                    q.hi,
                    rows.len(),
                    want.len()
                ))
                .into());
            }
        }
        totals.range_records_touched += stats.range_records_touched;
        totals.point_lookups += stats.point_lookups;
        totals.result_size += stats.result_size;
        totals.dedup_removed += stats.dedup_removed;
        totals.elapsed_nanos += stats.elapsed_nanos;
        println!(
            "{}",
            serde_json::json!({
                "lo": q.lo,
                "hi": q.hi,
                "result_size": stats.result_size,
                "range_records_touched": stats.range_records_touched,
                "point_lookups": stats.point_lookups,
                "dedup_removed": stats.dedup_removed,
                "elapsed_ns": stats.elapsed_nanos,
            })
        );
    }
    let n = queries.len().max(1) as f64;
    print_json(&serde_json::json!({
        "queries": queries.len(),
        "verified": args.verify,
        "mean_result_size": totals.result_size as f64 / n,
        "mean_records_touched": totals.range_records_touched as f64 / n,
        "mean_point_lookups": totals.point_lookups as f64 / n,
        "total_dedup_removed": totals.dedup_removed,
        "mean_elapsed_ns": totals.elapsed_nanos as f64 / n,
    }));
    Ok(())
}

fn cmd_insert(args: InsertArgs) -> anyhow::Result<()> {
    let mut index = args.build.build()?;
    let file =
        File::open(&args.rows).with_context(|| format!("opening {}", args.rows.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    // Accept any header order; map it onto the schema.
    let header = reader.headers()?.clone();
    let schema_names: Vec<String> =
        (0..index.table().column_count()).map(|c| index.table().meta(c).name.clone()).collect();
    let mut positions = Vec::with_capacity(schema_names.len());
    for name in &schema_names {
        let pos = header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("insert CSV is missing column {name:?}"))?;
        positions.push(pos);
    }
    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        raw_rows.push(
            positions
                .iter()
                .map(|&p| record.get(p).unwrap_or_default().to_string())
                .collect(),
        );
    }

    let rows = index.encode_rows(&raw_rows)?;
    let report = index.insert_batch(&rows)?;
    let corrections = if args.revalidate { Some(index.revalidate()) } else { None };
    if let Some(path) = &args.output {
        format::dump_table_to_path(index.table(), path)?;
    }
    let mut out = serde_json::to_value(report)?;
    out["revalidate_corrections"] = serde_json::to_value(corrections)?;
    out["total_rows"] = serde_json::json!(index.table().row_count());
    print_json(&out);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let file = File::open(&args.config)
        .with_context(|| format!("opening {}", args.config.display()))?;
    let mut config: BenchConfig = serde_json::from_reader(BufReader::new(file))?;
    if let Some(seed) = seed_override()? {
        config.seed = seed;
        if let DatasetSpec::Synthetic { spec } = &mut config.dataset {
            spec.seed = seed;
        }
    }
    let report = bench::run(&config, args.no_timing)?;
    std::fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating {}", args.output_dir.display()))?;
    let json_path = args.output_dir.join("report.json");
    let csv_path = args.output_dir.join("report.csv");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&json_path)?), &report)?;
    bench::write_csv(&report, BufWriter::new(File::create(&csv_path)?))?;
    print_json(&serde_json::json!({
        "dataset_rows": report.dataset_rows,
        "host_variant": report.host_variant,
        "target_buckets": report.target_buckets,
        "entries": report.entries.len(),
        "report_json": json_path,
        "report_csv": csv_path,
    }));
    Ok(())
}

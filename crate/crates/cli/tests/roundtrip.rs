//! End-to-end drive of the binary: synth → workload → build → verified
//! query → insert → verified re-query → ingest → bench, plus the exit-code
//! contract for bad invocations.

use std::path::Path;
use std::process::{Command, Output};

fn cortex(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cortex"))
        .args(args)
        .current_dir(dir)
        .env_remove("CORTEX_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    // `query` prints one JSON line per query before the summary object;
    // locate the last top-level object.
    let start = text.rfind("\n{").map(|p| p + 1).unwrap_or(0);
    serde_json::from_str(&text[start..]).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {text}");
    })
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = cortex(
        &[
            "synth",
            "--rows",
            "20000",
            "--noise-fraction",
            "0.2",
            "--noise-scale",
            "200000",
            "--seed",
            "7",
            "--output",
            "table.ct",
        ],
        dir,
    );
    assert_success(&out, "synth");
    assert_eq!(stdout_json(&out)["rows"], 20000);

    let out = cortex(
        &[
            "workload",
            "--table",
            "table.ct",
            "--column",
            "target",
            "--selectivity",
            "0.001",
            "--count",
            "25",
            "--seed",
            "3",
            "--output",
            "queries.json",
        ],
        dir,
    );
    assert_success(&out, "workload");
    assert_eq!(stdout_json(&out)["queries"], 25);

    let build_flags = [
        "--table",
        "table.ct",
        "--host-column",
        "host",
        "--max-buckets",
        "400",
        "--target-column",
        "target",
        "--target-buckets",
        "200",
        "--alpha",
        "1.0",
    ];
    let mut args = vec!["build"];
    args.extend_from_slice(&build_flags);
    args.extend_from_slice(&[
        "--export-assignment",
        "assignment.json",
        "--export-buckets",
        "buckets.json",
    ]);
    let out = cortex(&args, dir);
    assert_success(&out, "build");
    let summary = stdout_json(&out);
    assert_eq!(summary["rows"], 20000);
    assert!(summary["stash_rows"].as_u64().unwrap() > 0);
    for export in ["assignment.json", "buckets.json"] {
        let text = std::fs::read_to_string(dir.join(export)).unwrap();
        serde_json::from_str::<serde_json::Value>(&text)
            .unwrap_or_else(|e| panic!("{export} is not JSON: {e}"));
    }

    let mut args = vec!["query"];
    args.extend_from_slice(&build_flags);
    args.extend_from_slice(&["--queries", "queries.json", "--verify"]);
    let out = cortex(&args, dir);
    assert_success(&out, "query --verify");
    let summary = stdout_json(&out);
    assert_eq!(summary["queries"], 25);
    assert_eq!(summary["verified"], true);
    assert!(summary["mean_result_size"].as_f64().unwrap() > 0.0);

    // Insert a batch through the maintenance path and persist the new table.
    let mut csv = String::from("target,host\n");
    for i in 0..50 {
        let host = i * 19_333 % 1_000_000;
        let target = if i % 2 == 0 { host } else { (host + 500_000) % 1_000_000 };
        csv.push_str(&format!("{target},{host}\n"));
    }
    std::fs::write(dir.join("new_rows.csv"), csv).unwrap();
    let mut args = vec!["insert"];
    args.extend_from_slice(&build_flags);
    args.extend_from_slice(&[
        "--rows",
        "new_rows.csv",
        "--revalidate",
        "--output",
        "table2.ct",
    ]);
    let out = cortex(&args, dir);
    assert_success(&out, "insert");
    let report = stdout_json(&out);
    assert_eq!(report["rows"], 50);
    assert_eq!(report["total_rows"], 20050);

    // The persisted post-insert table still answers exactly.
    let mut args = vec!["query", "--table", "table2.ct"];
    args.extend_from_slice(&build_flags[2..]);
    args.extend_from_slice(&["--queries", "queries.json", "--verify"]);
    let out = cortex(&args, dir);
    assert_success(&out, "query --verify after insert");
    assert_eq!(stdout_json(&out)["verified"], true);
}

#[test]
fn ingest_octree_and_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let mut csv = String::from("id,x,y,score,label\n");
    for i in 0..600 {
        let x = (i * 37) % 1000;
        let y = (i * 91) % 1000;
        let score = (x + y) / 2 + (i % 7) as i32 * 10;
        let label = ["low", "mid", "high"][(i % 3) as usize];
        csv.push_str(&format!("{i},{x},{y},{score}.5,{label}\n"));
    }
    std::fs::write(dir.join("points.csv"), csv).unwrap();

    let out = cortex(
        &[
            "ingest",
            "--input",
            "points.csv",
            "--column",
            "x:int",
            "--column",
            "y:int",
            "--column",
            "score:float",
            "--column",
            "label:cat",
            "--column",
            "id:int",
            "--key-column",
            "id",
            "--compress",
            "--output",
            "points.ct",
        ],
        dir,
    );
    assert_success(&out, "ingest");
    assert_eq!(stdout_json(&out)["rows"], 600);

    let out = cortex(
        &[
            "build",
            "--table",
            "points.ct",
            "--octree-columns",
            "x,y",
            "--max-leaf",
            "100",
            "--target-column",
            "score",
            "--target-buckets",
            "40",
        ],
        dir,
    );
    assert_success(&out, "octree build");
    assert_eq!(stdout_json(&out)["host_variant"], "octree");

    let config = serde_json::json!({
        "dataset": {
            "kind": "synthetic",
            "rows": 4000,
            "noise_fraction": 0.2,
            "noise_scale": 50000.0
        },
        "host": {"kind": "clustered_1d", "column": "host", "max_buckets": 100},
        "target_column": "target",
        "alphas": [0.5, 2.0],
        "selectivities": [0.01],
        "queries_per_selectivity": 10
    });
    std::fs::write(dir.join("bench.json"), config.to_string()).unwrap();
    let out = cortex(
        &["bench", "--config", "bench.json", "--output-dir", "bench-out", "--no-timing"],
        dir,
    );
    assert_success(&out, "bench");
    let summary = stdout_json(&out);
    assert_eq!(summary["dataset_rows"], 4000);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bench-out/report.json")).unwrap())
            .unwrap();
    // Two cortex alphas plus three baselines, one selectivity each.
    assert_eq!(report["entries"].as_array().unwrap().len(), 5);
    let csv_report = std::fs::read_to_string(dir.join("bench-out/report.csv")).unwrap();
    assert_eq!(csv_report.lines().count(), 6);
}

#[test]
fn exit_codes_for_bad_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Usage error: conflicting host variants.
    let out = cortex(
        &[
            "build",
            "--table",
            "missing.ct",
            "--host-column",
            "a",
            "--octree-columns",
            "a,b",
            "--target-column",
            "t",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));

    // Runtime error: table file does not exist.
    let out = cortex(
        &["build", "--table", "missing.ct", "--host-column", "a", "--target-column", "t"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    // Help is a success.
    let out = cortex(&["--help"], dir);
    assert_eq!(out.status.code(), Some(0));
}

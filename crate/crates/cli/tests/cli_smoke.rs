//! End-to-end CLI checks on the bundled fixture: the pipeline finishes
//! quickly, emits every artifact, repeats byte-identically, and the exit
//! codes distinguish config, data and stage failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_clusterhash")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy.tsv")
}

fn toy_config(dir: &Path, out: &Path, scheme: &str) -> PathBuf {
    let text = format!(
        r#"
[data]
path = "{}"
mode = "retrieval"
ratios = [0.8, 0.1, 0.1]
seed = 42

[scheme]
name = "{scheme}"
resolution = 1.0
buckets_users = 6
buckets_items = 6
bits = 3
seed = 7

[model]
backbone = "mf"
dim = 16
loss = "bpr"

[train]
lr = 0.01
max_epochs = 30
patience = 10
seed = 1

[eval]
k = 10

[output]
dir = "{}"
"#,
        fixture().display(),
        out.display()
    );
    let path = dir.join(format!("{scheme}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const ARTIFACTS: &[&str] = &[
    "manifest.json",
    "train.tsv",
    "val.tsv",
    "test.tsv",
    "user_map.tsv",
    "item_map.tsv",
    "partition.tsv",
    "assignment.tsv",
    "collision.json",
    "checkpoint.bin",
    "checkpoint.json",
    "history.csv",
    "metrics.json",
    "metrics.csv",
];

#[test]
fn full_pipeline_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = toy_config(dir.path(), &out, "graph_hash");
    let started = Instant::now();
    run_ok(&["--config", cfg.to_str().unwrap(), "run"]);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "pipeline took {elapsed:.1}s on the toy fixture");
    for name in ARTIFACTS {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }
}

#[test]
fn repeated_cluster_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = toy_config(dir.path(), &out, "graph_hash");
    let cfg = cfg.to_str().unwrap();
    run_ok(&["--config", cfg, "ingest"]);
    run_ok(&["--config", cfg, "cluster"]);
    let first = fs::read(out.join("partition.tsv")).unwrap();
    run_ok(&["--config", cfg, "cluster"]);
    let second = fs::read(out.join("partition.tsv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn every_scheme_flows_through_hash() {
    let dir = tempfile::tempdir().unwrap();
    for scheme in [
        "full",
        "random",
        "frequency",
        "double",
        "double_frequency",
        "lsh_structure",
        "graph_hash",
        "double_graph_hash",
    ] {
        let out = dir.path().join(format!("out_{scheme}"));
        let cfg = toy_config(dir.path(), &out, scheme);
        let cfg = cfg.to_str().unwrap();
        run_ok(&["--config", cfg, "ingest"]);
        if scheme.contains("graph") {
            run_ok(&["--config", cfg, "cluster"]);
        }
        run_ok(&["--config", cfg, "hash"]);
        assert!(out.join("assignment.tsv").exists(), "{scheme} wrote no assignment");
    }
}

#[test]
fn bench_sweeps_emit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = format!(
        r#"
[data]
path = "{}"
mode = "retrieval"
seed = 42

[scheme]
name = "graph_hash"
resolution = 1.0
seed = 7

# a propagation backbone: the gamma sweep must still run (it pins its own)
[model]
backbone = "lightgcn"
n_layers = 1
dim = 8
loss = "bpr"

[train]
lr = 0.01
max_epochs = 3
patience = 3
seed = 1

[eval]
k = 10

[bench]
resolutions = [1.0, 4.0]
gammas = [0.5, 2.0]

[output]
dir = "{}"
"#,
        fixture().display(),
        out.display()
    );
    let cfg = dir.path().join("bench.toml");
    fs::write(&cfg, text).unwrap();
    let cfg = cfg.to_str().unwrap();
    run_ok(&["--config", cfg, "ingest"]);
    run_ok(&["--config", cfg, "bench", "--sweep", "resolution"]);
    run_ok(&["--config", cfg, "bench", "--sweep", "gamma"]);
    let res = fs::read_to_string(out.join("bench_resolution.csv")).unwrap();
    // header + one row per (resolution, scheme) pair
    assert_eq!(res.lines().count(), 1 + 2 * 2, "resolution sweep rows:\n{res}");
    let gamma = fs::read_to_string(out.join("bench_gamma.csv")).unwrap();
    assert_eq!(gamma.lines().count(), 1 + 2 * 3, "gamma sweep rows:\n{gamma}");
}

#[test]
fn ctr_pipeline_end_to_end() {
    use clusterhash::synthetic::{planted_ctr, PlantedConfig};
    let dir = tempfile::tempdir().unwrap();
    // materialize a small labeled dataset as a TSV input
    let ds = planted_ctr(
        &PlantedConfig { n_users: 120, n_items: 60, n_clusters: 6, avg_degree: 10, p_in: 0.85 },
        11,
    );
    let mut text = String::new();
    for r in &ds.records {
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            ds.user_tokens[r.user as usize],
            ds.item_tokens[r.item as usize],
            r.label.unwrap()
        ));
    }
    let data_path = dir.path().join("ctr.tsv");
    fs::write(&data_path, text).unwrap();

    let out = dir.path().join("out");
    let cfg_path = dir.path().join("ctr.toml");
    fs::write(
        &cfg_path,
        format!(
            r#"
[data]
path = "{}"
mode = "ctr"
seed = 3

[scheme]
name = "double_graph_hash"
resolution = 1.0
seed = 5

[model]
backbone = "ctr_logistic"
dim = 8
loss = "logloss"

[train]
lr = 0.01
batch_size = 256
max_epochs = 20
patience = 5
seed = 2

[output]
dir = "{}"
"#,
            data_path.display(),
            out.display()
        ),
    )
    .unwrap();
    run_ok(&["--config", cfg_path.to_str().unwrap(), "run"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["logloss"].as_f64().is_some());
    assert!(metrics["auc"].as_f64().is_some());
    assert!(metrics["recall_at_k"].is_null());
}

#[test]
fn rating_normalization_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("ratings.tsv");
    fs::write(&data_path, "a\tx\t5\na\ty\t1\nb\tx\t3\nb\ty\t4\n").unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("ratings.toml");
    fs::write(
        &cfg_path,
        format!(
            r#"
[data]
path = "{}"
mode = "ctr"
normalize_ratings = true
ratios = [1.0, 0.0, 0.0]
seed = 0

[scheme]
name = "full"

[model]
backbone = "ctr_logistic"
dim = 4
loss = "logloss"

[output]
dir = "{}"
"#,
            data_path.display(),
            out.display()
        ),
    )
    .unwrap();
    run_ok(&["--config", cfg_path.to_str().unwrap(), "ingest"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    // the rating-3 record is dropped; the others map to binary labels
    assert_eq!(manifest["n_records"], 3);
    let train = fs::read_to_string(out.join("train.tsv")).unwrap();
    assert!(train.lines().filter(|l| !l.starts_with('#')).all(|l| {
        l.ends_with("\t0") || l.ends_with("\t1")
    }));
}

#[test]
fn exit_codes() {
    // 1: config error
    let out = run(&["--config", "/nonexistent/config.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    // 2: data error (input file missing)
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        format!(
            "[data]\npath = \"/nonexistent/data.tsv\"\nmode = \"retrieval\"\n\n[scheme]\nname = \"full\"\n\n[output]\ndir = \"{}\"\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = run(&["--config", bad.to_str().unwrap(), "ingest"]);
    assert_eq!(out.status.code(), Some(2));

    // 1: invalid scheme parameters
    let invalid = dir.path().join("invalid.toml");
    fs::write(
        &invalid,
        format!(
            "[data]\npath = \"{}\"\nmode = \"retrieval\"\n\n[scheme]\nname = \"random\"\n\n[output]\ndir = \"{}\"\n",
            fixture().display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = run(&["--config", invalid.to_str().unwrap(), "hash"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_refuses_mismatched_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = toy_config(dir.path(), &out, "full");
    let cfg = cfg.to_str().unwrap();
    run_ok(&["--config", cfg, "run"]);
    // a seed override changes the config hash: stale artifacts are refused
    let refused = run(&["--config", cfg, "--seed", "999", "eval"]);
    assert_eq!(refused.status.code(), Some(2), "{refused:?}");
}

//! End-to-end tests of the `gfs` binary on synthetic TU-format fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gfs_core::cluster::ClusterModel;
use gfs_core::kernel::KernelCache;
use gfs_core::synth::{two_family_dataset, SynthOptions};
use gfs_core::tu::write_tu_dataset;

fn gfs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gfs"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("spawn gfs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// Writes a synthetic two-family dataset under `<root>/<name>/` in TU format.
fn write_fixture(root: &Path, name: &str, graphs_per_class: usize, seed: u64) {
    let mut ds = two_family_dataset::<f64>(&SynthOptions {
        graphs_per_class,
        seed,
        min_nodes: 5,
        max_nodes: 7,
        ..SynthOptions::default()
    });
    ds.name = name.to_string();
    write_tu_dataset(&ds, &root.join(name)).unwrap();
}

fn fixture_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gfs-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn kernel_command_writes_loadable_idempotent_cache() {
    let dir = fixture_dir("kernel");
    write_fixture(&dir, "twofam", 6, 0);
    let cache1 = dir.join("twofam.kernel");
    let cache2 = dir.join("twofam-again.kernel");
    for out in [&cache1, &cache2] {
        let output = run_ok(
            gfs()
                .args(["kernel", "--dataset", "twofam", "--seed", "3"])
                .arg("--data-dir")
                .arg(&dir)
                .arg("--out")
                .arg(out),
        );
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("n=12"), "stdout: {stdout}");
        assert!(stdout.contains("scheme=hashed"));
    }
    // Identical inputs and seed produce identical bytes.
    let b1 = std::fs::read(&cache1).unwrap();
    let b2 = std::fs::read(&cache2).unwrap();
    assert_eq!(b1, b2);

    let (cache, config) = KernelCache::load(&cache1).unwrap();
    assert_eq!(cache.len(), 12);
    assert_eq!(config.seed, 3);
}

#[test]
fn kernel_command_single_graph_cache_normalizes_to_one() {
    let dir = fixture_dir("kernel-single");
    let mut ds = two_family_dataset::<f64>(&SynthOptions {
        graphs_per_class: 1,
        ..SynthOptions::default()
    });
    ds.graphs.truncate(1);
    ds.num_classes = 1;
    ds.name = "single".into();
    write_tu_dataset(&ds, &dir.join("single")).unwrap();

    let cache_path = dir.join("single.kernel");
    run_ok(
        gfs()
            .args(["kernel", "--dataset", "single"])
            .arg("--data-dir")
            .arg(&dir)
            .arg("--out")
            .arg(&cache_path),
    );
    let (cache, _) = KernelCache::load(&cache_path).unwrap();
    assert_eq!(cache.len(), 1);
    assert_eq!(cache.normalized()[[0, 0]], 1.0);
}

#[test]
fn cluster_command_k1_and_kn_and_families() {
    let dir = fixture_dir("cluster");
    write_fixture(&dir, "twofam", 5, 1);
    let cache_path = dir.join("twofam.kernel");
    run_ok(
        gfs()
            .args(["kernel", "--dataset", "twofam", "--seed", "0"])
            .arg("--data-dir")
            .arg(&dir)
            .arg("--out")
            .arg(&cache_path),
    );

    // K = 1: the single prototype is the global medoid.
    let report1 = dir.join("k1.txt");
    run_ok(
        gfs()
            .args(["cluster", "--rules", "1", "--seed", "7"])
            .arg("--cache")
            .arg(&cache_path)
            .arg("--out")
            .arg(&report1),
    );
    let model1 = ClusterModel::load(&report1).unwrap();
    let (cache, _) = KernelCache::load(&cache_path).unwrap();
    let raw = cache.raw();
    let medoid = (0..cache.len())
        .max_by(|&a, &b| {
            let sa: f64 = (0..cache.len()).map(|j| raw[[a, j]]).sum();
            let sb: f64 = (0..cache.len()).map(|j| raw[[b, j]]).sum();
            sa.partial_cmp(&sb).unwrap().then(b.cmp(&a))
        })
        .unwrap();
    assert_eq!(model1.prototypes, vec![medoid]);

    // K = N: every graph becomes a prototype.
    let report_n = dir.join("kn.txt");
    run_ok(
        gfs()
            .args(["cluster", "--rules", "10", "--seed", "7"])
            .arg("--cache")
            .arg(&cache_path)
            .arg("--out")
            .arg(&report_n),
    );
    let model_n = ClusterModel::load(&report_n).unwrap();
    let mut prototypes = model_n.prototypes.clone();
    prototypes.sort_unstable();
    assert_eq!(prototypes, (0..10).collect::<Vec<_>>());

    // K = 2 separates the families (graphs 0..5 are cycles, 5..10 stars).
    let report2 = dir.join("k2.txt");
    run_ok(
        gfs()
            .args(["cluster", "--rules", "2", "--seed", "0"])
            .arg("--cache")
            .arg(&cache_path)
            .arg("--out")
            .arg(&report2),
    );
    let model2 = ClusterModel::load(&report2).unwrap();
    let first_family = &model2.assignments[..5];
    let second_family = &model2.assignments[5..];
    assert!(first_family.iter().all(|&c| c == first_family[0]));
    assert!(second_family.iter().all(|&c| c == second_family[0]));
    assert_ne!(first_family[0], second_family[0]);
}

#[test]
fn train_eval_round_trip_reproduces_metrics() {
    let dir = fixture_dir("train");
    write_fixture(&dir, "twofam", 20, 2);
    let out = dir.join("run");
    let train_args = [
        "train",
        "--dataset",
        "twofam",
        "--rules",
        "2",
        "--variant",
        "gcn",
        "--hidden",
        "8",
        "--alpha",
        "1e-6",
        "--batch-size",
        "8",
        "--epochs",
        "8",
        "--patience",
        "8",
        "--seed",
        "5",
    ];
    let output = run_ok(
        gfs()
            .args(train_args)
            .arg("--data-dir")
            .arg(&dir)
            .arg("--out")
            .arg(&out),
    );
    let stdout = String::from_utf8_lossy(&output.stdout).to_string();
    assert!(out.join("model.ckpt").is_file());
    assert!(out.join("history.csv").is_file());

    // Idempotence: retraining with identical inputs writes identical files.
    let ckpt_bytes = std::fs::read(out.join("model.ckpt")).unwrap();
    let history_bytes = std::fs::read(out.join("history.csv")).unwrap();
    run_ok(
        gfs()
            .args(train_args)
            .arg("--data-dir")
            .arg(&dir)
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(std::fs::read(out.join("model.ckpt")).unwrap(), ckpt_bytes);
    assert_eq!(
        std::fs::read(out.join("history.csv")).unwrap(),
        history_bytes
    );

    // Best validation accuracy from the history, via max over the val_acc
    // column (the train summary prints the same number).
    let history = String::from_utf8(history_bytes).unwrap();
    let best_val: f64 = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().parse::<f64>().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        stdout.contains(&format!("best_val_acc={best_val:.4}")),
        "stdout: {stdout}"
    );

    // Re-evaluating the checkpoint on the validation split reproduces it.
    let eval_out = run_ok(
        gfs()
            .args(["eval", "--split", "val", "--dataset", "twofam"])
            .arg("--checkpoint")
            .arg(out.join("model.ckpt"))
            .arg("--data-dir")
            .arg(&dir),
    );
    let eval_stdout = String::from_utf8_lossy(&eval_out.stdout).to_string();
    assert!(
        eval_stdout.contains(&format!("accuracy={best_val:.4}")),
        "eval stdout: {eval_stdout}\nexpected accuracy={best_val:.4}"
    );
}

#[test]
fn grid_command_emits_per_cell_rows_and_summary() {
    let dir = fixture_dir("grid");
    write_fixture(&dir, "twofam", 12, 4);
    let grid_config = dir.join("grid.json");
    std::fs::write(
        &grid_config,
        r#"{
            "dataset": "twofam",
            "epochs": 4,
            "patience": 4,
            "batch_size": 8,
            "grid": {
                "rules": [2, 3],
                "hidden": [8],
                "alpha": [1e-6],
                "seeds": [0, 1]
            }
        }"#,
    )
    .unwrap();
    let out = dir.join("grid-out");
    run_ok(
        gfs()
            .args(["grid"])
            .arg("--config")
            .arg(&grid_config)
            .arg("--data-dir")
            .arg(&dir)
            .arg("--out")
            .arg(&out),
    );
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    // Header plus 2 rules × 1 hidden × 1 alpha × 2 seeds.
    assert_eq!(results.trim().lines().count(), 5, "results:\n{results}");
    assert!(results.lines().skip(1).all(|l| l.ends_with(",ok")));

    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    // One row per (rules, hidden, alpha) cell plus header, mean (±std) format.
    assert_eq!(summary.trim().lines().count(), 3, "summary:\n{summary}");
    assert!(summary.contains("(±"), "summary:\n{summary}");
    assert!(out.join("summary.csv").is_file());
}

#[test]
fn eval_rejects_unknown_split() {
    let dir = fixture_dir("badsplit");
    write_fixture(&dir, "twofam", 4, 0);
    let output = gfs()
        .args(["eval", "--split", "nonsense", "--dataset", "twofam"])
        .arg("--checkpoint")
        .arg(dir.join("missing.ckpt"))
        .arg("--data-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn data_dir_env_var_is_honored() {
    let dir = fixture_dir("envvar");
    write_fixture(&dir, "twofam", 4, 6);
    let cache = dir.join("env.kernel");
    run_ok(
        gfs()
            .args(["kernel", "--dataset", "twofam"])
            .env("GFS_DATA_DIR", &dir)
            .arg("--out")
            .arg(&cache),
    );
    assert!(cache.is_file());
}

#[test]
fn missing_dataset_fails_with_nonzero_exit() {
    let dir = fixture_dir("missing");
    let output = gfs()
        .args(["kernel", "--dataset", "ghost"])
        .arg("--data-dir")
        .arg(&dir)
        .arg("--out")
        .arg(dir.join("ghost.kernel"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ghost"), "stderr: {stderr}");
}

//! End-to-end runs of the binary on a tiny SBM.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tiny(dir: &Path, extra: &str, scenario: &str) -> PathBuf {
    let text = format!(
        r#"output_dir = "{out}"
{extra}
[dataset]
kind = "sbm"
nodes_per_class = 20
num_classes = 3
intra_edge_prob = 0.2
inter_edge_prob = 0.01
feature_dim = 8
seed = 3

[train]
hidden_units = 8
learning_rate = 0.01
train_epochs = 15
total_retrain_epochs = 25

[scenario]
{scenario}
"#,
        out = dir.join("out").display()
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn gvdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvdn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) {
    let out = gvdn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_clock_seconds");
            v
        })
        .collect()
}

const CLEAN: &str = r#"kind = "clean""#;

#[test]
fn train_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "", CLEAN);
    run_ok(&["train", "-c", cfg.to_str().unwrap()]);
    let out = dir.path().join("out");
    for f in ["checkpoint.json", "hemb.bin", "losses.csv", "train-metrics.jsonl", "train-summary.json", "config.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let losses = fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 16);
    // 60 nodes × 8 values plus the header.
    assert_eq!(fs::metadata(out.join("hemb.bin")).unwrap().len(), 24 + 8 * 60 * 8);
}

#[test]
fn repetitions_get_seed_suffixes_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "repetitions = 3\nseeds = [4, 9, 11]", CLEAN);
    run_ok(&["train", "-c", cfg.to_str().unwrap()]);
    let out = dir.path().join("out");
    for s in [4, 9, 11] {
        for stem in ["checkpoint", "hemb", "losses"] {
            let ext = match stem {
                "checkpoint" => "json",
                "hemb" => "bin",
                _ => "csv",
            };
            assert!(out.join(format!("{stem}-seed{s}.{ext}")).is_file());
        }
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("train-summary.json")).unwrap()).unwrap();
    let rows = jsonl(&out.join("train-metrics.jsonl"));
    let accs: Vec<f64> = rows.iter().map(|r| r["accuracy"].as_f64().unwrap()).collect();
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((summary["rows"][0]["accuracy"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(summary["rows"][0]["accuracy"]["std"].as_f64().unwrap() >= 0.0);
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let scenario = "kind = \"random_perturb\"\np_rdm = 0.1";
    for d in [&a, &b] {
        let cfg = tiny(d.path(), "", scenario);
        run_ok(&["perturb-retrain", "-c", cfg.to_str().unwrap()]);
    }
    let read = |d: &tempfile::TempDir| jsonl(&d.path().join("out/retrain-metrics.jsonl"));
    assert_eq!(read(&a), read(&b));
    let ck = |d: &tempfile::TempDir| fs::read(d.path().join("out/retrain-checkpoint.json")).unwrap();
    assert_eq!(ck(&a), ck(&b));
}

#[test]
fn clean_scenario_leaves_perturbed_equal_to_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "", CLEAN);
    run_ok(&["train", "-c", cfg.to_str().unwrap()]);
    let out = dir.path().join("out");
    let ck = out.join("checkpoint.json");
    let hemb = out.join("hemb.bin");
    run_ok(&[
        "perturb-retrain",
        "-c",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--hemb",
        hemb.to_str().unwrap(),
    ]);
    let rows = jsonl(&out.join("retrain-metrics.jsonl"));
    assert_eq!(rows.len(), 3);
    let names: Vec<&str> = rows.iter().map(|r| r["row"].as_str().unwrap()).collect();
    assert_eq!(names, ["clean", "perturbed", "recovered"]);
    assert_eq!(rows[0]["accuracy"], rows[1]["accuracy"]);
    assert_eq!(rows[0]["normalized_entropy"], rows[1]["normalized_entropy"]);

    // Recomputing the reference from the checkpoint gives the same run.
    run_ok(&["perturb-retrain", "-c", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(jsonl(&out.join("retrain-metrics.jsonl")), rows);

    run_ok(&[
        "perturb-retrain",
        "-c",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--no-diffusion",
    ]);
    assert_eq!(jsonl(&out.join("retrain-no-diffusion-metrics.jsonl")).len(), 3);
}

#[test]
fn checkpoint_for_another_graph_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "", CLEAN);
    run_ok(&["train", "-c", cfg.to_str().unwrap()]);
    let ck = dir.path().join("out/checkpoint.json");
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let bigger = fs::read_to_string(tiny(&other, "", CLEAN))
        .unwrap()
        .replace("nodes_per_class = 20", "nodes_per_class = 25");
    let bigger_path = other.join("config.toml");
    fs::write(&bigger_path, bigger).unwrap();
    let out = gvdn(&["perturb-retrain", "-c", bigger_path.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let missing = dir.path().join("nowhere");
    let cfg = dir.path().join("planetoid.toml");
    fs::write(
        &cfg,
        format!(
            "output_dir = \"{}\"\n[dataset]\nkind = \"planetoid\"\ndir = \"{}\"\nname = \"cora\"\n",
            dir.path().join("out").display(),
            missing.display()
        ),
    )
    .unwrap();
    let out = gvdn(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&missing.join("cora.content").display().to_string()), "{err}");

    let out = gvdn(&["train", "-c", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = tiny(dir.path(), "", CLEAN);
    let out = gvdn(&["train", "-c", cfg.to_str().unwrap(), "--learning-rate", "10000"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = gvdn(&[
        "train",
        "-c",
        cfg.to_str().unwrap(),
        "--output-dir",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let out = gvdn(&["ablate-noise", "-c", cfg.to_str().unwrap(), "--weights", "0,1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_sweep_explore_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "", CLEAN);
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("out");

    run_ok(&["ablate-noise", "-c", c, "--weights", "0,0.5"]);
    let csv = fs::read_to_string(out.join("ablate-noise.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,weight,seed,accuracy,normalized_entropy");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("gcn,0,") && lines[2].starts_with("gvdn-vanilla,0,"));

    run_ok(&["sweep-gamma", "-c", c, "--values", "0.7"]);
    let csv = fs::read_to_string(out.join("sweep-gamma.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("sweep-gamma-summary.json")).unwrap()).unwrap();
    assert_eq!(summary["selected_gamma_min"], 0.7);

    run_ok(&["explore", "-c", c, "--mode", "sparse-labels", "--grid", "0.02,0.05"]);
    let csv = fs::read_to_string(out.join("explore-sparse-labels.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    run_ok(&["train", "-c", c]);
    let emb = out.join("emb.csv");
    run_ok(&[
        "export-embeddings",
        "-c",
        c,
        "--checkpoint",
        out.join("checkpoint.json").to_str().unwrap(),
        "--output",
        emb.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&emb).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 61);
    assert!(lines[0].starts_with("node_id,h0,"));
    assert_eq!(lines[1].split(',').count(), 9);
}

#[test]
fn zero_label_noise_matches_clean_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "", CLEAN);
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    run_ok(&["train", "-c", c]);
    let clean = &jsonl(&out.join("train-metrics.jsonl"))[0];
    run_ok(&["explore", "-c", c, "--mode", "label-noise", "--grid", "0"]);
    let row = &jsonl(&out.join("explore-label-noise.jsonl"))[0];
    assert_eq!(row["before"]["accuracy"], clean["accuracy"]);
    assert_eq!(row["before"]["normalized_entropy"], clean["normalized_entropy"]);
}

#[test]
fn bundled_configs_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            seen += 1;
            let text = fs::read_to_string(&path).unwrap();
            let value: toml::Value = toml::from_str(&text).unwrap();
            assert!(value.get("dataset").is_some(), "{}", path.display());
        }
    }
    assert!(seen >= 3);
    // Cora and Citeseer ship their tuned γ_min.
    let gamma = |name: &str| {
        let v: toml::Value = toml::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap();
        v["train"]["gamma_min"].as_float().unwrap()
    };
    assert_eq!(gamma("cora.toml"), 0.6);
    assert_eq!(gamma("citeseer.toml"), 0.98);

    // The effective config a run records parses back to itself.
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run_ok(&[
        "train",
        "-c",
        dir.join("sbm.toml").to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--hidden",
        "4",
    ]);
    let first = fs::read_to_string(out.join("config.toml")).unwrap();
    let again = tmp.path().join("again");
    run_ok(&[
        "train",
        "-c",
        out.join("config.toml").to_str().unwrap(),
        "--output-dir",
        again.to_str().unwrap(),
    ]);
    let second = fs::read_to_string(again.join("config.toml")).unwrap();
    assert_eq!(first.replace(out.to_str().unwrap(), ""), second.replace(again.to_str().unwrap(), ""));
}

//! Integration tests of the command-line surface: exit codes, determinism,
//! artifact layout, config-file precedence, and the report verdicts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metagen"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_data(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join("data.jsonl");
    let out = bin()
        .args(["gen-data", "--n", &n.to_string(), "--seed", &seed.to_string()])
        .arg("--out")
        .arg(&path)
        .output()
        .unwrap();
    ok(&out);
    path
}

/// Tiny but complete training run: all kinds, one seed, one epoch.
fn train_tiny(dir: &Path, data: &Path, models: &str) -> PathBuf {
    let runs = dir.join("runs");
    let out = bin()
        .args(["train", "--models", models, "--seeds", "0", "--epochs", "1"])
        .args(["--marginal-epochs", "1"])
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(&runs)
        .env("METAGEN_THREADS", "1")
        .output()
        .unwrap();
    ok(&out);
    runs
}

#[test]
fn gen_data_is_deterministic_and_sized() {
    let dir = tmp("gen");
    let a = gen_data(&dir, 600, 7);
    let first = std::fs::read(&a).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 601, "header + records");

    let b = dir.join("again.jsonl");
    let out = bin()
        .args(["gen-data", "--n", "600", "--seed", "7"])
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(first, std::fs::read(&b).unwrap());
}

#[test]
fn gen_data_rejects_zero_records() {
    let dir = tmp("gen-zero");
    let out = bin()
        .args(["gen-data", "--n", "0"])
        .arg("--out")
        .arg(dir.join("x.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = bin().args(["gen-data", "--frobnicate", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["no-such-command"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_missing_dataset_names_the_path() {
    let dir = tmp("missing");
    let out = bin()
        .args(["train", "--data"])
        .arg(dir.join("nope.jsonl"))
        .arg("--out")
        .arg(dir.join("runs"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}

#[test]
fn train_selection_contract_and_resume() {
    let dir = tmp("select");
    let data = gen_data(&dir, 240, 1);
    let runs = train_tiny(&dir, &data, "meta-vae");

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(runs.join("manifest.json")).unwrap()).unwrap();
    let run_ids: Vec<&str> = manifest["runs"].as_object().unwrap().keys().map(|s| s.as_str()).collect();
    assert_eq!(
        run_ids,
        vec![
            "marginal-density1",
            "marginal-density2",
            "marginal-inner-cyl",
            "marginal-outer-cyl",
            "meta-vae-s0"
        ],
        "4 marginals + 1 meta checkpoint"
    );
    for id in &run_ids {
        assert!(runs.join(format!("{id}.ckpt.json")).exists());
        assert!(runs.join(format!("{id}.log.csv")).exists());
    }

    // rerun is a no-op on a completed manifest
    let before = std::fs::read(runs.join("manifest.json")).unwrap();
    let hashes_before: Vec<String> = manifest["runs"]
        .as_object()
        .unwrap()
        .values()
        .map(|e| e["checkpoint_hash"].as_str().unwrap().to_string())
        .collect();
    let out = bin()
        .args(["train", "--models", "meta-vae", "--seeds", "0", "--epochs", "1"])
        .args(["--marginal-epochs", "1"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&runs)
        .env("METAGEN_THREADS", "1")
        .output()
        .unwrap();
    ok(&out);
    let manifest2: serde_json::Value =
        serde_json::from_slice(&std::fs::read(runs.join("manifest.json")).unwrap()).unwrap();
    let hashes_after: Vec<String> = manifest2["runs"]
        .as_object()
        .unwrap()
        .values()
        .map(|e| e["checkpoint_hash"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(hashes_before, hashes_after);
    drop(before);
}

#[test]
fn train_marginals_only() {
    let dir = tmp("marginals");
    let data = gen_data(&dir, 240, 2);
    let runs = dir.join("runs");
    let out = bin()
        .args(["train-marginals", "--marginal-epochs", "1"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&runs)
        .env("METAGEN_THREADS", "1")
        .output()
        .unwrap();
    ok(&out);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(runs.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_object().unwrap().len(), 4);
}

#[test]
fn evaluate_reference_rows_and_row_count() {
    let dir = tmp("eval");
    let data = gen_data(&dir, 240, 3);
    let runs = train_tiny(&dir, &data, "meta-vae,vanilla-vae");
    let eval_dir = dir.join("eval");
    let out = bin()
        .args(["evaluate", "--samples", "500", "--seed", "11", "--reference-rows"])
        .arg("--runs")
        .arg(&runs)
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap();
    ok(&out);

    let summary = std::fs::read_to_string(eval_dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    // header + (2 models x 1 seed + 2 reference rows) x 13 metrics
    assert_eq!(lines.len(), 1 + 4 * 13);

    // the reference scored against itself is exactly zero dissimilarity
    for metric in ["w_rext1_rint2", "w_rext1_rext2", "w_rext2_rint2", "w_d1_d2"] {
        assert!(
            lines.contains(&format!("reference,0,{metric},0").as_str()),
            "missing zero row for {metric}"
        );
    }
    assert!(lines.contains(&"reference,0,residual_slope,1"));

    // plot data landed
    assert!(eval_dir.join("joints/meta-vae-s0-d1_d2.csv").exists());
    assert!(eval_dir.join("residuals/vanilla-vae-s0.csv").exists());
    assert!(eval_dir.join("errors/meta-vae-s0.csv").exists());
    assert!(eval_dir.join("boxplot.csv").exists());

    // evaluation is deterministic: byte-identical on rerun
    let again = dir.join("eval2");
    let out = bin()
        .args(["evaluate", "--samples", "500", "--seed", "11", "--reference-rows"])
        .arg("--runs")
        .arg(&runs)
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(summary, std::fs::read_to_string(again.join("summary.csv")).unwrap());
}

#[test]
fn evaluate_without_manifest_is_a_validation_error() {
    let dir = tmp("eval-nomanifest");
    let out = bin()
        .args(["evaluate"])
        .arg("--runs")
        .arg(dir.join("void"))
        .arg("--out")
        .arg(dir.join("eval"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_single_model_table_skips_verdicts() {
    let dir = tmp("report-single");
    std::fs::write(
        dir.join("summary.csv"),
        "model,seed,metric,value\nmeta-vae,0,ep_mean_abs,10.0\nmeta-vae,1,ep_mean_abs,12.0\n",
    )
    .unwrap();
    let out = bin().args(["report", "--eval"]).arg(&dir).output().unwrap();
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("verdicts: skipped (missing models:"));
    assert!(stdout.contains("meta-vae"));
    assert!(dir.join("report.csv").exists());

    let out = bin()
        .args(["report", "--assert-paper-ordering", "--eval"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "assertion cannot hold with missing models");
}

#[test]
fn report_verdict_lines_are_stable() {
    let dir = tmp("report-golden");
    let mut csv = String::from("model,seed,metric,value\n");
    // synthetic summary in which the expected orderings hold exactly
    let rows = [
        ("meta-vae", 0.10, 1.0),
        ("smvae", 0.11, 1.1),
        ("vanilla-vae", 0.30, 2.0),
        ("vanilla-gan", 0.90, 8.0),
    ];
    for (model, w, ec) in rows {
        for metric in
            ["ep_mean_abs", "w_rext1_rint2", "w_rext1_rext2", "w_rext2_rint2", "w_d1_d2"]
        {
            csv.push_str(&format!("{model},0,{metric},{w}\n"));
        }
        csv.push_str(&format!("{model},0,ec_mean_abs,{ec}\n"));
    }
    std::fs::write(dir.join("summary.csv"), csv).unwrap();

    let out = bin().args(["report", "--assert-paper-ordering", "--eval"]).arg(&dir).output().unwrap();
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let expected = [
        "verdict ordering[ep_mean_abs]: PASS (meta-vae 0.100000 vs vanilla-vae 0.300000 vs vanilla-gan 0.900000)",
        "verdict ordering[w_d1_d2]: PASS (meta-vae 0.100000 vs vanilla-vae 0.300000 vs vanilla-gan 0.900000)",
        "verdict smvae-comparable: PASS (worst relative excess over meta-vae 0.1000)",
        "verdict gan-contact-worst: PASS (vanilla-gan 8.0000 vs 2 x max(others) 2.0000)",
    ];
    for line in expected {
        assert!(stdout.contains(line), "missing `{line}` in:\n{stdout}");
    }
    assert_eq!(
        std::fs::read_to_string(dir.join("verdicts.txt")).unwrap().lines().count(),
        7,
        "five orderings + smvae + gan-contact"
    );
}

#[test]
fn config_file_overrides_defaults_but_flags_win() {
    let dir = tmp("config");
    std::fs::write(dir.join("gen.conf"), "n = 120\nseed = 9\n").unwrap();

    // file value used when the flag is absent
    let a = dir.join("a.jsonl");
    let out = bin()
        .args(["gen-data"])
        .arg("--config")
        .arg(dir.join("gen.conf"))
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap();
    ok(&out);
    let lines = std::fs::read_to_string(&a).unwrap();
    assert_eq!(lines.lines().count(), 121);
    assert!(lines.lines().next().unwrap().contains("\"seed\":9"));

    // explicit flag beats the file
    let b = dir.join("b.jsonl");
    let out = bin()
        .args(["gen-data", "--n", "60"])
        .arg("--config")
        .arg(dir.join("gen.conf"))
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(std::fs::read_to_string(&b).unwrap().lines().count(), 61);

    // unknown keys are rejected
    std::fs::write(dir.join("bad.conf"), "nonsense = 1\n").unwrap();
    let out = bin()
        .args(["gen-data", "--n", "10"])
        .arg("--config")
        .arg(dir.join("bad.conf"))
        .arg("--out")
        .arg(dir.join("c.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

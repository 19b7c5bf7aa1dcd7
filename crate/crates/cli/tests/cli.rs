use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hololink(dir: &Path, args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hololink"));
    cmd.current_dir(dir).args(args).env_remove("HOLOLINK_SEED").env("RUST_LOG", "warn");
    if let Some(s) = seed_env {
        cmd.env("HOLOLINK_SEED", s);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const FIXED: [&str; 6] = ["--hidden", "40", "--lambda", "1", "--kappa", "3"];

fn csv_seeds(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "seed").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "synthetic", "--agents", "3", "--ratios", "2,4", "--codecs", "hdc,svd", "--reps", "1"];
    args.extend(FIXED);
    ok(&hololink(dir.path(), &args, None));
    let csv = dir.path().join("results/results.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("dataset,N,classifier_kind,codec,ratio_param,seed,"));
    // per kind: none, deflate, 2 ratios x (hdc, svd, small)
    assert_eq!(text.lines().count(), 1 + 2 * (2 + 2 * 3));
    assert!(dir.path().join("results/blobs3x8_N3.svg").exists());

    let out = ok(&hololink(dir.path(), &["--out", "again", "report", "results/results.csv"], None));
    assert!(out.contains("blobs3x8_N3.svg"));
    assert_eq!(fs::read_to_string(dir.path().join("again/results.csv")).unwrap(), text);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "seed = 5\n").unwrap();
    let mut base = vec!["--config", "cfg.toml", "sweep", "synthetic", "--agents", "2", "--ratios", "2", "--codecs", "hdc", "--reps", "1", "--no-small", "--kinds", "rls"];
    base.extend(FIXED);
    let csv = dir.path().join("results/results.csv");

    ok(&hololink(dir.path(), &base, None));
    let from_config = csv_seeds(&csv);
    ok(&hololink(dir.path(), &base, Some("6")));
    let from_env = csv_seeds(&csv);
    let mut flagged = base.clone();
    flagged.extend(["--seed", "5"]);
    ok(&hololink(dir.path(), &flagged, Some("6")));
    let from_flag = csv_seeds(&csv);

    assert_ne!(from_config, from_env);
    assert_eq!(from_config, from_flag);
}

#[test]
fn quantize_writes_level_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["quantize", "synthetic", "--levels", "3,255", "--reps", "2"];
    args.extend(FIXED);
    ok(&hololink(dir.path(), &args, None));
    let text = fs::read_to_string(dir.path().join("results/quantization.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2 + 2);
    assert!(text.contains(",quant255,"));

    let mut bad = vec!["quantize", "synthetic", "--levels", "1"];
    bad.extend(FIXED);
    assert!(!hololink(dir.path(), &bad, None).status.success());
}

#[test]
fn tune_caches_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "[grid]\nhidden = [30, 60]\nlambda = [0.5, 2.0]\nkappa = [3]\n").unwrap();
    let out = ok(&hololink(dir.path(), &["--config", "cfg.toml", "tune", "synthetic"], None));
    assert!(out.starts_with("blobs3x8: H="));
    let cache = fs::read_to_string(dir.path().join("tuned.toml")).unwrap();
    assert!(cache.contains("[datasets.blobs3x8]"));

    // sweep picks the cached values up without retuning
    let out = ok(&hololink(
        dir.path(),
        &["sweep", "synthetic", "--agents", "2", "--ratios", "2", "--codecs", "hdc", "--reps", "1", "--no-small"],
        None,
    ));
    assert!(!out.contains("cv_accuracy"));
}

#[test]
fn manifest_datasets_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b,label\n");
    for i in 0..80 {
        let c = i % 2;
        csv.push_str(&format!("{},{},{}\n", c as f64 + (i as f64 * 0.37).sin() * 0.3, (i as f64).cos(), if c == 0 { "yes" } else { "no" }));
    }
    fs::write(dir.path().join("toy.csv"), csv).unwrap();
    fs::write(dir.path().join("toy.toml"), "name = \"toy\"\npath = \"toy.csv\"\nlabel_column = \"label\"\n").unwrap();
    let mut args = vec!["sweep", "toy.toml", "--agents", "4", "--ratios", "2", "--reps", "1"];
    args.extend(FIXED);
    ok(&hololink(dir.path(), &args, None));
    assert!(dir.path().join("results/toy_N4.svg").exists());

    let missing = hololink(dir.path(), &["tune", "nope.toml"], None);
    assert!(!missing.status.success());
    fs::write(dir.path().join("empty.csv"), "dataset,N,classifier_kind,codec,ratio_param,seed,mean_accuracy,per_agent_min,per_agent_max,payload_values_per_agent,payload_bytes_per_agent\n").unwrap();
    assert!(!hololink(dir.path(), &["report", "empty.csv"], None).status.success());
}

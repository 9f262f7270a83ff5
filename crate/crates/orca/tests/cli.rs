use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn orca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orca")).args(args).output().expect("binary runs")
}

fn synth(dir: &Path) {
    let out = orca(&["synth", "--seed", "1", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Rewrites `key = value` lines of the generated config.
fn edit_config(dir: &Path, edits: &[(&str, &str)]) -> String {
    let path = dir.join("orca.conf");
    let mut text = fs::read_to_string(&path).unwrap();
    for (key, val) in edits {
        let lines: Vec<String> = text
            .lines()
            .filter(|l| !l.starts_with(&format!("{} =", key)))
            .map(String::from)
            .collect();
        text = lines.join("\n") + "\n";
        if !val.is_empty() {
            text.push_str(&format!("{} = {}\n", key, val));
        }
    }
    fs::write(&path, &text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn synth_manifest_checksums_match() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let mut n = 0;
    for line in manifest.lines() {
        let (hex, rel) = line.split_once("  ").unwrap();
        let digest = Sha256::digest(fs::read(dir.path().join(rel)).unwrap());
        let want: String = digest.iter().map(|b| format!("{:02x}", b)).collect();
        assert_eq!(hex, want, "{}", rel);
        n += 1;
    }
    assert_eq!(n, 6);
    let head = fs::read(dir.path().join("truth.grid")).unwrap();
    assert!(head.starts_with(b"GRIDFIELD v1 8 8 32 truth\n"));
}

#[test]
fn train_estimate_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let conf = edit_config(dir.path(), &[("max_epochs", "2")]);
    let out = orca(&["--config", &conf, "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,L,L1,L2,val_L1");
    assert_eq!(lines.len(), 3);

    let out = orca(&["--config", &conf, "--times", "0,31", "estimate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("heatmap_t000.svg").is_file() && run.join("heatmap_t031.svg").is_file());
    let est = fs::read(run.join("estimate.grid")).unwrap();
    assert!(est.starts_with(b"GRIDFIELD v1 8 8 32 estimate\n"));
    let table = fs::read_to_string(run.join("buoy_00.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("t,observed,estimated"));
    assert_eq!(table.lines().count(), 1 + 4);

    let out = orca(&["--config", &conf, "eval"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("subject,mae,mse,rmse,count\nestimate,"));
    assert!(metrics.contains("\npersistence,"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), metrics);
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let conf = edit_config(dir.path(), &[("max_epochs", "1"), ("windows_per_epoch", "4")]);
    let mut histories = Vec::new();
    for (seed, out) in [("3", "a"), ("3", "b"), ("4", "c")] {
        let o = orca(&["--config", &conf, "--seed", seed, "--out", dir.path().join(out).to_str().unwrap(), "train"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        histories.push(fs::read_to_string(dir.path().join(out).join("history.csv")).unwrap());
    }
    assert_eq!(histories[0], histories[1]);
    assert_ne!(histories[0], histories[2]);
}

#[test]
fn alpha_without_surrogate_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let conf = edit_config(dir.path(), &[("surrogate", "")]);
    let out = orca(&["--config", &conf, "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn divergence_exits_nonzero_with_epoch() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let conf = edit_config(dir.path(), &[("lr", "1e30"), ("max_epochs", "3")]);
    let out = orca(&["--config", &conf, "train"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("diverged at epoch"), "{}", err);
}

#[test]
fn eval_rejects_misaligned_estimate() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let other = dir.path().join("other");
    let out = orca(&["synth", "--rows", "4", "--cols", "4", "--out", other.to_str().unwrap()]);
    assert!(out.status.success());
    let conf = dir.path().join("orca.conf");
    let out = orca(&["--config", conf.to_str().unwrap(), "eval", "--estimate", other.join("truth.grid").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alignment error"));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let out = orca(&["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let out = orca(&["gradcheck", "--corrupt", "head.w5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("head.w5"));
}

#[test]
fn ablation_flags_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let conf = edit_config(dir.path(), &[("max_epochs", "1"), ("windows_per_epoch", "2")]);
    let mut seen = Vec::new();
    for flags in [&[][..], &["--prompt", "light"], &["--prompt", "no-features"], &["--no-location"]] {
        let out_dir = dir.path().join(format!("r{}", seen.len()));
        let mut args = vec!["--config", &conf, "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(flags);
        args.push("train");
        let o = orca(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let h = fs::read_to_string(out_dir.join("history.csv")).unwrap();
        assert!(!seen.contains(&h));
        seen.push(h);
    }
}

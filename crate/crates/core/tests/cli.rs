use std::fs;
use std::process::{Command, Output};

use dbrn::report::parse_run_block;

fn dbrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbrn"))
        .args(args)
        .env_remove("DBRN_SEED")
        .output()
        .unwrap()
}

fn stdout(args: &[&str]) -> String {
    let out = dbrn(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--toy-classes", "8", "--toy-samples", "8", "--episodes", "20", "--queries", "3"];

fn with(cmd: &str, extra: &[&str]) -> Vec<String> {
    std::iter::once(cmd)
        .chain(SMALL.iter().copied())
        .chain(extra.iter().copied())
        .map(str::to_owned)
        .collect()
}

fn run_owned(args: &[String]) -> String {
    stdout(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn sequential_and_parallel_reports_match() {
    let par = run_owned(&with("eval", &["--seed", "3"]));
    let seq = run_owned(&with("eval", &["--seed", "3", "--sequential"]));
    assert_eq!(par, seq);
    let block = parse_run_block(&par, "full").unwrap();
    assert!(block.iter().any(|(k, v)| k == "num_episodes" && v == "20"));
}

#[test]
fn toggles_name_the_run() {
    let text = run_owned(&with("eval", &["--no-weight", "--no-pow", "--no-protoaug"]));
    assert!(parse_run_block(&text, "baseline").is_some());
    let text = run_owned(&with("eval", &["--no-protoaug"]));
    assert!(parse_run_block(&text, "weight+pow").is_some());
}

#[test]
fn ablation_has_four_paired_rows() {
    let text = run_owned(&with("ablate", &[]));
    let labels = ["baseline", "weight", "weight+pow", "full"];
    let streams: Vec<String> = labels
        .iter()
        .map(|l| {
            let block = parse_run_block(&text, l).unwrap_or_else(|| panic!("missing row {l}"));
            block.into_iter().find(|(k, _)| k == "episode_stream").unwrap().1
        })
        .collect();
    assert!(streams.iter().all(|s| s == &streams[0]));
}

#[test]
fn env_seed_sits_below_config_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 5\nk = 2\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let show = |env: Option<&str>, args: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dbrn"));
        cmd.arg("show-config").args(args).env_remove("DBRN_SEED");
        if let Some(s) = env {
            cmd.env("DBRN_SEED", s);
        }
        String::from_utf8(cmd.output().unwrap().stdout).unwrap()
    };
    assert!(show(Some("9"), &[]).contains("seed = 9\n"));
    assert!(show(Some("9"), &["--config", cfg]).contains("seed = 5\n"));
    assert!(show(Some("9"), &["--config", cfg, "--seed", "1"]).contains("seed = 1\n"));
    assert!(show(None, &["--config", cfg]).contains("k = 2\n"));
}

#[test]
fn exit_codes() {
    assert_eq!(dbrn(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(dbrn(&["eval", "--dataset", "/no/such/path"]).status.code(), Some(2));
    assert_eq!(dbrn(&["eval", "--config", "/no/such/file"]).status.code(), Some(2));
    let out = dbrn(&["eval", "--toy-classes", "3", "--toy-samples", "4", "--n-way", "5", "--episodes", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("5-way"));
}

#[test]
fn feature_file_dataset_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let feats = dir.path().join("toy.feat");
    let (images, feats) = (images.to_str().unwrap(), feats.to_str().unwrap());
    stdout(&["gen-data", "--out", images, "--classes", "6", "--samples", "5"]);
    stdout(&["extract", "--dataset", images, "--out", feats]);
    let text = stdout(&[
        "eval", "--dataset", feats, "--no-protoaug", "--episodes", "10", "--queries", "2",
    ]);
    assert!(parse_run_block(&text, "weight+pow").is_some());
    // prototype augmentation needs images
    assert_eq!(dbrn(&["eval", "--dataset", feats, "--episodes", "1", "--queries", "2"]).status.code(), Some(2));
}

#[test]
fn heatmap_writes_pgm_and_prints_grid() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    stdout(&["gen-data", "--out", images.to_str().unwrap(), "--classes", "2", "--samples", "3"]);
    let class = images.join("class_000");
    let file = |i: usize| class.join(format!("{i:04}.pgm")).to_str().unwrap().to_owned();
    let out = dir.path().join("heat.pgm");
    let grid = stdout(&[
        "heatmap",
        "--query",
        &file(0),
        "--support",
        &file(1),
        &file(2),
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows: Vec<&str> = grid.lines().collect();
    assert_eq!(rows.len(), 5);
    let values: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.split_whitespace().map(|v| v.parse::<f64>().unwrap()))
        .collect();
    assert_eq!(values.len(), 25);
    assert!((values.iter().sum::<f64>() / 25.0 - 1.0).abs() < 1e-3);
    let bytes = fs::read(&out).unwrap();
    assert!(bytes.starts_with(b"P5\n84 84\n255\n"));
}

#[test]
fn fit_tau_reports_losses() {
    let text = run_owned(&with("fit-tau", &["--steps", "5", "--lr", "0.1"]));
    let get = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap()
            .parse::<f64>()
            .unwrap()
    };
    assert_eq!(get("steps"), 5.0);
    assert!(get("final_tau") > 0.0);
    assert!(get("initial_loss").is_finite() && get("final_loss").is_finite());
}

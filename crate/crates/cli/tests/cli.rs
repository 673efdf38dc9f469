use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use lrfwi_cli::{run_experiment, run_in_memory, ExperimentConfig, PipelineChoice};
use lrfwi_core::jfm;
use sha2::{Digest, Sha256};

const TINY: &str = "
# small enough for a unit-test budget
nz = 16
nx = 24
h = 25
stations = 8
frequencies = 3, 5
band_size = 1
outer_iters = 2
lbfgs_iters = 2
mask_pattern = entries
";

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(TINY).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn digest(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let h = Sha256::digest(fs::read(&p).unwrap());
        let hex: String = h.iter().map(|b| format!("{b:02x}")).collect();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), hex);
    }
    out
}

#[test]
fn joint_run_writes_one_history_row_per_outer_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.pipeline = PipelineChoice::Joint;
    cfg.keep = 0.15;
    cfg.band_size = 2;
    cfg.outer_iters = 3;
    run_experiment(&cfg).unwrap();
    let rows = csv(&dir.path().join("history.csv"));
    assert_eq!(rows.len(), cfg.outer_iters);
    assert!(rows.iter().all(|r| r["pipeline"] == "joint"));
    for name in [
        "truth.jfm",
        "initial.jfm",
        "final_joint.jfm",
        "truth.pgm",
        "final_joint.pgm",
        "comparison.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    for f in ["3hz", "5hz"] {
        for kind in ["true", "observed", "recovered_joint"] {
            let m = jfm::load(dir.path().join(format!("slice_{f}_{kind}.jfm"))).unwrap();
            assert_eq!(m.shape(), (8, 8));
        }
    }
    let truth = jfm::load(dir.path().join("truth.jfm")).unwrap();
    assert_eq!(truth.shape(), (24, 16));
}

#[test]
fn both_pipelines_share_seed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.pipeline = PipelineChoice::Both;
    cfg.keep = 0.5;
    cfg.seed = 11;
    run_experiment(&cfg).unwrap();
    let rows = csv(&dir.path().join("comparison.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r["pipeline"].as_str()).collect();
    assert_eq!(names, vec!["disjoint", "joint"]);
    assert!(rows.iter().all(|r| r["seed"] == "11"));
    // identical probe schedules on both arms
    let hist = csv(&dir.path().join("history.csv"));
    let seeds = |p: &str| -> Vec<String> {
        hist.iter()
            .filter(|r| r["pipeline"] == p)
            .map(|r| r["probe_seed"].clone())
            .collect()
    };
    assert_eq!(seeds("disjoint"), seeds("joint"));
    assert_eq!(seeds("joint").len(), 2 * cfg.outer_iters);
}

#[test]
fn pde_counts_in_history_match_the_formula() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.pipeline = PipelineChoice::All;
    cfg.keep = 0.5;
    run_experiment(&cfg).unwrap();
    for r in csv(&dir.path().join("history.csv")) {
        let evals: usize = r["evaluations"].parse().unwrap();
        let count: u64 = r["pde_count"].parse().unwrap();
        let expect = match r["pipeline"].as_str() {
            "joint" => lrfwi_core::joint::joint_pde_count(1, cfg.probes, evals),
            _ => lrfwi_core::joint::disjoint_pde_count(1, cfg.probes, evals),
        };
        assert_eq!(count, expect, "{r:?}");
    }
}

#[test]
fn identical_config_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let mut cfg = tiny(d.path());
        cfg.pipeline = PipelineChoice::Both;
        cfg.keep = 0.5;
        run_experiment(&cfg).unwrap();
    }
    let (da, db) = (digest(a.path()), digest(b.path()));
    assert!(da.len() > 10);
    assert_eq!(da, db);
}

#[test]
fn binary_runs_and_reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, TINY).unwrap();
    let out = dir.path().join("out");
    let ok = Command::new(env!("CARGO_BIN_EXE_lrfwi"))
        .args(["invert", "--config"])
        .arg(&cfg_path)
        .args(["--pipeline", "disjoint", "--keep", "0.5", "--seed", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let rows = csv(&out.join("comparison.csv"));
    assert_eq!(rows[0]["seed"], "3");
    assert_eq!(rows[0]["keep"], "0.5");

    let bad = Command::new(env!("CARGO_BIN_EXE_lrfwi"))
        .args(["invert", "--keep", "1.5"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");

    fs::write(&cfg_path, "colour = blue\n").unwrap();
    let unknown = Command::new(env!("CARGO_BIN_EXE_lrfwi"))
        .args(["invert", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn low_band_first_does_not_hurt_the_high_band() {
    let err = |freqs: &str, seed: u64| {
        let mut cfg = ExperimentConfig::parse(TINY).unwrap();
        cfg.set("frequencies", freqs).unwrap();
        cfg.band_size = 2;
        cfg.outer_iters = 3;
        cfg.pipeline = PipelineChoice::Full;
        cfg.seed = seed;
        run_in_memory(&cfg).unwrap().runs[0].model_error
    };
    let mean = |freqs: &str| (0..3).map(|s| err(freqs, s)).sum::<f64>() / 3.0;
    let (two, high) = (mean("3, 5, 7, 9"), mean("7, 9"));
    assert!(two <= high, "two bands {two} vs high band only {high}");
}

use std::fs;

use relnav_cli::{config_to_toml, main_with_args, parse_config, RunManifest, MANIFEST_FILE};
use relnav_sim::{Mode, ScenarioConfig};

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(std::iter::once("relnav").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = cli(&["run", "--config", "/does/not/exist.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("usage"));
    assert!(!out.exists());
}

#[test]
fn bad_flags_and_invalid_config_exit_codes() {
    let (code, _, _) = cli(&["run"]);
    assert_eq!(code, 1);
    let (code, _, _) = cli(&["run", "--mode", "sideways", "--out", "/tmp/x"]);
    assert_eq!(code, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "robots = 1\n").unwrap();
    let (code, _, err) = cli(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    fs::write(&path, "no_such_key = 3\n").unwrap();
    let (code, _, _) = cli(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn toml_round_trip() {
    let cfg = ScenarioConfig {
        robots: 4,
        mode: Mode::NoPassive,
        drop_prob: 0.1,
        height_rate_hz: Some(10.0),
        ..Default::default()
    };
    let text = config_to_toml(&cfg).unwrap();
    assert_eq!(parse_config(&text).unwrap(), cfg);
    assert_eq!(parse_config("").unwrap(), ScenarioConfig::default());
}

#[test]
fn same_seed_gives_same_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "duration_s = 2.0\n").unwrap();
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let (code, stdout, err) = cli(&[
            "run", "--config", cfg.to_str().unwrap(), "--mode", "no_passive", "--seed", "7", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(stdout.contains("no_passive"));
        manifests.push(RunManifest::load(&out.join(MANIFEST_FILE)).unwrap());
    }
    assert_eq!(manifests[0].artifacts, manifests[1].artifacts);
    assert_eq!(manifests[0].config.seed, 7);
    assert_eq!(manifests[0].config.duration_s, 2.0);
    // every file in the directory is declared
    let mut files: Vec<String> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|f| f != MANIFEST_FILE)
        .collect();
    files.sort();
    let declared: Vec<String> = manifests[0].artifacts.iter().map(|a| a.file.clone()).collect();
    assert_eq!(files, declared);
}

#[test]
fn montecarlo_pairs_truth_across_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let (code, stdout, err) = cli(&[
        "montecarlo", "--duration", "1", "--trials", "2", "--traces", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("no pass. %"));
    let m = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    let sha = |f: &str| m.artifacts.iter().find(|a| a.file == f).unwrap().sha256.clone();
    for k in 0..2 {
        let truth: Vec<String> = Mode::ALL
            .iter()
            .map(|mode| sha(&format!("traces/r3_{}/trial_{k:04}_truth.csv", mode.name())))
            .collect();
        assert!(truth.iter().all(|t| *t == truth[0]));
    }
    assert_ne!(sha("traces/r3_proposed/trial_0000_truth.csv"), sha("traces/r3_proposed/trial_0001_truth.csv"));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn single_mode_campaign_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let (mc, run) = (dir.path().join("mc"), dir.path().join("run"));
    let (code, _, err) = cli(&[
        "montecarlo", "--duration", "1", "--trials", "1", "--mode", "proposed", "--traces", "--seed", "3", "--out",
        mc.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, _, _) = cli(&["run", "--duration", "1", "--seed", "3", "--out", run.to_str().unwrap()]);
    assert_eq!(code, 0);
    for s in ["errors", "clocks", "truth", "estimates", "nees"] {
        let a = fs::read(mc.join(format!("traces/r3_proposed/trial_0000_{s}.csv"))).unwrap();
        let b = fs::read(run.join(format!("{s}.csv"))).unwrap();
        assert_eq!(a, b, "{s}");
    }
    let table = fs::read_to_string(mc.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn selftest_reports_every_suite() {
    let (code, stdout, _) = cli(&["selftest"]);
    assert_eq!(code, 0, "{stdout}");
    for name in ["lie", "discretization", "covariance", "preint", "jacobians"] {
        assert!(stdout.lines().any(|l| l.starts_with("PASS") && l.contains(name) && l.contains("max_error=")));
    }
}

#[test]
fn zero_trials_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = cli(&["montecarlo", "--trials", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
}

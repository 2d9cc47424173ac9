use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use censored_ekf::scenario::{config_keys, Dataset, ResultsTable, RunSummary, ScenarioConfig};

const CONFIGS: [&str; 4] = ["oscillator-stationary", "oscillator-drift", "hcv-synthetic", "hiv-synthetic"];

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_censor-ekf")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_config_key() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let help = String::from_utf8(out.stdout).unwrap();
    for name in CONFIGS {
        let cfg = ScenarioConfig::load(&config(name)).unwrap();
        for key in config_keys(&cfg) {
            let key = key.replace("model.params.", "model.params.<name>|");
            let documented = match key.split_once('|') {
                Some((prefix, param)) => help.contains(prefix) && help.split_whitespace().any(|w| w == param),
                None => help.lines().any(|l| l.split_whitespace().next() == Some(key.as_str())),
            };
            assert!(documented, "{name}: key {key} missing from --help");
        }
    }
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = config("oscillator-stationary");
    for dir in [&a, &b] {
        let out = run(&["simulate", "--config", s(&cfg), "--out", s(dir), "--seed", "1"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for f in ["dataset.csv", "truth.csv", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn negative_noise_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("oscillator-stationary");
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(tmp.path()), "--set", "channels.0.noise_level=-0.3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("noise"), "{}", stderr(&out));
}

#[test]
fn unknown_override_key_is_rejected() {
    let cfg = config("oscillator-stationary");
    let out = run(&["simulate", "--config", s(&cfg), "--set", "filter.substep=3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("filter.substep"));
}

#[test]
fn hcv_uncensored_values_exceed_detection_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("hcv-synthetic");
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let d = Dataset::read(&tmp.path().join("dataset.csv")).unwrap();
    let limit = 50f64.log10();
    assert!(d.rows.iter().any(|r| r.censored));
    for r in &d.rows {
        if r.censored {
            assert_eq!(r.value, r.limit_high);
            assert!((r.limit_high - limit).abs() < 1e-12);
        } else {
            assert!(r.value > limit, "uncensored {} at t={}", r.value, r.time);
        }
    }
}

#[test]
fn plain_mode_matches_on_uncensored_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("oscillator-stationary");
    let c = s(&cfg);
    let dir = s(tmp.path());
    let set = "channels.0.limits=[]";
    assert_eq!(code(&run(&["simulate", "--config", c, "--out", dir, "--set", set])), 0);
    let data = tmp.path().join("dataset.csv");
    let results = |sub: &str, plain: bool| {
        let out_dir = tmp.path().join(sub);
        let mut args = vec!["filter", "--config", c, "--out", s(&out_dir), "--set", set, "--dataset", s(&data)];
        if plain {
            args.push("--plain-ekf");
        }
        let out = run(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        ResultsTable::read(&out_dir.join("results.csv")).unwrap()
    };
    let (a, b) = (results("censored", false), results("plain", true));
    assert_eq!(a.rows.len(), 150);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (x, y) in ra.mean.iter().chain(&ra.var).zip(rb.mean.iter().chain(&rb.var)) {
            assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn missing_dataset_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("oscillator-stationary");
    let missing = tmp.path().join("no-such-dataset.csv");
    let out = run(&["filter", "--config", s(&cfg), "--out", s(tmp.path()), "--dataset", s(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no-such-dataset.csv"), "{}", stderr(&out));
}

#[test]
fn filter_failure_reports_step_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("hcv-synthetic");
    let dir = s(tmp.path());
    let shorten = "channels.0.times.2.count=2";
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", dir, "--set", shorten])), 0);
    // A prior at the near-zero true V_NI makes the log-coordinate model too stiff for the integrator.
    let stiff = "filter.initial_state=[3101875.0,490449.8,2462058.0,1.0]";
    let out = run(&["filter", "--config", s(&cfg), "--out", dir, "--set", shorten, "--set", stiff]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("step"), "{}", stderr(&out));
}

#[test]
fn single_seed_sweep_matches_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("oscillator-stationary");
    let c = s(&cfg);
    let one = tmp.path().join("one");
    assert_eq!(code(&run(&["simulate", "--config", c, "--out", s(&one), "--seed", "4"])), 0);
    let truth = one.join("truth.csv");
    let out = run(&["filter", "--config", c, "--out", s(&one), "--seed", "4", "--truth", s(&truth)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sweep = tmp.path().join("sweep");
    let out = run(&["sweep", "--config", c, "--out", s(&sweep), "--seeds", "4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let a = RunSummary::read(&one.join("summary.json")).unwrap();
    let b = RunSummary::read(&sweep.join("seed-4/summary.json")).unwrap();
    assert_eq!(a, b);
    let agg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sweep.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(agg["parameters"][0]["estimate"]["mean"].as_f64(), Some(a.parameters[0].estimate));
}

#[test]
fn sweep_refuses_shared_output_directories() {
    let cfg = config("oscillator-stationary");
    let out = run(&["sweep", "--config", s(&cfg), "--seeds", "3,5,3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("seed 3"));
    let out = run(&["sweep", "--config", s(&cfg), "--seeds", "5..5"]);
    assert_eq!(code(&out), 2);
}

fn report_series(path: &Path) -> Vec<(String, String, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("series,variable,time,value,lower,upper,censored"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn oscillator_report_has_estimates_with_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("oscillator-stationary");
    let (c, dir) = (s(&cfg), s(tmp.path()));
    assert_eq!(code(&run(&["simulate", "--config", c, "--out", dir])), 0);
    assert_eq!(code(&run(&["filter", "--config", c, "--out", dir])), 0);
    let results = tmp.path().join("results.csv");
    let truth = tmp.path().join("truth.csv");
    let out = run(&["report", "--results", s(&results), "--truth", s(&truth)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = report_series(&tmp.path().join("report.csv"));
    for v in ["x1", "x2", "alpha"] {
        assert_eq!(rows.iter().filter(|r| r.0 == "estimate" && r.1 == v).count(), 150, "{v}");
        assert!(rows.iter().any(|r| r.0 == "truth" && r.1 == v), "{v}");
    }
    let text = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let est = text.lines().find(|l| l.starts_with("estimate,alpha,")).unwrap();
    let f: Vec<f64> = est.split(',').skip(3).take(3).map(|x| x.parse().unwrap()).collect();
    assert!(f[1] < f[0] && f[0] < f[2], "{est}");
}

#[test]
fn empty_results_file_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("results.csv");
    std::fs::write(&path, "").unwrap();
    let out = run(&["report", "--results", s(&path)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn hiv_report_keeps_channel_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("hiv-synthetic");
    let (c, dir) = (s(&cfg), s(tmp.path()));
    let sets = ["--set", "channels.0.times.0.count=4", "--set", "channels.1.times.0.count=6"];
    let sim: Vec<&str> = ["simulate", "--config", c, "--out", dir].into_iter().chain(sets).collect();
    assert_eq!(code(&run(&sim)), 0);
    let filt: Vec<&str> = ["filter", "--config", c, "--out", dir].into_iter().chain(sets).collect();
    let out = run(&filt);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let results = tmp.path().join("results.csv");
    let data = tmp.path().join("dataset.csv");
    assert_eq!(code(&run(&["report", "--results", s(&results), "--dataset", s(&data)])), 0);
    let rows = report_series(&tmp.path().join("report.csv"));
    let times = |ch: &str| -> Vec<f64> { rows.iter().filter(|r| r.0 == "observation" && r.1 == ch).map(|r| r.2).collect() };
    assert_eq!(times("cd4"), vec![0.0, 14.0, 28.0, 42.0]);
    assert_eq!(times("viral_load"), vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
}

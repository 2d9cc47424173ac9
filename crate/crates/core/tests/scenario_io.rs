mod common;

use censored_ekf::scenario::{apply_limits, Dataset, DatasetRow, ResultsTable, ScenarioConfig, ScenarioError, TruthTable};
use common::{config_path, normal_cdf, scenario};
use proptest::prelude::*;

fn row_strategy() -> impl Strategy<Value = DatasetRow> {
    (any::<f64>(), prop_oneof![Just("x1"), Just("cd4"), Just("viral_load")], -1e6..1e6f64, 0u8..3).prop_map(
        |(raw, channel, value, kind)| {
            let time = if raw.is_finite() { raw % 1e4 } else { 0.0 };
            let mut row = DatasetRow {
                time,
                channel: channel.into(),
                value,
                censored: false,
                limit_low: f64::NEG_INFINITY,
                limit_high: f64::INFINITY,
            };
            match kind {
                0 => apply_limits(&mut row, value + 1.0, f64::INFINITY),
                1 => apply_limits(&mut row, f64::NEG_INFINITY, value - 0.5),
                _ => apply_limits(&mut row, value - 2.0, value + 2.0),
            }
            row
        },
    )
}

proptest! {
    #[test]
    fn dataset_round_trips(mut rows in prop::collection::vec(row_strategy(), 0..40)) {
        rows.sort_by(|a, b| a.time.total_cmp(&b.time));
        let d = Dataset::new(rows).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        prop_assert_eq!(Dataset::read_from(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn censoring_is_idempotent(value in -10.0..10.0f64, lo in -5.0..0.0f64, width in 0.1..8.0f64) {
        let mut row = DatasetRow {
            time: 1.0,
            channel: "x1".into(),
            value,
            censored: false,
            limit_low: f64::NEG_INFINITY,
            limit_high: f64::INFINITY,
        };
        apply_limits(&mut row, lo, lo + width);
        let once = row.clone();
        apply_limits(&mut row, lo, lo + width);
        prop_assert_eq!(&row, &once);
        prop_assert_eq!(row.censored, value < lo || value > lo + width);
        if row.censored {
            prop_assert!(row.value == lo || row.value == lo + width);
        } else {
            prop_assert_eq!(row.value, value);
        }
    }
}

#[test]
fn results_and_truth_round_trip() {
    let sc = scenario("hcv-synthetic", &["channels.0.times.2.count=3"]);
    let run = sc.run().unwrap();
    let table = ResultsTable::from_records(run.setup.labels(), &run.records);
    let mut buf = Vec::new();
    table.write_to(&mut buf).unwrap();
    assert_eq!(ResultsTable::read_from(buf.as_slice()).unwrap(), table);

    let truth = sc.truth_table(&run.synthetic.trajectory);
    let mut buf = Vec::new();
    truth.write_to(&mut buf).unwrap();
    let back = TruthTable::read_from(buf.as_slice()).unwrap();
    assert_eq!(back, truth);
    let traj = back.trajectory(sc.config.model.state_names()).unwrap();
    assert_eq!(traj.states, run.synthetic.trajectory.states);
}

#[test]
fn config_json_round_trips() {
    for name in common::SHIPPED {
        let cfg = ScenarioConfig::load(&config_path(name)).unwrap();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg, "{name}");
    }
}

fn validation(overrides: &[&str]) -> ScenarioError {
    let sets: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = ScenarioConfig::load(&config_path("oscillator-stationary")).unwrap();
    match cfg.with_overrides(&sets).and_then(censored_ekf::scenario::Scenario::new) {
        Ok(_) => panic!("{overrides:?} accepted"),
        Err(e) => e,
    }
}

#[test]
fn invalid_configs_are_validation_errors() {
    for bad in [
        &["channels.0.noise_level=-0.1"][..],
        &["filter.prune.max_age=0"],
        &["filter.estimate.0.name=\"omega\""],
        &["filter.estimate.0.transform=\"sqrt\""],
        &["channels.0.limits.0.high=0.5"],
        &["filter.initial_sd=[1.0]"],
        &["truth.initial_state=[0.0]"],
        &["seed=\"seven\""],
        &["no_such_key=1"],
    ] {
        let e = validation(bad);
        assert!(e.is_validation(), "{bad:?}: {e}");
    }
}

#[test]
fn dataset_reader_rejects_bad_rows() {
    let header = "time,channel,value,censored,limit_low,limit_high\n";
    for body in [
        "0.2,x1,0.1,1,-inf,0.8\n",
        "0.2,x1,nan,0,-inf,inf\n",
        "0.4,x1,1.0,0,-inf,inf\n0.2,x1,1.0,0,-inf,inf\n",
        "0.2,x1,1.0,0,2.0,1.0\n",
        "0.2,x1,1.0\n",
    ] {
        let text = format!("{header}{body}");
        let e = Dataset::read_from(text.as_bytes()).unwrap_err();
        assert!(e.is_validation(), "{body:?}: {e}");
    }
}

#[test]
fn censored_fraction_matches_noise_model() {
    let sc = scenario("oscillator-stationary", &[]);
    let mut observed = 0.0;
    let mut expected = 0.0;
    for seed in 0..10 {
        let syn = sc.with_seed(seed).simulate().unwrap();
        observed += syn.dataset.censored_fraction() / 10.0;
        let sd = syn.noise_sd[0];
        let p: f64 = syn.dataset.rows.iter().map(|r| normal_cdf((0.8 - (1.0 - (2.0 * r.time).cos())) / sd)).sum();
        expected += p / syn.dataset.rows.len() as f64 / 10.0;
    }
    assert!((observed - expected).abs() < 0.05, "observed {observed}, expected {expected}");
}

#[test]
fn noiseless_data_reproduces_truth() {
    let sc = scenario("oscillator-stationary", &["channels.0.noise_level=0.0"]);
    let syn = sc.simulate().unwrap();
    for r in &syn.dataset.rows {
        let x1 = syn.trajectory.state_at(r.time).unwrap()[0];
        if x1 < 0.8 {
            assert!(r.censored && r.value == 0.8, "t = {}", r.time);
        } else {
            assert!(!r.censored && r.value == x1, "t = {}", r.time);
        }
    }
}

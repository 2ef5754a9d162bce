use proptest::prelude::*;

use rsskv::checker::{check, Model};
use rsskv::experiment::{run_experiment, validate_invariants, RunConfig};
use rsskv::shard::Mode;
use rsskv::workload::ClientModel;

fn short(mode: Mode, seed: u64, skew: f64, lambda: f64) -> RunConfig {
    let mut cfg = RunConfig::wan_default(mode, seed);
    cfg.duration_us = 3_000_000;
    cfg.workload.skew = skew;
    cfg.workload.num_keys = 50;
    cfg.workload.model = ClientModel::PartlyOpen {
        lambda,
        stay_prob: 0.8,
        think_us: 0,
    };
    cfg
}

#[test]
fn same_seed_same_history() {
    for mode in [Mode::SpannerSs, Mode::SpannerRss] {
        let cfg = short(mode, 21, 0.9, 10.0);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert!(!a.history.is_empty());
        assert_eq!(a.history.to_text(), b.history.to_text());
        assert_eq!(a.summary.to_csv(), b.summary.to_csv());
    }
}

#[test]
fn different_seeds_differ() {
    let a = run_experiment(&short(Mode::SpannerRss, 1, 0.9, 10.0)).unwrap();
    let b = run_experiment(&short(Mode::SpannerRss, 2, 0.9, 10.0)).unwrap();
    assert_ne!(a.history.to_text(), b.history.to_text());
}

#[test]
fn outputs_round_trip() {
    let out = run_experiment(&short(Mode::SpannerRss, 4, 0.9, 5.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    rsskv::experiment::write_outputs(dir.path(), &out).unwrap();
    let text = std::fs::read_to_string(dir.path().join("history.log")).unwrap();
    assert_eq!(rsskv::checker::History::parse(&text).unwrap(), out.history);
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv, out.summary.to_csv());
}

#[test]
fn retries_are_bounded() {
    let mut cfg = short(Mode::SpannerSs, 6, 1.0, 60.0);
    cfg.workload.num_keys = 3;
    cfg.max_retries = 2;
    let out = run_experiment(&cfg).unwrap();
    let sh = out.cluster.shared();
    assert!(sh.samples.iter().all(|s| s.attempts <= 3));
    assert!(out.invariants.ok(), "{:?}", out.invariants.violations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // commit timestamps inside the commit interval, snapshots at or above
    // t_min and at or below t_read, and so on, under random load
    #[test]
    fn timestamp_invariants_hold(seed in 0u64..10_000, rss in any::<bool>(), skew in 0.0f64..=1.0, lambda in 1.0f64..40.0) {
        let mode = if rss { Mode::SpannerRss } else { Mode::SpannerSs };
        let out = run_experiment(&short(mode, seed, skew, lambda)).unwrap();
        let report = validate_invariants(&out.cluster);
        prop_assert!(report.ok(), "{:?}", report.violations);
        prop_assert!(report.rw_checked + report.ro_checked > 0);
    }

    #[test]
    fn small_runs_satisfy_their_model(seed in 0u64..10_000, rss in any::<bool>()) {
        let (mode, model) = if rss { (Mode::SpannerRss, Model::Rss) } else { (Mode::SpannerSs, Model::Ss) };
        let mut cfg = short(mode, seed, 0.9, 2.0);
        cfg.duration_us = 1_500_000;
        cfg.workload.num_keys = 4;
        cfg.workload.model = ClientModel::PartlyOpen { lambda: 2.0, stay_prob: 0.5, think_us: 0 };
        let out = run_experiment(&cfg).unwrap();
        let v = check(&out.history, model).unwrap();
        prop_assert!(!v.is_rejected(), "{v}");
    }
}

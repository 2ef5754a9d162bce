use rsskv::checker::{check, check_with, Model};
use rsskv::experiment::validate_invariants;
use rsskv::scenarios::{composition, composition_limits, fence_scenario, litmus, tiny, FenceVariant};
use rsskv::shard::Mode;

#[test]
fn litmus_execution_differs_by_mode() {
    let rss = litmus(Mode::SpannerRss, 1).unwrap();
    let ss = litmus(Mode::SpannerSs, 1).unwrap();
    for r in [&rss, &ss] {
        assert!(validate_invariants(&r.cluster).ok());
    }
    let w = rss.cluster.shared().rw[0].txn;
    let ro = &rss.cluster.shared().ro;
    assert_eq!(ro[0].values[0].writer(), Some(w), "{:?}", ro);
    assert_eq!(ro[1].values[0].writer(), None, "{:?}", ro);
    assert!(check(&rss.history, Model::Rss).unwrap().is_accepted());
    assert!(check(&rss.history, Model::Ss).unwrap().is_rejected());

    let ro = &ss.cluster.shared().ro;
    assert_eq!(ro[1].values[0].writer(), Some(ss.cluster.shared().rw[0].txn));
    assert!(ro[1].respond_us - ro[1].invoke_us > ro[0].respond_us - ro[0].invoke_us);
    assert!(check(&ss.history, Model::Ss).unwrap().is_accepted());
}

#[test]
fn observer_fence_is_needed() {
    let mut missed = 0;
    for seed in 0..20 {
        let with = fence_scenario(Mode::SpannerRss, seed, FenceVariant::Observer, true).unwrap();
        assert!(with.reads_saw_write.iter().all(|b| *b), "seed {seed}");
        let w = fence_scenario(Mode::SpannerRss, seed, FenceVariant::Writer, true).unwrap();
        assert!(w.reads_saw_write.iter().all(|b| *b), "seed {seed}");
        let without = fence_scenario(Mode::SpannerRss, seed, FenceVariant::Observer, false).unwrap();
        eprintln!("{:?}", without.reads_saw_write);
        if !without.reads_saw_write[0] {
            missed += 1;
        }
    }
    assert!(missed > 0);
}

#[test]
fn composition_needs_librss() {
    let mut rejected = 0;
    for seed in 0..20 {
        let off = composition(seed, false).unwrap();
        let v = check_with(&off.history, Model::Rss, composition_limits()).unwrap();
        assert!(!v.is_unknown(), "seed {seed}: {v}");
        if v.is_rejected() {
            rejected += 1;
        }
        let on = composition(seed, true).unwrap();
        let v = check_with(&on.history, Model::Rss, composition_limits()).unwrap();
        assert!(v.is_accepted(), "seed {seed}: {v}");
    }
    eprintln!("composition without libRSS rejected in {rejected}/20");
    assert!(rejected > 0);
}

#[test]
fn tiny_runs_check() {
    for seed in 0..20 {
        for (mode, model) in [(Mode::SpannerRss, Model::Rss), (Mode::SpannerSs, Model::Ss)] {
            let r = tiny(mode, seed).unwrap();
            let v = check(&r.history, model).unwrap();
            assert!(v.is_accepted(), "seed {seed} {mode:?}: {v}\n{}", r.history.to_text());
            assert!(validate_invariants(&r.cluster).ok());
        }
    }
}

//! Acceptance run: one PASS/FAIL line per criterion, then a nonzero exit if
//! any failed.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rsskv::checker::{check, check_with, CheckLimits, History, HistoryEvent, Model, TxnType};
use rsskv::cluster::Cluster;
use rsskv::experiment::{message_totals, run_experiment, validate_invariants, RunConfig, RunOutput};
use rsskv::kv::{TxnId, Value};
use rsskv::scenarios::{composition, composition_limits, fence_scenario, tiny, FenceVariant};
use rsskv::shard::Mode;
use rsskv::simnet::RegionId;
use rsskv::workload::ClientModel;

/// Offered load for the latency criteria: about 75% of the measured
/// saturation point (near 40 transactions/s at skew 0.9 with 10 000 keys).
const LAMBDA: f64 = 3.0;
/// Enough simulated time for about 22 000 read-only samples at `LAMBDA`.
const LATENCY_DURATION_US: u64 = 1_470_000_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

#[derive(Default)]
struct Audit {
    runs: usize,
    rw: usize,
    ro: usize,
    violations: Vec<String>,
}

impl Audit {
    fn add(&mut self, c: &Cluster) {
        let r = validate_invariants(c);
        self.runs += 1;
        self.rw += r.rw_checked;
        self.ro += r.ro_checked;
        self.violations.extend(r.violations);
    }
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rsskv")).args(args).output().expect("run cli");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn cli_check(model: &str, path: &Path) -> i32 {
    cli(&["check", "--model", model, "--input", path.to_str().unwrap()]).0
}

/// The published litmus execution: the writer updates x and y; a reader
/// sees the new x before the write returns; a later reader at y's shard
/// returns the old y at once.
fn figure_history() -> History {
    let (x, y) = (0, 1);
    let w = TxnId(1);
    History::new(vec![
        HistoryEvent::invoke(w, 0, "kv", TxnType::Rw, 0).with_writes(vec![
            (x, Value { writer: w, key: x, counter: 1 }),
            (y, Value { writer: w, key: y, counter: 2 }),
        ]),
        HistoryEvent::invoke(TxnId(2), 1, "kv", TxnType::Ro, 10),
        HistoryEvent::respond(TxnId(2), 1, "kv", TxnType::Ro, 20).with_reads(vec![(x, Some(w))]),
        HistoryEvent::invoke(TxnId(3), 2, "kv", TxnType::Ro, 30),
        HistoryEvent::respond(TxnId(3), 2, "kv", TxnType::Ro, 40).with_reads(vec![(y, None)]),
        HistoryEvent::respond(w, 0, "kv", TxnType::Rw, 50),
    ])
}

fn c1_litmus() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let t = Instant::now();
    let fig = dir.path().join("figure.log");
    std::fs::write(&fig, figure_history().to_text()).unwrap();
    let (rss, ss) = (cli_check("rss", &fig), cli_check("ss", &fig));
    let sim = dir.path().join("sim");
    let (code, _) = cli(&["scenario", "litmus", "--mode", "rss", "--out-dir", sim.to_str().unwrap()]);
    let hist = sim.join("history.log");
    let (sim_rss, sim_ss) = (cli_check("rss", &hist), cli_check("ss", &hist));
    let elapsed = t.elapsed();
    outcome(
        code == 0 && rss == 0 && ss == 1 && sim_rss == 0 && sim_ss == 1 && elapsed < Duration::from_secs(1),
        format!(
            "figure: rss exit {rss}, ss exit {ss}; simulated: rss exit {sim_rss}, ss exit {sim_ss}; {:.0} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn c2_tiny(audit: &mut Audit) -> Outcome {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut max_txns = 0;
    for seed in 0..100 {
        for (mode, model) in [(Mode::SpannerRss, Model::Rss), (Mode::SpannerSs, Model::Ss)] {
            let run = tiny(mode, seed).expect("tiny run");
            audit.add(&run.cluster);
            let committed = run.history.transactions().unwrap().iter().filter(|t| t.committed()).count();
            max_txns = max_txns.max(committed);
            let v = check(&run.history, model).expect("well-formed");
            if !v.is_accepted() {
                failures.push(format!("seed {seed} {}: {v}", mode.name()));
            }
        }
    }
    let elapsed = t.elapsed();
    outcome(
        failures.is_empty() && max_txns <= 12 && elapsed < Duration::from_secs(120),
        format!(
            "200 histories, {} failures, at most {max_txns} committed transactions, {:.1} s{}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn c3_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let limits = CheckLimits {
        max_units: 16,
        time: Duration::from_secs(30),
    };
    let mut disagreements = Vec::new();
    let mut accepted = [0usize; 3];
    for i in 0..1000 {
        let h = common::gen::history(&mut rng, 8, 8);
        for (m, model) in Model::ALL.into_iter().enumerate() {
            let want = common::oracle::verdict(&h, model);
            let got = check_with(&h, model, limits).expect("well-formed");
            if got.is_unknown() || got.is_accepted() != want {
                disagreements.push(format!("history {i} {model}: oracle {want}, checker {got}"));
            }
            accepted[m] += usize::from(want);
        }
    }
    outcome(
        disagreements.is_empty() && accepted.iter().all(|a| *a > 0 && *a < 1000),
        format!(
            "1000 histories x 3 models, {} disagreements; oracle accepts rss {} ss {} rsc {}{}",
            disagreements.len(),
            accepted[0],
            accepted[1],
            accepted[2],
            disagreements.first().map(|d| format!("; first: {d}")).unwrap_or_default()
        ),
    )
}

fn latency_config(mode: Mode, skew: f64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::wan_default(mode, seed);
    cfg.duration_us = LATENCY_DURATION_US;
    cfg.record_history = false;
    cfg.workload.skew = skew;
    cfg.workload.model = ClientModel::PartlyOpen {
        lambda: LAMBDA,
        stay_prob: 0.9,
        think_us: 0,
    };
    cfg
}

fn run_pair(skew: f64, audit: &mut Audit) -> (RunOutput, RunOutput, Duration) {
    let t = Instant::now();
    let rss = run_experiment(&latency_config(Mode::SpannerRss, skew, 1)).expect("rss run");
    let ss = run_experiment(&latency_config(Mode::SpannerSs, skew, 1)).expect("ss run");
    audit.add(&rss.cluster);
    audit.add(&ss.cluster);
    (rss, ss, t.elapsed())
}

fn c4_tail(audit: &mut Audit) -> Outcome {
    let (rss, ss, elapsed) = run_pair(0.9, audit);
    let (a, b) = (rss.summary.row("ro").unwrap(), ss.summary.row("ro").unwrap());
    let reduction = 1.0 - a.p99_ms / b.p99_ms;
    outcome(
        a.count >= 20_000 && b.count >= 20_000 && reduction >= 0.20 && elapsed < Duration::from_secs(300),
        format!(
            "RO p99 {:.1} ms vs {:.1} ms ({:.1}% lower), {} / {} samples, {:.1} s",
            a.p99_ms,
            b.p99_ms,
            reduction * 100.0,
            a.count,
            b.count,
            elapsed.as_secs_f64()
        ),
    )
}

fn c5_fast_path(audit: &mut Audit) -> Outcome {
    let (rss, ss, _) = run_pair(0.5, audit);
    let (a, b) = (rss.summary.row("ro").unwrap(), ss.summary.row("ro").unwrap());
    let cfg = latency_config(Mode::SpannerRss, 0.5, 1);
    let m = &cfg.matrix;
    // farthest client-to-leader round trip, with both legs at maximum jitter
    let bound_ms = (0..m.len())
        .flat_map(|c| cfg.leader_placement.iter().map(move |l| (RegionId(c), *l)))
        .map(|(c, l)| m.rtt_ms(c, l) + 2.0 * m.max_jitter_us(c, l) as f64 / 1e3)
        .fold(0.0, f64::max);
    let diff = (a.p50_ms - b.p50_ms).abs() / b.p50_ms;
    outcome(
        diff <= 0.01 && a.p50_ms <= bound_ms && b.p50_ms <= bound_ms,
        format!(
            "RO p50 {:.2} ms vs {:.2} ms ({:.2}% apart), bound {:.1} ms",
            a.p50_ms,
            b.p50_ms,
            diff * 100.0,
            bound_ms
        ),
    )
}

fn c6_rw_parity(audit: &mut Audit) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for seed in 1..=3 {
        let run = |mode| {
            let mut cfg = RunConfig::wan_default(mode, seed);
            cfg.duration_us = 60_000_000;
            cfg.record_history = false;
            cfg.workload.model = ClientModel::PartlyOpen {
                lambda: 30.0,
                stay_prob: 0.0,
                think_us: 0,
            };
            run_experiment(&cfg).expect("parity run")
        };
        let (rss, ss) = (run(Mode::SpannerRss), run(Mode::SpannerSs));
        audit.add(&rss.cluster);
        audit.add(&ss.cluster);
        let rw = |o: &RunOutput| {
            let mut v: Vec<_> = o
                .cluster
                .shared()
                .samples
                .iter()
                .filter(|s| !s.read_only)
                .map(|s| (s.session, s.invoke_us, s.respond_us, s.attempts))
                .collect();
            v.sort_unstable();
            v
        };
        let (ra, rb) = (rw(&rss), rw(&ss));
        let (ma, mb) = (
            message_totals(&rss.summary.message_counts),
            message_totals(&ss.summary.message_counts),
        );
        let same = !ra.is_empty() && ra == rb && ma.rw == mb.rw && ma.ro - ma.ro_slow == mb.ro && mb.ro_slow == 0;
        pass &= same;
        notes.push(format!(
            "seed {seed}: {} RW samples {}, RW messages {} vs {}, RO messages {}+{} slow vs {}",
            ra.len(),
            if ra == rb { "identical" } else { "differ" },
            ma.rw,
            mb.rw,
            ma.ro - ma.ro_slow,
            ma.ro_slow,
            mb.ro
        ));
    }
    outcome(pass, notes.join("; "))
}

fn c8_fence(audit: &mut Audit) -> Outcome {
    let mut ok = [0usize; 2];
    let mut missed_without = 0;
    for seed in 0..100 {
        for (i, variant) in [FenceVariant::Writer, FenceVariant::Observer].into_iter().enumerate() {
            let f = fence_scenario(Mode::SpannerRss, seed, variant, true).expect("fence run");
            audit.add(&f.run.cluster);
            if !f.reads_saw_write.is_empty() && f.reads_saw_write.iter().all(|b| *b) {
                ok[i] += 1;
            }
        }
        let f = fence_scenario(Mode::SpannerRss, seed, FenceVariant::Observer, false).expect("fence run");
        audit.add(&f.run.cluster);
        if f.reads_saw_write.iter().any(|b| !*b) {
            missed_without += 1;
        }
    }
    outcome(
        ok == [100, 100],
        format!(
            "writer fences {}/100, observer fences {}/100; without the fence a read missed the write in {missed_without}/100",
            ok[0], ok[1]
        ),
    )
}

fn c9_composition(audit: &mut Audit) -> Outcome {
    let (mut rejected_off, mut accepted_on, mut unknown) = (0, 0, 0);
    for seed in 0..50 {
        let off = composition(seed, false).expect("composition run");
        let on = composition(seed, true).expect("composition run");
        audit.add(&off.cluster);
        audit.add(&on.cluster);
        let v_off = check_with(&off.history, Model::Rss, composition_limits()).expect("well-formed");
        let v_on = check_with(&on.history, Model::Rss, composition_limits()).expect("well-formed");
        rejected_off += usize::from(v_off.is_rejected());
        accepted_on += usize::from(v_on.is_accepted());
        unknown += usize::from(v_off.is_unknown()) + usize::from(v_on.is_unknown());
    }
    outcome(
        rejected_off >= 1 && accepted_on == 50,
        format!("without libRSS {rejected_off}/50 rejected; with libRSS {accepted_on}/50 accepted; {unknown} unknown"),
    )
}

fn c7_invariants(audit: &Audit) -> Outcome {
    outcome(
        audit.violations.is_empty() && audit.rw > 0 && audit.ro > 0,
        format!(
            "{} runs, {} RW and {} RO transactions audited, {} violations{}",
            audit.runs,
            audit.rw,
            audit.ro,
            audit.violations.len(),
            audit.violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

fn main() {
    let mut audit = Audit::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        println!("[{}] {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "litmus", c1_litmus());
    record(2, "desk-scale soundness", c2_tiny(&mut audit));
    record(3, "checker oracle equivalence", c3_oracle());
    record(4, "tail latency direction", c4_tail(&mut audit));
    record(5, "fast-path parity", c5_fast_path(&mut audit));
    record(6, "read-write parity", c6_rw_parity(&mut audit));
    record(8, "fence property", c8_fence(&mut audit));
    record(9, "composition", c9_composition(&mut audit));
    record(7, "timestamp invariants", c7_invariants(&audit));
    let failed: Vec<u32> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| *n).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

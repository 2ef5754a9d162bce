use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rsskv::checker::{check_with, CheckLimits, History, Model};
use rsskv::experiment::{run_experiment, write_outputs, CheckPolicy, RunConfig, RunOutput};
use rsskv::scenarios::{self, FenceVariant, ScenarioRun};
use rsskv::shard::Mode;
use rsskv::simnet::LatencyMatrix;
use rsskv::timebase::TrueTimeConfig;
use rsskv::workload::ClientModel;

#[derive(Parser)]
#[command(name = "rsskv", version, about = "Simulated geo-distributed transactional KV store and history checker")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a workload and write history.log and summary.csv.
    Run(RunArgs),
    /// Check a history file against a consistency model.
    Check(CheckArgs),
    /// Run a scripted scenario and write its history.log.
    Scenario(ScenarioArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientModelArg {
    PartlyOpen,
    Closed,
}

#[derive(Args)]
struct RunArgs {
    /// spanner-ss or spanner-rss (ss and rss also accepted).
    #[arg(long, default_value = "spanner-rss")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Latency table file; defaults to the built-in CA/VA/IR matrix.
    #[arg(long)]
    latency_matrix: Option<PathBuf>,
    /// Uniform delay jitter as a fraction of the one-way delay.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    tt_epsilon_us: u64,
    /// Fence bound L; defaults to three times the largest commit estimate.
    #[arg(long)]
    fence_l_us: Option<u64>,
    #[arg(long, default_value_t = 3)]
    shards: usize,
    #[arg(long, default_value_t = 3)]
    replicas_per_shard: usize,
    /// Comma-separated leader regions, assigned to shards round-robin.
    #[arg(long, value_delimiter = ',')]
    leader_placement: Vec<String>,
    #[arg(long, default_value_t = 0.9)]
    skew: f64,
    #[arg(long, default_value_t = 10_000)]
    num_keys: u64,
    #[arg(long, value_enum, default_value = "partly-open")]
    client_model: ClientModelArg,
    /// Session arrivals per second (partly-open).
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    /// Probability of issuing another transaction (partly-open).
    #[arg(long, default_value_t = 0.9)]
    stay_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    think_ms: f64,
    #[arg(long, default_value_t = 10)]
    closed_clients: usize,
    /// Simulated seconds during which transactions are issued.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Retries of an aborted read-write transaction before it is abandoned.
    #[arg(long, default_value_t = rsskv::cluster::DEFAULT_MAX_RETRIES)]
    max_retries: u32,
    #[arg(long, default_value = "none")]
    check: CheckPolicy,
    /// Do not record the per-event history.
    #[arg(long)]
    no_history: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: Model,
    #[arg(long)]
    input: PathBuf,
    /// Largest number of units searched before answering unknown.
    #[arg(long, default_value_t = 12)]
    cap: usize,
    /// Search time limit in seconds.
    #[arg(long, default_value_t = 5.0)]
    timeout: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioName {
    Litmus,
    FenceWriter,
    FenceObserver,
    Composition,
    Tiny,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(value_enum)]
    name: ScenarioName,
    #[arg(long, default_value = "spanner-rss")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Fence scenarios: leave the fence out.
    #[arg(long)]
    no_fence: bool,
    /// Composition: disable the libRSS registry.
    #[arg(long)]
    no_librss: bool,
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

fn run_config(a: &RunArgs) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::wan_default(a.mode, a.seed);
    if let Some(p) = &a.latency_matrix {
        let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        cfg.matrix = LatencyMatrix::parse(&text).map_err(|e| e.to_string())?;
        cfg.leader_placement = (0..cfg.matrix.len()).map(rsskv::simnet::RegionId).collect();
    }
    if let Some(j) = a.jitter {
        cfg.matrix = cfg.matrix.with_jitter(j);
    }
    if !a.leader_placement.is_empty() {
        cfg.leader_placement = a
            .leader_placement
            .iter()
            .map(|n| cfg.matrix.region(n).ok_or_else(|| format!("unknown region {n:?}")))
            .collect::<Result<_, _>>()?;
    }
    cfg.clock = TrueTimeConfig {
        epsilon_us: a.tt_epsilon_us,
    };
    cfg.fence_l_us = a.fence_l_us;
    cfg.shards = a.shards;
    cfg.replicas_per_shard = a.replicas_per_shard;
    cfg.workload.skew = a.skew;
    cfg.workload.num_keys = a.num_keys;
    let think_us = ms_to_us(a.think_ms);
    cfg.workload.model = match a.client_model {
        ClientModelArg::PartlyOpen => ClientModel::PartlyOpen {
            lambda: a.lambda,
            stay_prob: a.stay_prob,
            think_us,
        },
        ClientModelArg::Closed => ClientModel::Closed {
            clients: a.closed_clients,
            think_us,
        },
    };
    cfg.duration_us = ms_to_us(a.duration * 1000.0);
    cfg.max_retries = a.max_retries;
    cfg.check = a.check;
    cfg.record_history = !a.no_history;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn report(out: &RunOutput) {
    print!("{}", out.summary.to_csv());
    println!(
        "invariants: {} rw, {} ro, {} violations",
        out.invariants.rw_checked,
        out.invariants.ro_checked,
        out.invariants.violations.len()
    );
    for v in &out.invariants.violations {
        println!("  {v}");
    }
    if let Some(v) = &out.verdict {
        println!("check: {v}");
    }
}

fn cmd_run(a: RunArgs) -> Result<ExitCode, String> {
    let cfg = run_config(&a)?;
    let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
    write_outputs(&a.out_dir, &out).map_err(|e| format!("{}: {e}", a.out_dir.display()))?;
    report(&out);
    let bad = !out.invariants.ok() || out.verdict.as_ref().is_some_and(|v| v.is_rejected());
    Ok(if bad { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_check(a: CheckArgs) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let history = History::parse(&text).map_err(|e| e.to_string())?;
    let limits = CheckLimits {
        max_units: a.cap,
        time: Duration::from_secs_f64(a.timeout),
    };
    let v = check_with(&history, a.model, limits).map_err(|e| e.to_string())?;
    println!("{v}");
    Ok(ExitCode::from(v.exit_code() as u8))
}

fn write_history(dir: &Path, run: &ScenarioRun) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join("history.log");
    std::fs::write(&path, run.history.to_text()).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_scenario(a: ScenarioArgs) -> Result<ExitCode, String> {
    let err = |e: rsskv::experiment::RunError| e.to_string();
    let run = match a.name {
        ScenarioName::Litmus => scenarios::litmus(a.mode, a.seed).map_err(err)?,
        ScenarioName::FenceWriter | ScenarioName::FenceObserver => {
            let variant = match a.name {
                ScenarioName::FenceWriter => FenceVariant::Writer,
                _ => FenceVariant::Observer,
            };
            let f = scenarios::fence_scenario(a.mode, a.seed, variant, !a.no_fence).map_err(err)?;
            println!("reads after the signal saw the write: {:?}", f.reads_saw_write);
            f.run
        }
        ScenarioName::Composition => scenarios::composition(a.seed, !a.no_librss).map_err(err)?,
        ScenarioName::Tiny => scenarios::tiny(a.mode, a.seed).map_err(err)?,
    };
    write_history(&a.out_dir, &run)?;
    println!(
        "{} events written to {}",
        run.history.events.len(),
        a.out_dir.join("history.log").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Scenario(a) => cmd_scenario(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

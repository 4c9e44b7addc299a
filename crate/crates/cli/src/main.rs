//! `tbft`: run simulated scenarios, sweep them over seeds, and check traces.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tbft::harness::{check_safety, complexity_fit, evaluate, sweep, FitReport, Metrics, ScenarioConfig};
use tbft::protocol::Mode;
use tbft::simnet::Trace;

#[derive(Parser)]
#[command(name = "tbft", version, about = "Deterministic TBFT simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Basic,
    Pipelined,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Basic => Mode::Basic,
            ModeArg::Pipelined => Mode::Pipelined,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trace and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace output (JSONL). Defaults to `<name>-<seed>.trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics output (JSON). Defaults to `<name>-<seed>.metrics.json`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Re-verify a stored trace offline.
    CheckSafety {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run a scenario template over a seed range and replica counts.
    Sweep {
        #[arg(long)]
        template: PathBuf,
        /// Half-open range `A..B`.
        #[arg(long, value_parser = parse_range)]
        seeds: Range<u64>,
        #[arg(long, value_delimiter = ',', default_value = "3,5,9")]
        n_list: Vec<usize>,
        /// Run both basic and pipelined mode and report their ratio.
        #[arg(long)]
        both_modes: bool,
        /// Report output (JSON). Printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one metrics file per run into this directory.
        #[arg(long)]
        metrics_dir: Option<PathBuf>,
    },
    /// Fit message counts against n from a directory of metrics files.
    Fit {
        #[arg(long)]
        metrics_dir: PathBuf,
    },
}

fn parse_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if a >= b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(a..b)
}

/// Outcome of a subcommand that maps to a non-zero exit code.
enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<Outcome> {
    match cmd {
        Cmd::Run { config, seed, trace, metrics, mode } => cmd_run(&config, seed, trace, metrics, mode),
        Cmd::CheckSafety { trace } => cmd_check(&trace),
        Cmd::Sweep { template, seeds, n_list, both_modes, out, metrics_dir } => {
            cmd_sweep(&template, seeds, &n_list, both_modes, out, metrics_dir)
        }
        Cmd::Fit { metrics_dir } => cmd_fit(&metrics_dir),
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ScenarioConfig::from_json(&text).with_context(|| format!("invalid scenario {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    trace: Option<PathBuf>,
    metrics_out: Option<PathBuf>,
    mode: Option<ModeArg>,
) -> Result<Outcome> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m.into();
    }
    let stem = format!("{}-{}", if cfg.name.is_empty() { "run" } else { &cfg.name }, cfg.seed);
    let trace = trace.unwrap_or_else(|| PathBuf::from(format!("{stem}.trace.jsonl")));
    let metrics_out = metrics_out.unwrap_or_else(|| PathBuf::from(format!("{stem}.metrics.json")));

    let (summary, outcome) = evaluate(&cfg);
    let f = File::create(&trace).with_context(|| format!("creating {}", trace.display()))?;
    outcome.trace.write_jsonl(BufWriter::new(f))?;
    write_json(&metrics_out, &summary.metrics)?;

    let m = &summary.metrics;
    println!(
        "{} n={} seed={} mode={}: {}/{} requests answered, {} view changes, end tick {}",
        cfg.name, cfg.n, cfg.seed, m.mode, m.completed, m.submitted, m.view_changes, m.end_tick
    );
    if summary.liveness_timeout {
        let tag = if summary.liveness_required { "" } else { " (scenario does not require liveness)" };
        println!("liveness timeout{tag}");
    }
    match summary.failure_reason() {
        Some(reason) => {
            println!("FAIL: {reason}");
            Ok(Outcome::Failed)
        }
        None => {
            println!("safety: PASS");
            Ok(Outcome::Ok)
        }
    }
}

fn cmd_check(path: &Path) -> Result<Outcome> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace = Trace::read_jsonl(BufReader::new(f)).map_err(anyhow::Error::msg).context("malformed trace")?;
    if trace.header().is_none() {
        bail!("malformed trace: first record is not a config header");
    }
    let verdict = check_safety(&trace);
    match verdict.first() {
        None => {
            println!("PASS ({} entries in the longest honest log)", verdict.executed);
            Ok(Outcome::Ok)
        }
        Some(v) => {
            println!("FAIL: {} violation(s); first: {v}", verdict.violations.len());
            Ok(Outcome::Failed)
        }
    }
}

fn cmd_sweep(
    template: &Path,
    seeds: Range<u64>,
    n_list: &[usize],
    both_modes: bool,
    out: Option<PathBuf>,
    metrics_dir: Option<PathBuf>,
) -> Result<Outcome> {
    let cfg = load_config(template)?;
    let report = match sweep(&cfg, seeds, n_list, both_modes) {
        Ok(r) => r,
        Err(failure) => {
            println!("FAIL: {failure}");
            return Ok(Outcome::Failed);
        }
    };
    if let Some(dir) = metrics_dir {
        fs::create_dir_all(&dir)?;
        for r in &report.runs {
            let name = format!("{}-{:?}-n{}-s{}.json", report.scenario, r.mode, r.n, r.seed).to_lowercase();
            write_json(&dir.join(name), &r.metrics)?;
        }
    }
    for a in &report.aggregates {
        eprintln!(
            "n={} {:?}: {}/{} completed, {:.2} msgs/commit, {:.2} client msgs/request, {} view changes",
            a.n, a.mode, a.completed, a.runs, a.mean_messages_per_commit, a.mean_client_messages_per_request, a.view_changes
        );
    }
    if let Some(r) = report.pipeline_ratio {
        eprintln!("pipelined/basic commits per round: {r:.3}");
    }
    match out {
        Some(p) => write_json(&p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct FitSummary {
    runs: usize,
    normal_case: FitReport,
    view_change: Option<FitReport>,
    /// Mean client messages per request, per n.
    client_messages_per_request: BTreeMap<usize, f64>,
}

fn cmd_fit(dir: &Path) -> Result<Outcome> {
    let mut all = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.extension().is_some_and(|x| x == "json") {
            let text = fs::read_to_string(&path)?;
            let m: Metrics = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            all.push(m);
        }
    }
    if all.is_empty() {
        bail!("no metrics files in {}", dir.display());
    }
    let normal: Vec<(f64, f64)> =
        all.iter().filter(|m| m.commits > 0).map(|m| (m.n as f64, m.messages_per_commit)).collect();
    let vc: Vec<(f64, f64)> =
        all.iter().filter_map(|m| m.messages_per_view_change.map(|v| (m.n as f64, v))).collect();
    let mut client: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for m in &all {
        let e = client.entry(m.n).or_default();
        e.0 += m.client_messages_per_request;
        e.1 += 1;
    }
    let summary = FitSummary {
        runs: all.len(),
        normal_case: complexity_fit(&normal).context("normal-case fit")?,
        view_change: complexity_fit(&vc).ok(),
        client_messages_per_request: client.into_iter().map(|(n, (s, k))| (n, s / k as f64)).collect(),
    };
    let show = |label: &str, r: &FitReport| {
        eprintln!(
            "{label}: slope {:.3}, intercept {:.3}, R^2 {:.4}, quadratic term p = {:.3}",
            r.linear.slope, r.linear.intercept, r.linear.r_squared, r.p_value
        );
    };
    show("messages per commit", &summary.normal_case);
    if let Some(v) = &summary.view_change {
        show("messages per view change", v);
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome::Ok)
}

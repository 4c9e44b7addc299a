//! Metrics derived from a trace alone, so a stored trace reproduces them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::protocol::MessageKind;
use crate::simnet::trace::{note_field, parse_counter};
use crate::simnet::Trace;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    pub p50: u64,
    pub p99: u64,
    /// Mean latency divided by delta.
    pub mean_round_trips: f64,
}

impl LatencyStats {
    fn from_samples(mut xs: Vec<u64>, delta: u64) -> Self {
        if xs.is_empty() {
            return LatencyStats::default();
        }
        xs.sort_unstable();
        let n = xs.len();
        let mean = xs.iter().sum::<u64>() as f64 / n as f64;
        let rank = |q: f64| xs[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        LatencyStats {
            count: n as u64,
            min: xs[0],
            max: xs[n - 1],
            mean,
            p50: rank(0.5),
            p99: rank(0.99),
            mean_round_trips: mean / delta as f64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    pub delta: u64,
    pub mode: String,
    pub submitted: u64,
    pub completed: u64,
    /// Distinct requests executed by at least one honest replica.
    pub commits: u64,
    /// Distinct normal-case proposals that gathered a QC.
    pub voting_rounds: u64,
    pub commits_per_round: f64,
    /// Submit to first verified proof of commitment, in ticks.
    pub commit_latency: LatencyStats,
    /// Submit to first verified proof of execution, in ticks.
    pub execute_latency: LatencyStats,
    /// All messages between two replicas.
    pub replica_messages: u64,
    /// Replica-to-replica messages of the normal-case phases.
    pub normal_messages: u64,
    /// Replica-to-replica view-change messages.
    pub view_change_messages: u64,
    /// Messages with a client at either end.
    pub client_messages: u64,
    pub messages_per_commit: f64,
    pub client_messages_per_request: f64,
    /// Views above 0 that some honest replica entered.
    pub view_changes: u64,
    pub messages_per_view_change: Option<f64>,
    pub per_kind: BTreeMap<String, u64>,
    pub dropped: u64,
    pub end_tick: u64,
    pub liveness_timeout: bool,
}

fn is_normal(kind: MessageKind) -> bool {
    matches!(
        kind,
        MessageKind::Prepare
            | MessageKind::VoteForCommit
            | MessageKind::Commit
            | MessageKind::VoteForDecide
            | MessageKind::Decide
    )
}

pub fn metrics(trace: &Trace) -> Metrics {
    let header = trace.header().unwrap_or_default();
    let corrupt: BTreeSet<String> = header.corrupt.iter().map(|r| format!("r{r}")).collect();
    let mut m = Metrics {
        scenario: header.name.clone(),
        n: header.n,
        f: header.f,
        seed: header.seed,
        delta: header.delta,
        mode: format!("{:?}", header.mode).to_lowercase(),
        ..Metrics::default()
    };
    let mut submit: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut commit_lat = Vec::new();
    let mut exec_lat = Vec::new();
    let mut executed: BTreeSet<String> = BTreeSet::new();
    let mut rounds: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut views: BTreeSet<u64> = BTreeSet::new();

    for r in &trace.records {
        match r.kind.as_str() {
            "send" => {
                let name = r.note.split_whitespace().next().unwrap_or("");
                *m.per_kind.entry(name.to_string()).or_default() += 1;
                let replicas = r.src.starts_with('r') && r.dst.starts_with('r');
                if r.src.starts_with('c') || r.dst.starts_with('c') {
                    m.client_messages += 1;
                } else if replicas {
                    m.replica_messages += 1;
                    match MessageKind::from_name(name) {
                        Some(k) if is_normal(k) => m.normal_messages += 1,
                        Some(k) if k.is_view_change() => m.view_change_messages += 1,
                        _ => {}
                    }
                }
            }
            "drop" => m.dropped += 1,
            "client_submit" => {
                m.submitted += 1;
                if let Some(rid) = note_field(&r.note, "rid") {
                    submit.insert((r.src.clone(), rid.to_string()), r.tick);
                }
            }
            "client_proof" => {
                let (Some(rid), Some(kind)) = (note_field(&r.note, "rid"), note_field(&r.note, "kind")) else {
                    continue;
                };
                let Some(t0) = submit.get(&(r.src.clone(), rid.to_string())) else { continue };
                let lat = r.tick - t0;
                if kind == "Commit" || kind == "NewView" {
                    commit_lat.push(lat);
                }
                if kind == "Execute" || kind == "NewView" {
                    exec_lat.push(lat);
                }
            }
            "client_done" => m.completed += 1,
            "execute" if !corrupt.contains(&r.src) => {
                if let Some(d) = &r.digest {
                    executed.insert(d.clone());
                }
            }
            "qc_accept" if note_field(&r.note, "kind") != Some("NewView") => {
                if let Some(c) = r.counter.as_deref().and_then(parse_counter) {
                    rounds.insert(c);
                }
            }
            "enter_view" if !corrupt.contains(&r.src) => {
                if let Some(v) = note_field(&r.note, "view").and_then(|v| v.parse().ok()) {
                    views.insert(v);
                }
            }
            "liveness_timeout" => m.liveness_timeout = true,
            "end" => m.end_tick = r.tick,
            _ => {}
        }
    }
    m.commits = executed.len() as u64;
    m.voting_rounds = rounds.len() as u64;
    m.commits_per_round = ratio(m.commits, m.voting_rounds);
    m.commit_latency = LatencyStats::from_samples(commit_lat, header.delta.max(1));
    m.execute_latency = LatencyStats::from_samples(exec_lat, header.delta.max(1));
    m.messages_per_commit = ratio(m.normal_messages, m.commits);
    m.client_messages_per_request = ratio(m.client_messages, m.submitted);
    m.view_changes = views.len() as u64;
    m.messages_per_view_change = (m.view_changes > 0).then(|| ratio(m.view_change_messages, m.view_changes));
    m
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

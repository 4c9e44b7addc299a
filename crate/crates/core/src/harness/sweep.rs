//! Runs one scenario template over many seeds and replica counts.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::metrics::{metrics, Metrics};
use super::safety::check_safety;
use crate::protocol::Mode;
use crate::simnet::{check_partial_synchrony, run, RunOutcome};

/// Outcome of one run, judged against the scenario's tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    pub mode: Mode,
    pub completed: bool,
    pub liveness_timeout: bool,
    pub liveness_required: bool,
    pub safety_passed: bool,
    pub first_violation: Option<String>,
    pub synchrony_ok: bool,
    pub metrics: Metrics,
}

impl RunSummary {
    pub fn ok(&self) -> bool {
        self.safety_passed && self.synchrony_ok && (self.completed || !self.liveness_required)
    }

    pub fn failure_reason(&self) -> Option<String> {
        if let Some(v) = &self.first_violation {
            return Some(format!("safety violation: {v}"));
        }
        if !self.synchrony_ok {
            return Some("post-GST delivery bound broken".into());
        }
        if self.liveness_required && !self.completed {
            return Some(format!("liveness timeout at tick {}", self.metrics.end_tick));
        }
        None
    }
}

/// Runs a scenario and judges it. The outcome is returned for callers that
/// want to keep the trace.
pub fn evaluate(cfg: &ScenarioConfig) -> (RunSummary, RunOutcome) {
    let out = run(cfg);
    let verdict = check_safety(&out.trace);
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        n: cfg.n,
        seed: cfg.seed,
        mode: cfg.mode,
        completed: out.completed,
        liveness_timeout: out.liveness_timeout,
        liveness_required: cfg.liveness && cfg.gst.tick().is_some(),
        safety_passed: verdict.passed(),
        first_violation: verdict.first().map(|v| v.to_string()),
        synchrony_ok: check_partial_synchrony(&out.trace),
        metrics: metrics(&out.trace),
    };
    (summary, out)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{scenario} (n={n}, seed={seed}, mode={mode:?}): {reason}")]
pub struct SweepFailure {
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    pub mode: Mode,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mode: Mode,
    pub runs: usize,
    pub completed: usize,
    pub mean_messages_per_commit: f64,
    pub mean_client_messages_per_request: f64,
    pub mean_commit_latency: f64,
    pub mean_commits_per_round: f64,
    pub view_changes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub seeds: (u64, u64),
    pub n_list: Vec<usize>,
    pub runs: Vec<RunSummary>,
    pub aggregates: Vec<Aggregate>,
    /// Pipelined over basic commits per voting round, when both modes ran.
    pub pipeline_ratio: Option<f64>,
}

/// Runs `template` for every `(mode, n, seed)` in parallel and aggregates the
/// results. The first failing run, in job order, aborts the sweep.
pub fn sweep(
    template: &ScenarioConfig,
    seeds: Range<u64>,
    n_list: &[usize],
    both_modes: bool,
) -> Result<SweepReport, SweepFailure> {
    let modes = if both_modes { vec![Mode::Basic, Mode::Pipelined] } else { vec![template.mode] };
    let mut jobs = Vec::new();
    for &mode in &modes {
        for &n in n_list {
            for seed in seeds.clone() {
                jobs.push(template.clone().with_mode(mode).with_n(n).with_seed(seed));
            }
        }
    }
    for cfg in &jobs {
        cfg.validate().map_err(|e| SweepFailure {
            scenario: cfg.name.clone(),
            n: cfg.n,
            seed: cfg.seed,
            mode: cfg.mode,
            reason: format!("invalid config: {e}"),
        })?;
    }
    let runs: Vec<RunSummary> = jobs.par_iter().map(|cfg| evaluate(cfg).0).collect();
    if let Some(bad) = runs.iter().find(|r| !r.ok()) {
        return Err(SweepFailure {
            scenario: bad.scenario.clone(),
            n: bad.n,
            seed: bad.seed,
            mode: bad.mode,
            reason: bad.failure_reason().unwrap_or_default(),
        });
    }
    let mut aggregates = Vec::new();
    for &mode in &modes {
        for &n in n_list {
            let group: Vec<&RunSummary> = runs.iter().filter(|r| r.n == n && r.mode == mode).collect();
            let mean = |f: &dyn Fn(&RunSummary) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / group.len().max(1) as f64;
            aggregates.push(Aggregate {
                n,
                mode,
                runs: group.len(),
                completed: group.iter().filter(|r| r.completed).count(),
                mean_messages_per_commit: mean(&|r| r.metrics.messages_per_commit),
                mean_client_messages_per_request: mean(&|r| r.metrics.client_messages_per_request),
                mean_commit_latency: mean(&|r| r.metrics.commit_latency.mean),
                mean_commits_per_round: mean(&|r| r.metrics.commits_per_round),
                view_changes: group.iter().map(|r| r.metrics.view_changes).sum(),
            });
        }
    }
    let pipeline_ratio = both_modes.then(|| {
        let per_mode = |m: Mode| {
            let (c, r) = runs
                .iter()
                .filter(|x| x.mode == m)
                .fold((0u64, 0u64), |(c, r), x| (c + x.metrics.commits, r + x.metrics.voting_rounds));
            c as f64 / r.max(1) as f64
        };
        per_mode(Mode::Pipelined) / per_mode(Mode::Basic)
    });
    Ok(SweepReport {
        scenario: template.name.clone(),
        seeds: (seeds.start, seeds.end),
        n_list: n_list.to_vec(),
        runs,
        aggregates,
        pipeline_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_deterministic_and_ordered() {
        let t = ScenarioConfig::honest(3, 4);
        let a = sweep(&t, 0..3, &[3, 5], true).unwrap();
        let b = sweep(&t, 0..3, &[3, 5], true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 12);
        assert_eq!((a.runs[0].n, a.runs[0].seed, a.runs[0].mode), (3, 0, Mode::Basic));
        assert!(a.pipeline_ratio.is_some());
    }

    #[test]
    fn invalid_substitution_names_the_failing_config() {
        let mut t = ScenarioConfig::honest(5, 2);
        t.adversary.corrupt = vec![
            crate::simnet::script::CorruptReplica {
                replica: crate::simnet::script::ReplicaRef::Id(0),
                crash_at: None,
                faults: Default::default(),
            },
            crate::simnet::script::CorruptReplica {
                replica: crate::simnet::script::ReplicaRef::Id(1),
                crash_at: None,
                faults: Default::default(),
            },
        ];
        let err = sweep(&t, 0..1, &[5, 3], false).unwrap_err();
        assert_eq!((err.n, err.seed), (3, 0));
        assert!(err.reason.contains("invalid config"));
    }
}

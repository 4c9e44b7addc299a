//! Offline safety verification of a simulation trace.
//!
//! Everything here is a pure function of the trace records, so a stored trace
//! file can be re-verified without rerunning the scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::simnet::trace::{note_field, parse_counter};
use crate::simnet::Trace;

/// Which property a counterexample violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Check {
    /// Honest execution logs must be prefixes of one another.
    Prefix,
    /// No two honest replicas execute different requests at one `(c,v)`.
    ConflictingExecution,
    /// A request executed in view `v` by an honest replica is executed by
    /// every honest replica before it enters a later view.
    ViewClosure,
    /// Valid message logs of one view are prefixes of one another.
    LogPrefix,
    /// Every accepted QC is backed by f+1 released shares.
    QcSoundness,
    /// No enclave signs two payloads at one `(c,v)`.
    NonEquivocation,
    /// No enclave releases two shares at one `(c,v)`.
    OneVote,
    Malformed,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Check::Prefix => "prefix",
            Check::ConflictingExecution => "conflicting execution",
            Check::ViewClosure => "view closure",
            Check::LogPrefix => "log prefix",
            Check::QcSoundness => "QC soundness",
            Check::NonEquivocation => "non-equivocation",
            Check::OneVote => "one-vote",
            Check::Malformed => "malformed trace",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub check: Check,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.check, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
    /// Length of the longest honest execution log.
    pub executed: usize,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }

    pub fn count(&self, check: Check) -> usize {
        self.violations.iter().filter(|v| v.check == check).count()
    }
}

type Cv = (u64, u64);

#[derive(Clone, Debug)]
struct Exec {
    seq: u64,
    index: u64,
    counter: Cv,
    request: String,
}

fn replica_of(s: &str) -> Option<u32> {
    s.strip_prefix('r')?.parse().ok()
}

/// Runs every check and collects all counterexamples, in check order.
pub fn check_safety(trace: &Trace) -> Verdict {
    let mut v = Verdict::default();
    let Some(header) = trace.header() else {
        v.violations.push(Violation { check: Check::Malformed, detail: "missing config header".into() });
        return v;
    };
    let corrupt: BTreeSet<u32> = header.corrupt.iter().copied().collect();
    let honest = |r: u32| !corrupt.contains(&r);
    let mut bad = |check: Check, detail: String| v.violations.push(Violation { check, detail });

    let mut execs: BTreeMap<u32, Vec<Exec>> = BTreeMap::new();
    let mut entered: Vec<(u32, u64, u64)> = Vec::new();
    let mut logs: BTreeMap<u64, Vec<(u32, Vec<String>)>> = BTreeMap::new();
    let mut signs: BTreeMap<(u32, Cv), String> = BTreeMap::new();
    let mut shares: BTreeMap<(Cv, String), BTreeSet<u32>> = BTreeMap::new();
    let mut share_seen: BTreeSet<(u32, Cv)> = BTreeSet::new();
    let mut qcs: Vec<(String, Cv, String)> = Vec::new();

    for rec in &trace.records {
        let src = replica_of(&rec.src);
        let counter = rec.counter.as_deref().and_then(parse_counter);
        let digest = rec.digest.clone().unwrap_or_default();
        match rec.kind.as_str() {
            "execute" => {
                let (Some(r), Some(c), Some(i)) =
                    (src, counter, note_field(&rec.note, "pos").and_then(|i| i.parse().ok()))
                else {
                    bad(Check::Malformed, format!("execute record seq {}", rec.seq));
                    continue;
                };
                if honest(r) {
                    execs.entry(r).or_default().push(Exec { seq: rec.seq, index: i, counter: c, request: digest });
                }
            }
            "enter_view" => {
                if let (Some(r), Some(view)) = (src, note_field(&rec.note, "view").and_then(|x| x.parse().ok())) {
                    if honest(r) {
                        entered.push((r, view, rec.seq));
                    }
                }
            }
            "log_accept" => {
                let (Some(r), Some(view)) = (src, note_field(&rec.note, "view").and_then(|x| x.parse().ok())) else {
                    continue;
                };
                if honest(r) {
                    let entries = note_field(&rec.note, "entries")
                        .filter(|e| !e.is_empty())
                        .map(|e| e.split(',').map(str::to_string).collect())
                        .unwrap_or_default();
                    logs.entry(view).or_default().push((replica_of(&rec.dst).unwrap_or(u32::MAX), entries));
                }
            }
            "sign" => {
                if let (Some(r), Some(c)) = (src, counter) {
                    if let Some(prev) = signs.insert((r, c), digest.clone()) {
                        if prev != digest {
                            bad(Check::NonEquivocation, format!("r{r} signed two payloads at ({},{})", c.0, c.1));
                        }
                    }
                }
            }
            "share" => {
                if let (Some(r), Some(c)) = (src, counter) {
                    if !share_seen.insert((r, c)) {
                        bad(Check::OneVote, format!("r{r} released two shares at ({},{})", c.0, c.1));
                    }
                    shares.entry((c, digest)).or_default().insert(r);
                }
            }
            "qc_accept" | "client_proof" => {
                let honest_src = src.is_none_or(honest);
                if let (true, Some(c)) = (honest_src, counter) {
                    qcs.push((rec.src.clone(), c, digest));
                }
            }
            _ => {}
        }
    }

    for (who, c, d) in &qcs {
        let n = shares.get(&(*c, d.clone())).map_or(0, |s| s.len());
        if n < header.f + 1 {
            bad(Check::QcSoundness, format!("{who} accepted a QC at ({},{}) backed by {n} shares", c.0, c.1));
        }
    }

    // Per-replica logs ordered by execution index, checked for gaps.
    let mut ordered: BTreeMap<u32, Vec<&Exec>> = BTreeMap::new();
    for (r, list) in &execs {
        let mut sorted: Vec<&Exec> = list.iter().collect();
        sorted.sort_by_key(|e| e.index);
        for (k, e) in sorted.iter().enumerate() {
            if e.index != k as u64 {
                bad(Check::Prefix, format!("r{r} execution log skips to index {} at position {k}", e.index));
                break;
            }
        }
        ordered.insert(*r, sorted);
    }
    v.executed = ordered.values().map(Vec::len).max().unwrap_or(0);

    let mut by_index: BTreeMap<u64, (u32, Cv, &str)> = BTreeMap::new();
    let mut by_counter: BTreeMap<Cv, (u32, &str)> = BTreeMap::new();
    for (r, list) in &ordered {
        for e in list {
            match by_index.get(&e.index) {
                Some((r0, c0, d0)) if (*c0, *d0) != (e.counter, e.request.as_str()) => {
                    bad(Check::Prefix, format!(
                        "position {}: r{r0} executed ({},{}) {}, r{r} executed ({},{}) {}",
                        e.index, c0.0, c0.1, short(d0), e.counter.0, e.counter.1, short(&e.request)
                    ));
                }
                Some(_) => {}
                None => {
                    by_index.insert(e.index, (*r, e.counter, &e.request));
                }
            }
            match by_counter.get(&e.counter) {
                Some((r0, d0)) if *d0 != e.request => {
                    bad(Check::ConflictingExecution, format!(
                        "({},{}) executed as {} by r{r0} and as {} by r{r}",
                        e.counter.0, e.counter.1, short(d0), short(&e.request)
                    ));
                }
                Some(_) => {}
                None => {
                    by_counter.insert(e.counter, (*r, &e.request));
                }
            }
        }
    }

    // View closure: entering view w requires every honest execution of an earlier view.
    let mut per_view: BTreeMap<u64, BTreeSet<(Cv, &str)>> = BTreeMap::new();
    for list in execs.values() {
        for e in list {
            per_view.entry(e.counter.1).or_default().insert((e.counter, e.request.as_str()));
        }
    }
    for (r, w, seq) in &entered {
        let mine: BTreeSet<(Cv, &str)> = execs
            .get(r)
            .into_iter()
            .flatten()
            .filter(|e| e.seq < *seq)
            .map(|e| (e.counter, e.request.as_str()))
            .collect();
        let missing = per_view
            .range(..*w)
            .flat_map(|(_, s)| s.iter())
            .find(|x| !mine.contains(*x));
        if let Some((c, d)) = missing {
            bad(Check::ViewClosure, format!(
                "r{r} entered view {w} without executing ({},{}) {}",
                c.0, c.1, short(d)
            ));
        }
    }

    for (view, list) in &logs {
        for (i, (oa, a)) in list.iter().enumerate() {
            for (ob, b) in &list[i + 1..] {
                let k = a.len().min(b.len());
                if a[..k] != b[..k] {
                    bad(Check::LogPrefix, format!("view {view}: logs of r{oa} and r{ob} diverge"));
                }
            }
        }
    }

    v.violations.sort_by_key(|x| x.check);
    v
}

fn short(d: &str) -> &str {
    &d[..d.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ScenarioConfig;
    use crate::simnet::{run, TraceRecord};

    fn honest_trace() -> Trace {
        run(&ScenarioConfig::honest(3, 8)).trace
    }

    #[test]
    fn honest_trace_passes() {
        let v = check_safety(&honest_trace());
        assert!(v.passed(), "{:?}", v.first());
        assert_eq!(v.executed, 8);
    }

    #[test]
    fn injected_conflicting_execution_is_a_conflicting_execution() {
        let mut t = honest_trace();
        let pos = t.records.iter().rposition(|r| r.kind == "execute" && r.src == "r1").unwrap();
        t.records[pos].digest = Some("ff".repeat(32));
        let v = check_safety(&t);
        assert!(v.count(Check::ConflictingExecution) >= 1, "{:?}", v.violations);
        assert_eq!(v.first().unwrap().check.to_string(), "prefix");
    }

    #[test]
    fn dropped_execution_breaks_view_closure() {
        let mut t = honest_trace();
        let first = t.records.iter().position(|r| r.kind == "execute" && r.src == "r2").unwrap();
        let mut moved = t.records[first].clone();
        t.records.remove(first);
        // r2 enters view 1 before executing the request it skipped
        let end = t.records.len() - 1;
        let mut ev = TraceRecord { kind: "enter_view".into(), note: "view=1 leader=0".into(), ..moved.clone() };
        ev.seq = 1_000_000;
        moved.seq = 1_000_001;
        t.records.insert(end, moved);
        t.records.insert(end, ev);
        let v = check_safety(&t);
        assert!(v.count(Check::ViewClosure) == 1, "{:?}", v.violations);
    }

    #[test]
    fn duplicate_sign_and_share_are_flagged() {
        let mut t = honest_trace();
        let s = t.records.iter().find(|r| r.kind == "sign").unwrap().clone();
        t.records.push(TraceRecord { digest: Some("00".repeat(32)), ..s });
        let sh = t.records.iter().find(|r| r.kind == "share").unwrap().clone();
        t.records.push(sh);
        let v = check_safety(&t);
        assert_eq!(v.count(Check::NonEquivocation), 1);
        assert_eq!(v.count(Check::OneVote), 1);
    }

    #[test]
    fn unbacked_qc_is_flagged() {
        let mut t = honest_trace();
        t.records.retain(|r| r.kind != "share");
        let v = check_safety(&t);
        assert!(v.count(Check::QcSoundness) > 0);
    }

    #[test]
    fn diverging_logs_in_one_view_are_flagged() {
        let mut t = honest_trace();
        let base = t.records[1].clone();
        for (dst, entries) in [("r1", "(0,0):aa,(1,0):bb"), ("r2", "(0,0):aa,(1,0):cc")] {
            t.records.push(TraceRecord {
                kind: "log_accept".into(),
                src: "r0".into(),
                dst: dst.into(),
                note: format!("view=0 entries={entries}"),
                ..base.clone()
            });
        }
        assert_eq!(check_safety(&t).count(Check::LogPrefix), 1);
    }
}

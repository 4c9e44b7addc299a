//! The JSONL trace: one record per event, fixed key order.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::protocol::Mode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub seq: u64,
    pub kind: String,
    pub src: String,
    pub dst: String,
    pub counter: Option<String>,
    pub digest: Option<String>,
    pub note: String,
}

/// Run parameters stored in the first trace record, so that checkers can
/// work from the trace file alone.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub name: String,
    pub n: usize,
    pub f: usize,
    pub delta: u64,
    pub gst: Option<u64>,
    pub max_ticks: u64,
    pub seed: u64,
    pub mode: Mode,
    pub corrupt: Vec<u32>,
    pub clients: u32,
    pub requests: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn header(&self) -> Option<TraceHeader> {
        let first = self.records.first().filter(|r| r.kind == "config")?;
        serde_json::from_str(&first.note).ok()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, String> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            records.push(rec);
        }
        Ok(Trace { records })
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

/// Reads `key=value` fields out of a note.
pub fn note_field<'a>(note: &'a str, key: &str) -> Option<&'a str> {
    note.split_whitespace().find_map(|part| part.strip_prefix(key)?.strip_prefix('='))
}

/// Parses `"(c,v)"`.
pub fn parse_counter(s: &str) -> Option<(u64, u64)> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    let (c, v) = inner.split_once(',')?;
    Some((c.parse().ok()?, v.parse().ok()?))
}

fn is_honest_endpoint(node: &str, corrupt: &[u32]) -> bool {
    match node.strip_prefix('r') {
        Some(id) => id.parse::<u32>().is_ok_and(|i| !corrupt.contains(&i)),
        None => node.starts_with('c'),
    }
}

/// True iff every message between honest endpoints sent at or after GST was
/// delivered within delta ticks. A message still in flight when the trace
/// ends only counts if its deadline had already passed.
pub fn check_partial_synchrony(trace: &Trace) -> bool {
    let Some(h) = trace.header() else { return false };
    let Some(gst) = h.gst else { return true };
    let end = trace.records.last().map_or(0, |r| r.tick);
    let mut open: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &trace.records {
        let honest = is_honest_endpoint(&r.src, &h.corrupt) && is_honest_endpoint(&r.dst, &h.corrupt);
        if !honest {
            continue;
        }
        let Some(id) = note_field(&r.note, "m") else { continue };
        match r.kind.as_str() {
            "send" if r.tick >= gst => {
                open.insert(id, r.tick);
            }
            "deliver" => {
                if let Some(sent) = open.remove(id) {
                    if r.tick > sent + h.delta {
                        return false;
                    }
                }
            }
            _ => {}
        }
    }
    open.values().all(|sent| sent + h.delta >= end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tick: u64, kind: &str, src: &str, dst: &str, note: &str) -> TraceRecord {
        TraceRecord {
            tick,
            seq: tick,
            kind: kind.into(),
            src: src.into(),
            dst: dst.into(),
            counter: None,
            digest: None,
            note: note.into(),
        }
    }

    fn header(gst: Option<u64>) -> TraceRecord {
        let h = TraceHeader {
            name: "t".into(),
            n: 3,
            f: 1,
            delta: 10,
            gst,
            max_ticks: 100,
            seed: 0,
            mode: Mode::Basic,
            corrupt: vec![2],
            clients: 1,
            requests: 1,
        };
        rec(0, "config", "sim", "", &serde_json::to_string(&h).unwrap())
    }

    #[test]
    fn compliant_trace_passes() {
        let t = Trace {
            records: vec![
                header(Some(5)),
                rec(6, "send", "r0", "r1", "Prepare m=1"),
                rec(16, "deliver", "r0", "r1", "Prepare m=1 sent=6"),
                rec(20, "send", "r0", "r2", "Prepare m=2"),
                rec(90, "deliver", "r0", "r2", "Prepare m=2 sent=20"),
            ],
        };
        assert!(check_partial_synchrony(&t));
    }

    #[test]
    fn one_late_delivery_fails() {
        let t = Trace {
            records: vec![
                header(Some(5)),
                rec(6, "send", "r0", "r1", "Prepare m=1"),
                rec(17, "deliver", "r0", "r1", "Prepare m=1 sent=6"),
            ],
        };
        assert!(!check_partial_synchrony(&t));
    }

    #[test]
    fn lost_message_fails_and_pre_gst_is_free() {
        let lost = Trace {
            records: vec![
                header(Some(5)),
                rec(6, "send", "c0", "r1", "Request m=1"),
                rec(40, "end", "sim", "", ""),
            ],
        };
        assert!(!check_partial_synchrony(&lost));
        let early = Trace {
            records: vec![
                header(Some(50)),
                rec(6, "send", "r0", "r1", "Prepare m=1"),
                rec(45, "deliver", "r0", "r1", "Prepare m=1 sent=6"),
            ],
        };
        assert!(check_partial_synchrony(&early));
        assert!(check_partial_synchrony(&Trace { records: vec![header(None)] }));
    }

    #[test]
    fn jsonl_roundtrip_keeps_key_order() {
        let t = Trace { records: vec![header(Some(0)), rec(3, "send", "r0", "r1", "Prepare m=1")] };
        let bytes = t.to_jsonl();
        let text = String::from_utf8(bytes.clone()).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with(r#"{"tick":3,"seq":3,"kind":"send","src":"r0","dst":"r1","counter":null"#));
        assert_eq!(Trace::read_jsonl(&bytes[..]).unwrap(), t);
    }

    #[test]
    fn note_fields_and_counters_parse() {
        assert_eq!(note_field("Prepare m=12 sent=4", "sent"), Some("4"));
        assert_eq!(note_field("Prepare m=12", "x"), None);
        assert_eq!(parse_counter("(3,1)"), Some((3, 1)));
        assert_eq!(parse_counter("3,1"), None);
    }
}

//! Deterministic discrete-event simulation of replicas, clients and an
//! adversarial network.
//!
//! Time is an integer tick. Events run in `(tick, insertion sequence)` order.
//! A handler takes one tick: messages it emits leave at `now + 1`.

pub mod script;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use crate::client::{ClientAction, ClientEvent, ClientSession, ClientTimer};
use crate::crypto::{hash, Digest, Prg};
use crate::enclave::{trusted_setup, AuditEvent, CounterValue, ReplicaId};
use crate::harness::config::{DelayLaw, OpMix, ScenarioConfig};
use crate::protocol::{
    Action, ClientReply, Faults, Message, MessageKind, NodeId, Operation, Replica, ReplicaConfig,
    ReplicaEvent, Timer,
};

use script::{EnclaveCall, NodePattern, ReplicaRef, RuleAction};
pub use trace::{check_partial_synchrony, Trace, TraceHeader, TraceRecord};

/// Final state of one replica, for tests and reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicaSummary {
    pub id: ReplicaId,
    pub honest: bool,
    pub view: u64,
    pub executed: usize,
    pub kv: Digest,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trace: Trace,
    pub completed: bool,
    pub liveness_timeout: bool,
    pub end_tick: u64,
    pub replicas: Vec<ReplicaSummary>,
}

enum Event {
    Deliver { from: NodeId, to: NodeId, msg: Message, sent: u64, id: u64, tag: &'static str },
    ReplicaTimer { replica: ReplicaId, timer: Timer },
    ClientTimer { client: u32, timer: ClientTimer },
    ClientSubmit { client: u32 },
    Crash { replica: ReplicaId },
    Schedule { replica: ReplicaId, calls: Vec<EnclaveCall> },
}

struct ResolvedRule {
    kinds: Vec<MessageKind>,
    rule: script::Rule,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    now: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    replicas: Vec<Replica>,
    clients: Vec<ClientSession>,
    remaining: Vec<u64>,
    corrupt: BTreeSet<ReplicaId>,
    crashed: BTreeSet<ReplicaId>,
    leader0: ReplicaId,
    rules: Vec<ResolvedRule>,
    partitions: Vec<(Vec<BTreeSet<ReplicaId>>, u64, u64)>,
    net_rng: Prg,
    work_rng: Prg,
    adv_rng: Prg,
    records: Vec<TraceRecord>,
    next_msg: u64,
}

/// Runs a validated scenario to completion or to `max_ticks`.
pub fn run(cfg: &ScenarioConfig) -> RunOutcome {
    let mut root = Prg::new(&[b"tbft/sim".as_slice(), &cfg.seed.to_be_bytes()].concat());
    let (enclaves, dir) = trusted_setup(cfg.n, cfg.f, cfg.crypto, &mut root.fork(b"setup"));
    let leader0 = enclaves[0].leader();
    let resolve = |r: &ReplicaRef| resolve_ref(r, leader0);
    let adv = &cfg.adversary;
    let corrupt: BTreeSet<ReplicaId> = adv.corrupt.iter().map(|c| resolve(&c.replica)).collect();
    let rcfg = ReplicaConfig {
        mode: cfg.mode,
        delta: cfg.delta,
        batch_size: cfg.batch_size,
        window: 64,
    };
    let host_seed = [b"tbft/host".as_slice(), &cfg.seed.to_be_bytes()].concat();
    let replicas = enclaves
        .into_iter()
        .map(|e| {
            let faults = adv
                .corrupt
                .iter()
                .find(|c| resolve(&c.replica) == e.id())
                .map(|c| c.faults.clone())
                .unwrap_or_else(Faults::default);
            Replica::new(e, rcfg.clone(), faults, &host_seed)
        })
        .collect();
    let clients = (0..cfg.clients.count)
        .map(|i| ClientSession::new(i, dir.clone(), cfg.clients.subscription, cfg.delta))
        .collect();
    let rules = adv
        .rules
        .iter()
        .map(|r| ResolvedRule {
            kinds: r.when.kind_filter().expect("validated config"),
            rule: r.clone(),
        })
        .collect();
    let partitions = adv
        .partitions
        .iter()
        .map(|p| (resolve_groups(&p.groups, cfg.n, leader0), p.from, p.until))
        .collect();

    let mut w = World {
        cfg,
        now: 0,
        seq: 0,
        queue: BTreeMap::new(),
        replicas,
        clients,
        remaining: vec![cfg.clients.requests_per_client; cfg.clients.count as usize],
        corrupt,
        crashed: BTreeSet::new(),
        leader0,
        rules,
        partitions,
        net_rng: root.fork(b"network"),
        work_rng: root.fork(b"workload"),
        adv_rng: root.fork(b"adversary"),
        records: Vec::new(),
        next_msg: 0,
    };
    w.header();
    for c in 0..cfg.clients.count {
        for _ in 0..cfg.clients.window {
            w.push(0, Event::ClientSubmit { client: c });
        }
    }
    for c in &adv.corrupt {
        if let Some(t) = c.crash_at {
            w.push(t, Event::Crash { replica: resolve(&c.replica) });
        }
    }
    for s in &adv.schedule {
        w.push(s.at, Event::Schedule { replica: resolve(&s.replica), calls: s.calls.clone() });
    }
    w.run_loop()
}

impl World<'_> {
    fn push(&mut self, tick: u64, ev: Event) {
        self.seq += 1;
        self.queue.insert((tick, self.seq), ev);
    }

    fn record(
        &mut self,
        tick: u64,
        kind: &str,
        src: String,
        dst: String,
        counter: Option<CounterValue>,
        digest: Option<Digest>,
        note: String,
    ) {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord {
            tick,
            seq,
            kind: kind.to_string(),
            src,
            dst,
            counter: counter.map(|c| c.to_string()),
            digest: digest.map(|d| d.to_hex()),
            note,
        });
    }

    fn header(&mut self) {
        let h = TraceHeader {
            name: self.cfg.name.clone(),
            n: self.cfg.n,
            f: self.cfg.f,
            delta: self.cfg.delta,
            gst: self.cfg.gst.tick(),
            max_ticks: self.cfg.max_ticks(),
            seed: self.cfg.seed,
            mode: self.cfg.mode,
            corrupt: self.corrupt.iter().copied().collect(),
            clients: self.cfg.clients.count,
            requests: self.cfg.clients.requests_per_client,
        };
        let note = serde_json::to_string(&h).expect("header serializes");
        self.record(0, "config", "sim".into(), String::new(), None, None, note);
        let l = self.leader0;
        self.record(0, "leader", "sim".into(), format!("r{l}"), None, None, format!("view=0 leader={l}"));
    }

    fn all_done(&self) -> bool {
        self.remaining.iter().all(|r| *r == 0) && self.clients.iter().all(|c| c.outstanding() == 0)
    }

    fn run_loop(mut self) -> RunOutcome {
        let max = self.cfg.max_ticks();
        let drain = 4 * self.cfg.delta;
        let mut completed_at: Option<u64> = None;
        let mut timed_out = false;
        while let Some((&(tick, seq), _)) = self.queue.iter().next() {
            if completed_at.is_some_and(|c| tick > c + drain) {
                break;
            }
            if tick > max && completed_at.is_none() {
                timed_out = true;
                break;
            }
            let ev = self.queue.remove(&(tick, seq)).expect("peeked");
            self.now = tick;
            self.handle(ev);
            if completed_at.is_none() && self.all_done() {
                completed_at = Some(self.now);
            }
        }
        let completed = completed_at.is_some();
        let end_tick = if timed_out { max } else { self.now };
        if timed_out {
            self.record(end_tick, "liveness_timeout", "sim".into(), String::new(), None, None, String::new());
        }
        let note = format!("completed={completed} liveness_timeout={timed_out}");
        self.record(end_tick, "end", "sim".into(), String::new(), None, None, note);
        let replicas = self
            .replicas
            .iter()
            .map(|r| ReplicaSummary {
                id: r.id(),
                honest: !self.corrupt.contains(&r.id()),
                view: r.view(),
                executed: r.exec_log().len(),
                kv: r.kv().digest(),
            })
            .collect();
        RunOutcome {
            trace: Trace { records: self.records },
            completed,
            liveness_timeout: timed_out,
            end_tick,
            replicas,
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Deliver { from, to, msg, sent, id, tag } => self.deliver(from, to, msg, sent, id, tag),
            Event::ReplicaTimer { replica, timer } => {
                if !self.crashed.contains(&replica) {
                    let now = self.now;
                    let acts = self.replicas[replica as usize].on_timer(now, timer);
                    self.replica_actions(replica, acts);
                }
            }
            Event::ClientTimer { client, timer } => {
                let acts = self.clients[client as usize].on_timer(timer);
                self.client_actions(client, acts, None);
            }
            Event::ClientSubmit { client } => self.submit(client),
            Event::Crash { replica } => {
                self.crashed.insert(replica);
                self.record(self.now, "crash", format!("r{replica}"), String::new(), None, None, String::new());
            }
            Event::Schedule { replica, calls } => self.schedule(replica, calls),
        }
    }

    fn submit(&mut self, client: u32) {
        let c = client as usize;
        if self.remaining[c] == 0 {
            return;
        }
        self.remaining[c] -= 1;
        let op = self.make_op();
        let (_, acts) = self.clients[c].submit(op);
        self.client_actions(client, acts, None);
    }

    fn make_op(&mut self) -> Operation {
        let bytes = self.cfg.clients.payload_bytes;
        let put = |rng: &mut Prg| Operation::Put {
            key: format!("k{}", rng.below(64)),
            value: hex::encode(rng.bytes(bytes)),
        };
        match self.cfg.clients.ops {
            OpMix::Noop => Operation::Noop { payload: self.work_rng.bytes(bytes) },
            OpMix::Put => put(&mut self.work_rng),
            OpMix::Mixed => match self.work_rng.below(3) {
                0 => put(&mut self.work_rng),
                1 => Operation::Get { key: format!("k{}", self.work_rng.below(64)) },
                _ => Operation::Noop { payload: self.work_rng.bytes(bytes) },
            },
        }
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, msg: Message, sent: u64, id: u64, tag: &str) {
        let kind = msg.kind();
        let counter = msg.counter();
        let note_tail = if tag.is_empty() { String::new() } else { format!(" tag={tag}") };
        if let NodeId::Replica(r) = to {
            if self.crashed.contains(&r) {
                let note = format!("{} m={id} reason=crashed", kind.name());
                self.record(self.now, "drop", from.to_string(), to.to_string(), counter, None, note);
                return;
            }
        }
        let note = format!("{} m={id} sent={sent}{note_tail}", kind.name());
        self.record(self.now, "deliver", from.to_string(), to.to_string(), counter, Some(msg.digest()), note);
        match to {
            NodeId::Replica(r) => {
                let now = self.now;
                let acts = self.replicas[r as usize].on_message(now, from, msg);
                self.replica_actions(r, acts);
            }
            NodeId::Client(c) => {
                if let Message::Reply(reply) = msg {
                    if let Some(s) = self.clients.get_mut(c as usize) {
                        let acts = s.on_reply(&reply);
                        self.client_actions(c, acts, Some(&reply));
                    }
                }
            }
        }
    }

    fn replica_actions(&mut self, r: ReplicaId, acts: Vec<Action>) {
        for a in acts {
            match a {
                Action::Send { to, msg } => self.transmit(NodeId::Replica(r), to, msg),
                Action::SetTimer { timer, after } => {
                    self.push(self.now + after, Event::ReplicaTimer { replica: r, timer })
                }
                Action::Note(ev) => self.replica_event(r, ev),
                Action::Enclave(ev) => self.audit(r, ev),
            }
        }
    }

    fn audit(&mut self, r: ReplicaId, ev: AuditEvent) {
        let (now, src) = (self.now, format!("r{r}"));
        match ev {
            AuditEvent::Signed { counter, payload } => {
                self.record(now, "sign", src, String::new(), Some(counter), Some(payload), String::new())
            }
            AuditEvent::ShareReleased { counter, secret_digest } => {
                self.record(now, "share", src, String::new(), Some(counter), Some(secret_digest), String::new())
            }
            AuditEvent::LogProof { proof_counter, highest } => {
                let note = format!("highest={}", highest.map_or("none".into(), |h| h.to_string()));
                self.record(now, "proof", src, String::new(), Some(proof_counter), None, note)
            }
            AuditEvent::Anchored { target, highest } => {
                let note = format!("target={target} highest={}", highest.map_or("none".into(), |h| h.to_string()));
                self.record(now, "anchor", src, String::new(), highest, None, note)
            }
            AuditEvent::EnteredView { view, leader } => {
                let note = format!("view={view} leader={leader}");
                self.record(now, "enter_view", src, String::new(), None, None, note)
            }
        }
    }

    fn replica_event(&mut self, r: ReplicaId, ev: ReplicaEvent) {
        let (now, src) = (self.now, format!("r{r}"));
        match ev {
            ReplicaEvent::Executed { position, counter, index, client, request_id, request, result } => {
                let note = format!("pos={position} i={index} client={client} rid={request_id} result={}", result.to_hex());
                self.record(now, "execute", src, String::new(), Some(counter), Some(request), note)
            }
            ReplicaEvent::QcAccepted { counter, kind, secret } => {
                let note = format!("kind={kind:?}");
                self.record(now, "qc_accept", src, String::new(), Some(counter), Some(secret), note)
            }
            ReplicaEvent::LogAccepted { owner, view, entries } => {
                let list: Vec<String> =
                    entries.iter().map(|(c, d)| format!("{c}:{}", &d.to_hex()[..16])).collect();
                let note = format!("view={view} entries={}", list.join(","));
                self.record(now, "log_accept", src, format!("r{owner}"), None, None, note)
            }
            ReplicaEvent::LogRejected { owner, reason } => {
                self.record(now, "log_reject", src, format!("r{owner}"), None, None, format!("reason={reason}"))
            }
            ReplicaEvent::ViewChangeRequested { target, reason } => {
                let note = format!("target={target} reason={reason}");
                self.record(now, "vc_request", src, String::new(), None, None, note)
            }
            ReplicaEvent::Rejected { counter, reason } => {
                self.record(now, "reject", src, String::new(), counter, None, format!("reason={reason}"))
            }
            ReplicaEvent::Attempt { what, outcome } => {
                let note = format!("what={what} outcome={outcome}");
                self.record(now, "attempt", src, String::new(), None, None, note)
            }
        }
    }

    fn client_actions(&mut self, c: u32, acts: Vec<ClientAction>, reply: Option<&ClientReply>) {
        let src = format!("c{c}");
        for a in acts {
            match a {
                ClientAction::Send { to, msg } => self.transmit(NodeId::Client(c), NodeId::Replica(to), msg),
                ClientAction::SetTimer { timer, after } => {
                    self.push(self.now + after, Event::ClientTimer { client: c, timer })
                }
                ClientAction::Note(ev) => match ev {
                    ClientEvent::Submitted { request_id } => {
                        self.record(self.now, "client_submit", src.clone(), String::new(), None, None, format!("rid={request_id}"))
                    }
                    ClientEvent::ProofAccepted { request_id, kind, counter } => {
                        let r = reply.expect("proofs come with replies");
                        let note = format!("rid={request_id} kind={kind:?} order={counter}");
                        let (qc, d) = (r.proof.counter, r.commitment.secret_digest);
                        self.record(self.now, "client_proof", src.clone(), String::new(), Some(qc), Some(d), note)
                    }
                    ClientEvent::ProofRejected { request_id } => {
                        self.record(self.now, "client_reject", src.clone(), String::new(), None, None, format!("rid={request_id}"))
                    }
                    ClientEvent::Resent { request_id, attempt } => {
                        let note = format!("rid={request_id} attempt={attempt}");
                        self.record(self.now, "client_resend", src.clone(), String::new(), None, None, note)
                    }
                    ClientEvent::Completed { request_id } => {
                        self.record(self.now, "client_done", src.clone(), String::new(), None, None, format!("rid={request_id}"));
                        self.push(self.now + 1, Event::ClientSubmit { client: c });
                    }
                },
            }
        }
    }

    fn is_honest(&self, n: NodeId) -> bool {
        match n {
            NodeId::Replica(r) => !self.corrupt.contains(&r),
            NodeId::Client(_) => true,
        }
    }

    /// Leader of the highest view reached by a live honest replica.
    fn current_leader(&self) -> ReplicaId {
        self.replicas
            .iter()
            .filter(|r| !self.corrupt.contains(&r.id()) && !self.crashed.contains(&r.id()))
            .max_by_key(|r| (r.view(), std::cmp::Reverse(r.id())))
            .map_or(self.leader0, |r| r.leader())
    }

    fn matches(&self, p: &NodePattern, n: NodeId) -> bool {
        match (p, n) {
            (NodePattern::Replica(rr), NodeId::Replica(r)) => resolve_ref(rr, self.leader0) == r,
            (NodePattern::AnyReplica, NodeId::Replica(_)) => true,
            (NodePattern::AnyClient, NodeId::Client(_)) => true,
            (NodePattern::Corrupt, NodeId::Replica(r)) => self.corrupt.contains(&r),
            (NodePattern::CurrentLeader, NodeId::Replica(r)) => self.current_leader() == r,
            _ => false,
        }
    }

    fn sample(&mut self, law: DelayLaw) -> u64 {
        match law {
            DelayLaw::Fixed { ticks } => ticks.unwrap_or(self.cfg.delta),
            DelayLaw::Uniform { min, max } => min + self.net_rng.below(max - min + 1),
        }
    }

    fn chance(rng: &mut Prg, p: f64) -> bool {
        // 53 random bits give a uniform float in [0, 1)
        ((rng.next_u64() >> 11) as f64) / ((1u64 << 53) as f64) < p
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let sent = self.now + 1;
        let id = self.next_msg;
        self.next_msg += 1;
        let kind = msg.kind();
        let counter = msg.counter();
        self.record(sent, "send", from.to_string(), to.to_string(), counter, Some(msg.digest()), format!("{} m={id}", kind.name()));

        let delta = self.cfg.delta;
        let bounded = self.is_honest(from)
            && self.is_honest(to)
            && self.cfg.gst.tick().is_some_and(|g| sent >= g);
        let drop = |w: &mut World, reason: &str| {
            let note = format!("{} m={id} reason={reason}", kind.name());
            w.record(sent, "drop", from.to_string(), to.to_string(), counter, None, note);
        };

        let mut delay = if bounded {
            self.sample(self.cfg.network.post_gst)
        } else {
            let law = self.cfg.network.pre_gst.unwrap_or(DelayLaw::Uniform { min: 1, max: 3 * delta });
            let d = self.sample(law);
            let p = self.cfg.network.pre_gst_drop;
            if p > 0.0 && !self.cfg.gst.tick().is_some_and(|g| sent >= g) && Self::chance(&mut self.net_rng, p) {
                drop(self, "network");
                return;
            }
            d
        };

        if !bounded {
            let (fr, tr) = (node_replica(from), node_replica(to));
            let split = self.partitions.iter().any(|(groups, a, b)| {
                (*a..*b).contains(&sent)
                    && match (fr, tr) {
                        (Some(x), Some(y)) => {
                            let gx = groups.iter().position(|g| g.contains(&x));
                            let gy = groups.iter().position(|g| g.contains(&y));
                            gx.is_some() && gy.is_some() && gx != gy
                        }
                        _ => false,
                    }
            });
            if split {
                drop(self, "partition");
                return;
            }
            let dos = self.cfg.adversary.dos_leader.iter().any(|s| (s.from..s.until).contains(&sent));
            if dos {
                let l = self.current_leader();
                if fr == Some(l) || tr == Some(l) {
                    drop(self, "dos_leader");
                    return;
                }
            }
        }

        let mut extra: Vec<(u64, &'static str)> = Vec::new();
        let mut msg = msg;
        let rule = self.rules.iter().position(|r| {
            let m = &r.rule.when;
            (r.kinds.is_empty() || r.kinds.contains(&kind))
                && m.from.as_ref().is_none_or(|p| self.matches(p, from))
                && m.to.as_ref().is_none_or(|p| self.matches(p, to))
                && m.after.is_none_or(|a| sent >= a)
                && m.before.is_none_or(|b| sent < b)
        });
        if let Some(i) = rule {
            let fires = match self.rules[i].rule.when.probability {
                Some(p) => Self::chance(&mut self.adv_rng, p),
                None => true,
            };
            if fires {
                let action = self.rules[i].rule.action.clone();
                let clamped = |w: &mut World, what: &str| {
                    let note = format!("{} m={id} action={what} clamped=true", kind.name());
                    w.record(sent, "adversary", from.to_string(), to.to_string(), counter, None, note);
                };
                match action {
                    RuleAction::Drop if bounded => clamped(self, "drop"),
                    RuleAction::Drop => {
                        drop(self, "adversary");
                        return;
                    }
                    RuleAction::Delay { ticks } => delay += ticks,
                    RuleAction::Reorder { max } => delay += self.adv_rng.below(max + 1),
                    RuleAction::Duplicate { copies } => {
                        extra.extend((1..=copies as u64).map(|k| (k, "duplicate")));
                    }
                    RuleAction::Replay { after } => extra.push((after, "replay")),
                    RuleAction::Modify { .. } if bounded => clamped(self, "modify"),
                    RuleAction::Modify { bytes } => {
                        let mut b = msg.to_bytes();
                        for _ in 0..bytes {
                            let pos = self.adv_rng.below(b.len() as u64) as usize;
                            b[pos] ^= 1 + self.adv_rng.below(255) as u8;
                        }
                        match Message::from_bytes(&b) {
                            Some(m) => {
                                let note = format!("{} m={id} action=modify", kind.name());
                                self.record(sent, "adversary", from.to_string(), to.to_string(), counter, None, note);
                                msg = m;
                            }
                            None => {
                                drop(self, "modified_undecodable");
                                return;
                            }
                        }
                    }
                }
                if !matches!(action, RuleAction::Drop | RuleAction::Modify { .. }) {
                    let note = format!("{} m={id} action={}", kind.name(), action_name(&action));
                    self.record(sent, "adversary", from.to_string(), to.to_string(), counter, None, note);
                }
            }
        }
        if bounded {
            delay = delay.min(delta);
        }
        delay = delay.max(1);
        for (offset, tag) in extra {
            let copy = Event::Deliver { from, to, msg: msg.clone(), sent, id, tag };
            self.push(sent + delay + offset, copy);
        }
        self.push(sent + delay, Event::Deliver { from, to, msg, sent, id, tag: "" });
    }

    fn schedule(&mut self, r: ReplicaId, calls: Vec<EnclaveCall>) {
        if !self.corrupt.contains(&r) {
            return;
        }
        for call in calls {
            let outcome = {
                let e = self.replicas[r as usize].enclave_mut();
                match call {
                    EnclaveCall::CreateCounter => {
                        let sc = e.create_counter(hash(&self.adv_rng.bytes(8)));
                        format!("signed {}", sc.counter)
                    }
                    EnclaveCall::GenerateSecret => {
                        let at = e.current();
                        match e.generate_secret(at) {
                            Ok(_) => format!("secret at {at}"),
                            Err(err) => err.to_string(),
                        }
                    }
                    EnclaveCall::GetHighestMessage => match e.get_highest_message(None) {
                        Ok(p) => format!("proof at {}", p.proof_counter),
                        Err(err) => err.to_string(),
                    },
                    EnclaveCall::Terminate => {
                        self.crashed.insert(r);
                        "terminated".to_string()
                    }
                }
            };
            let note = format!("call={call:?} outcome={outcome}");
            self.record(self.now, "enclave_call", format!("r{r}"), String::new(), None, None, note);
            for ev in self.replicas[r as usize].drain_audit() {
                self.audit(r, ev);
            }
        }
    }
}

fn resolve_ref(r: &ReplicaRef, leader0: ReplicaId) -> ReplicaId {
    match r {
        ReplicaRef::Id(i) => *i,
        ReplicaRef::Named(s) if s == "follower0" => u32::from(leader0 == 0),
        ReplicaRef::Named(_) => leader0,
    }
}

fn resolve_groups(groups: &[Vec<ReplicaRef>], n: usize, leader0: ReplicaId) -> Vec<BTreeSet<ReplicaId>> {
    let is_rest = |r: &ReplicaRef| matches!(r, ReplicaRef::Named(s) if s == "rest");
    let listed: BTreeSet<ReplicaId> =
        groups.iter().flatten().filter(|r| !is_rest(r)).map(|r| resolve_ref(r, leader0)).collect();
    groups
        .iter()
        .map(|g| {
            let mut set: BTreeSet<ReplicaId> =
                g.iter().filter(|r| !is_rest(r)).map(|r| resolve_ref(r, leader0)).collect();
            if g.iter().any(is_rest) {
                set.extend((0..n as u32).filter(|i| !listed.contains(i)));
            }
            set
        })
        .collect()
}

fn node_replica(n: NodeId) -> Option<ReplicaId> {
    match n {
        NodeId::Replica(r) => Some(r),
        NodeId::Client(_) => None,
    }
}

fn action_name(a: &RuleAction) -> &'static str {
    match a {
        RuleAction::Drop => "drop",
        RuleAction::Delay { .. } => "delay",
        RuleAction::Reorder { .. } => "reorder",
        RuleAction::Duplicate { .. } => "duplicate",
        RuleAction::Replay { .. } => "replay",
        RuleAction::Modify { .. } => "modify",
    }
}

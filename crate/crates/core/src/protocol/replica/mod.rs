//! Replica host logic.
//!
//! A [`Replica`] is a single-threaded event handler: a message or timer goes
//! in, the state changes, and a list of [`Action`]s comes out. It owns its
//! enclave but can only reach it through the enclave's public methods.

mod normal;
mod transfer;
mod view_change;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Digest, Prg};
use crate::enclave::{
    AuditEvent, CounterValue, Directory, Enclave, HistoryAnchor, MessageLogProof, ReplicaId,
    SignedCommitment, SignedCounter, VoteShare,
};

use super::kv::{KvStore, OpResult};
use super::messages::{
    encode, ClientId, ClientReply, ClientRequest, Closing, Message, NodeId, Proposal, QcKind,
    QuorumCert, Subscription,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Basic,
    Pipelined,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicaConfig {
    pub mode: Mode,
    /// Network delay bound in ticks.
    pub delta: u64,
    /// Most requests per proposal.
    pub batch_size: usize,
    /// How far ahead of the expected counter proposals are buffered.
    pub window: u64,
}

impl ReplicaConfig {
    pub fn new(mode: Mode, delta: u64) -> Self {
        ReplicaConfig { mode, delta, batch_size: 1, window: 64 }
    }

    /// `16 delta`, doubled for every consecutive failed view change.
    pub fn view_change_timeout(&self, failures: u32) -> u64 {
        (16 * self.delta) << failures.min(16)
    }
}

/// Host-level misbehaviour for corrupt replicas. Honest replicas use the
/// default (all off).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Faults {
    /// As leader, ignore client requests.
    pub censor: bool,
    /// As leader, ship random secrets in place of quorum certificates.
    pub fake_qc: bool,
    /// As leader, report a wrong execution result digest.
    pub wrong_result: bool,
    /// As leader, try to give different followers different proposals.
    pub equivocate: bool,
    /// As follower, try to vote twice and send every vote twice.
    pub double_vote: bool,
    /// As follower, try to obtain a log proof that hides recent votes.
    pub log_rollback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimerKind {
    Progress,
    ViewChange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Timer {
    pub kind: TimerKind,
    pub generation: u64,
}

/// Observable host-side events, recorded in the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplicaEvent {
    Executed {
        /// Position in this replica's execution log.
        position: u64,
        counter: CounterValue,
        /// Position of the request inside its proposal.
        index: u32,
        client: ClientId,
        request_id: u64,
        request: Digest,
        result: Digest,
    },
    QcAccepted {
        counter: CounterValue,
        kind: QcKind,
        secret: Digest,
    },
    LogAccepted {
        owner: ReplicaId,
        view: u64,
        entries: Vec<(u64, Digest)>,
    },
    LogRejected {
        owner: ReplicaId,
        reason: String,
    },
    ViewChangeRequested {
        target: u64,
        reason: &'static str,
    },
    Rejected {
        counter: Option<CounterValue>,
        reason: String,
    },
    /// A corrupt host trying something the enclave should stop.
    Attempt {
        what: &'static str,
        outcome: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send { to: NodeId, msg: Message },
    SetTimer { timer: Timer, after: u64 },
    Note(ReplicaEvent),
    /// An enclave output, placed in call order among the other actions.
    Enclave(AuditEvent),
}

/// One applied request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecRecord {
    pub counter: CounterValue,
    pub index: u32,
    pub client: ClientId,
    pub request_id: u64,
    pub request: Digest,
    pub result: OpResult,
}

type Proof = (QuorumCert, SignedCommitment);

#[derive(Clone, Debug)]
struct ExecEntry {
    counter: CounterValue,
    result: OpResult,
    subscription: Subscription,
    commit: Option<Proof>,
    execute: Option<Proof>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ProofKind {
    Commit,
    Execute,
}

#[derive(Clone, Debug)]
struct Round {
    reference: Digest,
    votes: BTreeMap<ReplicaId, VoteShare>,
    done: bool,
}

#[derive(Clone, Copy, Debug)]
struct VcState {
    target: u64,
}

#[derive(Clone, Debug)]
struct NvLeader {
    target: u64,
    anchor: HistoryAnchor,
    proposal: Option<Digest>,
}

const FUTURE_LIMIT: usize = 1024;
const RECONSTRUCT_TRIES: usize = 64;

pub struct Replica {
    id: ReplicaId,
    dir: Arc<Directory>,
    enclave: Enclave,
    cfg: ReplicaConfig,
    faults: Faults,
    rng: Prg,
    now: u64,
    out: Vec<Action>,

    kv: KvStore,
    exec_log: Vec<ExecRecord>,
    executed: BTreeMap<(ClientId, u64), ExecEntry>,
    results: BTreeMap<CounterValue, Digest>,

    /// Every well-formed proposal seen, by reference digest.
    store: BTreeMap<Digest, Proposal>,
    /// This view's log: counter to proposal this replica voted for or adopted.
    voted: BTreeMap<u64, Digest>,
    /// Proposals of this view that arrived ahead of the expected counter.
    buffer: BTreeMap<u64, Digest>,
    future: Vec<(NodeId, Message)>,
    closings: BTreeMap<u64, Closing>,

    // leader side
    queue: VecDeque<ClientRequest>,
    queued: BTreeSet<(ClientId, u64)>,
    rounds: BTreeMap<u64, Round>,
    tail: Option<Digest>,
    outstanding_prepare: Option<u64>,
    announce: Option<Box<Closing>>,

    // view change
    vc: Option<VcState>,
    vc_failures: u32,
    proof_cache: Option<(MessageLogProof, Vec<SignedCounter>)>,
    rvcs: BTreeMap<u64, BTreeMap<ReplicaId, (MessageLogProof, Vec<SignedCounter>)>>,
    /// Log of the proof this replica anchored on as next leader.
    anchored_log: Option<Vec<SignedCounter>>,
    nv_leader: Option<NvLeader>,
    pending_vc: Option<(HistoryAnchor, Digest)>,
    pending_nv: Option<Closing>,

    // timers
    /// Client-resent requests not yet seen in a proposal, with the tick each
    /// was first resent.
    awaiting: BTreeMap<(ClientId, u64), (ClientRequest, u64)>,
    timer_gen: u64,
    progress_timer: Option<u64>,
    vc_timer: Option<u64>,
    last_fetch: Option<((ReplicaId, u64, u64), u64)>,
}

impl Replica {
    pub fn new(enclave: Enclave, cfg: ReplicaConfig, faults: Faults, seed: &[u8]) -> Self {
        let id = enclave.id();
        let dir = enclave.directory().clone();
        let mut rng_seed = seed.to_vec();
        rng_seed.extend_from_slice(&id.to_be_bytes());
        Replica {
            id,
            dir,
            enclave,
            cfg,
            faults,
            rng: Prg::new(&rng_seed),
            now: 0,
            out: Vec::new(),
            kv: KvStore::new(),
            exec_log: Vec::new(),
            executed: BTreeMap::new(),
            results: BTreeMap::new(),
            store: BTreeMap::new(),
            voted: BTreeMap::new(),
            buffer: BTreeMap::new(),
            future: Vec::new(),
            closings: BTreeMap::new(),
            queue: VecDeque::new(),
            queued: BTreeSet::new(),
            rounds: BTreeMap::new(),
            tail: None,
            outstanding_prepare: None,
            announce: None,
            vc: None,
            vc_failures: 0,
            proof_cache: None,
            rvcs: BTreeMap::new(),
            anchored_log: None,
            nv_leader: None,
            pending_vc: None,
            pending_nv: None,
            awaiting: BTreeMap::new(),
            timer_gen: 0,
            progress_timer: None,
            vc_timer: None,
            last_fetch: None,
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn view(&self) -> u64 {
        self.enclave.view()
    }

    pub fn leader(&self) -> ReplicaId {
        self.enclave.leader()
    }

    pub fn is_leader(&self) -> bool {
        self.leader() == self.id
    }

    pub fn kv(&self) -> &KvStore {
        &self.kv
    }

    pub fn exec_log(&self) -> &[ExecRecord] {
        &self.exec_log
    }

    pub fn faults(&self) -> &Faults {
        &self.faults
    }

    pub fn in_view_change(&self) -> bool {
        self.vc.is_some()
    }

    pub fn enclave(&self) -> &Enclave {
        &self.enclave
    }

    /// Direct enclave access, which the simulator grants only for corrupt
    /// replicas.
    pub fn enclave_mut(&mut self) -> &mut Enclave {
        &mut self.enclave
    }

    pub fn drain_audit(&mut self) -> Vec<AuditEvent> {
        self.enclave.drain_audit()
    }

    pub fn on_message(&mut self, now: u64, from: NodeId, msg: Message) -> Vec<Action> {
        self.now = now;
        self.dispatch(from, msg);
        self.flush_audit();
        std::mem::take(&mut self.out)
    }

    pub fn on_timer(&mut self, now: u64, timer: Timer) -> Vec<Action> {
        self.now = now;
        match timer.kind {
            TimerKind::Progress if self.progress_timer == Some(timer.generation) => {
                self.progress_timer = None;
                self.on_progress_timeout();
            }
            TimerKind::ViewChange if self.vc_timer == Some(timer.generation) => {
                self.vc_timer = None;
                self.on_view_change_timeout();
            }
            _ => {}
        }
        self.flush_audit();
        std::mem::take(&mut self.out)
    }

    fn dispatch(&mut self, from: NodeId, msg: Message) {
        let replica = match from {
            NodeId::Replica(r) => r,
            NodeId::Client(_) => {
                if let Message::Request { req, resent } = msg {
                    self.on_request(from, req, resent);
                }
                return;
            }
        };
        match msg {
            Message::Request { req, resent } => self.on_request(from, req, resent),
            Message::Prepare { proposal, new_view } => {
                if let Some(closing) = new_view {
                    self.on_new_view(replica, *closing);
                }
                self.on_proposal(replica, proposal);
            }
            Message::Commit(proposal) => self.on_proposal(replica, proposal),
            Message::VoteForCommit(v) | Message::VoteForDecide(v) | Message::VoteForNewView(v) => {
                if v.voter == replica {
                    self.on_vote(v);
                }
            }
            Message::Decide(qc) => self.on_decide(replica, qc),
            Message::RequestViewChange { target, proof, log } => {
                self.on_request_view_change(replica, target, proof, log)
            }
            Message::ViewChange { anchor, proposal } => {
                self.on_view_change(replica, anchor, proposal)
            }
            Message::NewView(closing) => self.on_new_view(replica, *closing),
            Message::FetchProposals { view, from } => self.on_fetch(replica, view, from),
            Message::Proposals(segments) => self.on_proposals(replica, segments),
            Message::Reply(_) => {}
        }
    }

    fn flush_audit(&mut self) {
        let events = self.enclave.drain_audit();
        self.out.extend(events.into_iter().map(Action::Enclave));
    }

    fn emit(&mut self, a: Action) {
        self.flush_audit();
        self.out.push(a);
    }

    fn send(&mut self, to: NodeId, msg: Message) {
        self.emit(Action::Send { to, msg });
    }

    fn send_replica(&mut self, to: ReplicaId, msg: Message) {
        self.send(NodeId::Replica(to), msg);
    }

    fn broadcast(&mut self, msg: Message) {
        for r in 0..self.dir.n as ReplicaId {
            if r != self.id {
                self.send_replica(r, msg.clone());
            }
        }
    }

    fn note(&mut self, ev: ReplicaEvent) {
        self.emit(Action::Note(ev));
    }

    fn reject(&mut self, counter: Option<CounterValue>, reason: impl Into<String>) {
        self.note(ReplicaEvent::Rejected { counter, reason: reason.into() });
    }

    fn set_timer(&mut self, kind: TimerKind, after: u64) -> u64 {
        self.timer_gen += 1;
        let timer = Timer { kind, generation: self.timer_gen };
        self.emit(Action::SetTimer { timer, after });
        self.timer_gen
    }

    fn arm_progress_timer(&mut self) {
        if self.progress_timer.is_none() && !self.awaiting.is_empty() {
            let after = self.cfg.view_change_timeout(self.vc_failures);
            self.progress_timer = Some(self.set_timer(TimerKind::Progress, after));
        }
    }

    fn arm_vc_timer(&mut self) {
        let after = self.cfg.view_change_timeout(self.vc_failures);
        self.vc_timer = Some(self.set_timer(TimerKind::ViewChange, after));
    }

    fn on_progress_timeout(&mut self) {
        let executed = &self.executed;
        self.awaiting.retain(|k, _| !executed.contains_key(k));
        let Some(oldest) = self.awaiting.values().map(|(_, since)| *since).min() else { return };
        let limit = self.cfg.view_change_timeout(self.vc_failures);
        if self.now >= oldest + limit {
            self.request_view_change("client request not served in time");
        } else {
            let after = oldest + limit - self.now;
            self.progress_timer = Some(self.set_timer(TimerKind::Progress, after));
        }
    }

    /// A valid proposal carrying an awaited request ends the wait for it.
    fn saw_proposal(&mut self, p: &Proposal) {
        for req in &p.body.requests {
            self.awaiting.remove(&req.key());
        }
    }

    /// Next counter this replica's enclave will vote for in the current view.
    fn expected_counter(&self) -> u64 {
        self.voted.keys().next_back().map_or(0, |c| c + 1)
    }

    /// The proposals from counter 0 up to `tip`, following parent links.
    /// `Err` carries the first counter that could not be resolved.
    fn chain(&self, tip: Option<Digest>) -> Result<Vec<Digest>, u64> {
        let mut out = Vec::new();
        let mut cur = tip;
        let mut expect: Option<CounterValue> = None;
        while let Some(d) = cur {
            let Some(p) = self.store.get(&d) else {
                return Err(expect.map_or(0, |c| c.counter));
            };
            let c = p.counter();
            if expect.is_some_and(|e| e != c) {
                return Err(c.counter);
            }
            out.push(d);
            if c.counter == 0 {
                if p.body.parent.is_some() {
                    return Err(0);
                }
                break;
            }
            expect = Some(CounterValue::new(c.counter - 1, c.view));
            cur = p.body.parent;
            if cur.is_none() {
                return Err(c.counter - 1);
            }
        }
        out.reverse();
        Ok(out)
    }

    /// Makes `chain` this view's log.
    fn adopt_chain(&mut self, chain: &[Digest]) {
        self.voted.clear();
        for d in chain {
            let c = self.store[d].counter().counter;
            self.voted.insert(c, *d);
        }
        self.buffer.clear();
    }

    fn execute_chain(&mut self, chain: &[Digest]) {
        for d in chain {
            self.execute(d);
        }
    }

    /// Applies the requests of a proposal once and returns the digest of
    /// their results. A request already applied at an earlier counter is not
    /// applied again; its earlier result is reported instead.
    fn execute(&mut self, d: &Digest) -> Digest {
        let p = self.store[d].clone();
        let counter = p.counter();
        if let Some(r) = self.results.get(&counter) {
            return *r;
        }
        let mut results = Vec::with_capacity(p.body.requests.len());
        for (index, req) in p.body.requests.iter().enumerate() {
            let key = req.key();
            if let Some(e) = self.executed.get(&key) {
                results.push(e.result.clone());
                continue;
            }
            let result = self.kv.apply(&req.op);
            let request = req.digest();
            self.note(ReplicaEvent::Executed {
                position: self.exec_log.len() as u64,
                counter,
                index: index as u32,
                client: req.client,
                request_id: req.request_id,
                request,
                result: result.digest(),
            });
            self.exec_log.push(ExecRecord {
                counter,
                index: index as u32,
                client: req.client,
                request_id: req.request_id,
                request,
                result: result.clone(),
            });
            self.executed.insert(
                key,
                ExecEntry {
                    counter,
                    result: result.clone(),
                    subscription: req.subscription,
                    commit: None,
                    execute: None,
                },
            );
            self.awaiting.remove(&key);
            results.push(result);
        }
        let digest = hash(&encode(&results));
        self.results.insert(counter, digest);
        digest
    }

    /// Records `qc` (which opens proposal `d`) as the commit proof of `d`'s
    /// requests and, when `d` justifies its parent, as the execution proof of
    /// the parent's requests. Returns the proofs that are new.
    fn learn_qc(&mut self, d: &Digest, qc: &QuorumCert) -> Vec<((ClientId, u64), ProofKind)> {
        let p = &self.store[d];
        let commitment = p.commitment().clone();
        let own: Vec<_> = p.body.requests.iter().map(|r| r.key()).collect();
        let parent: Vec<_> = match (&p.body.justify, p.body.parent) {
            (Some(_), Some(pd)) => self
                .store
                .get(&pd)
                .map(|pp| pp.body.requests.iter().map(|r| r.key()).collect())
                .unwrap_or_default(),
            _ => Vec::new(),
        };
        let mut fresh = Vec::new();
        for key in own {
            if let Some(e) = self.executed.get_mut(&key) {
                if e.commit.is_none() {
                    e.commit = Some((QuorumCert { kind: QcKind::Commit, ..qc.clone() }, commitment.clone()));
                    fresh.push((key, ProofKind::Commit));
                }
            }
        }
        for key in parent {
            if let Some(e) = self.executed.get_mut(&key) {
                if e.execute.is_none() {
                    e.execute = Some((QuorumCert { kind: QcKind::Execute, ..qc.clone() }, commitment.clone()));
                    fresh.push((key, ProofKind::Execute));
                }
            }
        }
        fresh
    }

    fn reply(&mut self, key: (ClientId, u64), kind: ProofKind) {
        let Some(e) = self.executed.get(&key) else { return };
        let wanted = match kind {
            ProofKind::Commit => e.subscription.wants_commitment(),
            ProofKind::Execute => e.subscription.wants_execution(),
        };
        let proof = match kind {
            ProofKind::Commit => e.commit.clone(),
            ProofKind::Execute => e.execute.clone(),
        };
        let Some((qc, commitment)) = proof.filter(|_| wanted) else { return };
        let reply = ClientReply {
            client: key.0,
            request_id: key.1,
            result: e.result.clone(),
            proof: qc,
            commitment,
            counter: e.counter,
            view: self.view(),
            leader: self.leader(),
        };
        self.send(NodeId::Client(key.0), Message::Reply(reply));
    }

    fn stash_future(&mut self, from: ReplicaId, msg: Message) {
        if self.future.len() < FUTURE_LIMIT {
            self.future.push((NodeId::Replica(from), msg));
        }
    }
}

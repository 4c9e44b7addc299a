//! Client requests, proposals, votes and quorum certificates within a view.

use crate::crypto::{reconstruct, Digest, Secret};
use crate::enclave::{CounterValue, ReplicaId, VoteShare};
use crate::protocol::kv::Operation;
use crate::protocol::messages::{
    ClientRequest, Justify, Message, NodeId, Proposal, ProposalBody, ProposalKind, QcKind,
    QuorumCert,
};

use super::{Mode, ProofKind, Replica, ReplicaEvent, Round, RECONSTRUCT_TRIES};

impl Replica {
    pub(super) fn on_request(&mut self, from: NodeId, req: ClientRequest, resent: bool) {
        let key = req.key();
        if self.executed.contains_key(&key) {
            // answer duplicates from the execution log
            self.reply(key, ProofKind::Commit);
            self.reply(key, ProofKind::Execute);
            return;
        }
        let from_client = matches!(from, NodeId::Client(_));
        if resent && from_client {
            let now = self.now;
            self.awaiting.entry(key).or_insert_with(|| (req.clone(), now));
            self.arm_progress_timer();
        }
        if self.is_leader() {
            if self.faults.censor {
                return;
            }
            self.enqueue(req);
            self.try_propose();
        } else if from_client && !self.faults.censor {
            let leader = self.leader();
            self.send_replica(leader, Message::Request { req, resent: false });
        }
    }

    pub(super) fn enqueue(&mut self, req: ClientRequest) {
        let key = req.key();
        if !self.executed.contains_key(&key) && self.queued.insert(key) {
            self.queue.push_back(req);
        }
    }

    fn take_batch(&mut self) -> Vec<ClientRequest> {
        let mut batch = Vec::new();
        while batch.len() < self.cfg.batch_size {
            let Some(req) = self.queue.pop_front() else { break };
            if !self.executed.contains_key(&req.key()) {
                batch.push(req);
            }
        }
        batch
    }

    fn can_propose(&self) -> bool {
        self.is_leader()
            && self.vc.is_none()
            && self.nv_leader.is_none()
            && self.pending_nv.is_none()
            && !self.enclave.is_locked()
    }

    pub(super) fn try_propose(&mut self) {
        if !self.can_propose() {
            return;
        }
        match self.cfg.mode {
            Mode::Basic => {
                if self.outstanding_prepare.is_none() {
                    let batch = self.take_batch();
                    if !batch.is_empty() {
                        self.outstanding_prepare = self.propose(batch, None);
                    }
                }
            }
            Mode::Pipelined => {
                if self.rounds.values().all(|r| r.done) {
                    let batch = self.take_batch();
                    if !batch.is_empty() {
                        self.propose(batch, None);
                    }
                }
            }
        }
    }

    /// Creates, broadcasts and self-votes a proposal at the enclave's current
    /// counter. Returns the counter used.
    fn propose(&mut self, requests: Vec<ClientRequest>, justify: Option<Justify>) -> Option<u64> {
        if !self.can_propose() {
            return None;
        }
        let justify = justify.map(|mut j| {
            if self.faults.fake_qc {
                j.qc.secret = Secret::random(&mut self.rng);
            }
            if self.faults.wrong_result {
                j.result = crate::crypto::hash(&self.rng.bytes(32));
            }
            j
        });
        let body = ProposalBody { kind: ProposalKind::Normal, requests, justify, parent: self.tail };
        let p = self.sign_proposal(body)?;
        let c = p.counter().counter;
        let d = p.reference();
        self.tail = Some(d);
        self.voted.insert(c, d);
        self.rounds.insert(c, Round { reference: d, votes: Default::default(), done: false });

        let is_commit = p.body.requests.is_empty() && p.body.justify.is_some();
        let msg = |p: Proposal, nv| {
            if is_commit {
                Message::Commit(p)
            } else {
                Message::Prepare { proposal: p, new_view: nv }
            }
        };
        if self.faults.equivocate && !p.body.requests.is_empty() {
            self.equivocate(&p, msg);
        } else {
            let nv = self.announce.take();
            self.broadcast(msg(p.clone(), nv));
        }
        self.self_vote(&p);
        Some(c)
    }

    /// generate_secret + create_counter around `body`; stores the result.
    pub(super) fn sign_proposal(&mut self, body: ProposalBody) -> Option<Proposal> {
        let at = self.enclave.current();
        let envelope = match self.enclave.generate_secret(at) {
            Ok(e) => e,
            Err(e) => {
                self.reject(Some(at), e.to_string());
                return None;
            }
        };
        let signed = self.enclave.create_counter(body.digest());
        let p = Proposal { body, signed, envelope };
        self.store.insert(p.reference(), p.clone());
        Some(p)
    }

    pub(super) fn self_vote(&mut self, p: &Proposal) {
        let Some(share) = p.envelope.share_for(self.id).cloned() else { return };
        match self.enclave.verify_counter(&p.signed, &share) {
            Ok(v) => {
                self.saw_proposal(p);
                self.on_vote(v)
            }
            Err(e) => self.reject(Some(p.counter()), e.to_string()),
        }
    }

    /// Corrupt leader: a second proposal for the same requests in another
    /// order, on the same parent, sent to half of the followers.
    fn equivocate(&mut self, p: &Proposal, msg: impl Fn(Proposal, Option<Box<super::Closing>>) -> Message) {
        let mut body = p.body.clone();
        body.requests.reverse();
        body.requests.push(ClientRequest {
            client: u32::MAX,
            request_id: self.rng.next_u64(),
            op: Operation::Noop { payload: vec![0xee] },
            subscription: Default::default(),
        });
        let Some(twin) = self.sign_proposal(body) else { return };
        self.note(ReplicaEvent::Attempt {
            what: "equivocate",
            outcome: format!("twin signed at {} instead of {}", twin.counter(), p.counter()),
        });
        let nv = self.announce.take();
        let others: Vec<ReplicaId> = (0..self.dir.n as ReplicaId).filter(|r| *r != self.id).collect();
        let half = others.len() / 2;
        for (i, r) in others.into_iter().enumerate() {
            let which = if i < half { p.clone() } else { twin.clone() };
            self.send_replica(r, msg(which, nv.clone()));
        }
    }

    pub(super) fn on_vote(&mut self, v: VoteShare) {
        let quorum = self.dir.quorum();
        let Some(round) = self.rounds.get_mut(&v.counter.counter) else { return };
        if round.done {
            return;
        }
        let Some(p) = self.store.get(&round.reference) else { return };
        if p.counter() != v.counter || p.commitment().secret_digest != v.secret_digest {
            return;
        }
        round.votes.insert(v.voter, v);
        if round.votes.len() < quorum {
            return;
        }
        let target = v.secret_digest;
        let shares: Vec<_> = round.votes.values().map(|v| v.share).collect();
        let Some(secret) = find_opening(&shares, self.dir.f, &target) else { return };
        round.done = true;
        self.on_qc_formed(v.counter, secret);
    }

    fn on_qc_formed(&mut self, counter: CounterValue, secret: Secret) {
        let d = self.rounds[&counter.counter].reference;
        let p = self.store[&d].clone();
        if matches!(p.body.kind, ProposalKind::NewViewRound { .. }) {
            self.on_new_view_qc(p, secret);
            return;
        }
        let has_requests = !p.body.requests.is_empty();
        let kind = if has_requests { QcKind::Commit } else { QcKind::Execute };
        let qc = QuorumCert { secret, counter, kind };
        self.note(ReplicaEvent::QcAccepted { counter, kind, secret: secret.digest() });
        let result = self.execute(&d);
        for (key, proof) in self.learn_qc(&d, &qc) {
            self.reply(key, proof);
        }
        let justify = Justify { qc: qc.clone(), result };
        match self.cfg.mode {
            Mode::Basic => {
                if has_requests {
                    if self.outstanding_prepare == Some(counter.counter) {
                        self.outstanding_prepare = None;
                    }
                    self.propose(Vec::new(), Some(justify));
                    self.try_propose();
                } else {
                    self.send_decide(qc);
                }
            }
            Mode::Pipelined => {
                let batch = if self.can_propose() { self.take_batch() } else { Vec::new() };
                if has_requests || !batch.is_empty() {
                    self.propose(batch, Some(justify));
                } else {
                    self.send_decide(qc);
                }
            }
        }
    }

    fn send_decide(&mut self, mut qc: QuorumCert) {
        if self.faults.fake_qc {
            qc.secret = Secret::random(&mut self.rng);
        }
        self.broadcast(Message::Decide(qc));
    }

    pub(super) fn on_proposal(&mut self, from: ReplicaId, p: Proposal) {
        if let Err(reason) = p.check(&self.dir) {
            self.reject(Some(p.counter()), reason);
            return;
        }
        let c = p.counter();
        if c.view > self.view() {
            self.store.entry(p.reference()).or_insert_with(|| p.clone());
            self.stash_future(from, Message::Commit(p));
            let view = self.view();
            self.fetch(from, view, 0);
            return;
        }
        if c.view < self.view() || matches!(p.body.kind, ProposalKind::NewViewRound { .. }) {
            return;
        }
        if p.signed.issuer != self.leader() || p.signed.issuer == self.id {
            return;
        }
        let d = p.reference();
        self.store.entry(d).or_insert(p);
        self.try_vote_on(d);
        self.drain_buffer();
    }

    pub(super) fn drain_buffer(&mut self) {
        loop {
            let expected = self.expected_counter();
            self.buffer = self.buffer.split_off(&expected);
            let Some(d) = self.buffer.remove(&expected) else { break };
            if !self.try_vote_on(d) {
                break;
            }
        }
    }

    /// Follower side of Prepare and Commit. Returns true if a vote was cast.
    pub(super) fn try_vote_on(&mut self, d: Digest) -> bool {
        let p = self.store[&d].clone();
        let c = p.counter();
        if self.voted.contains_key(&c.counter) {
            if self.faults.double_vote && self.voted[&c.counter] == d {
                self.try_double_vote(&p);
            }
            return false;
        }
        if self.vc.is_some() || self.enclave.is_locked() {
            return false;
        }
        let expected = self.expected_counter();
        if c.counter > expected {
            if c.counter - expected <= self.cfg.window {
                self.buffer.insert(c.counter, d);
                let (leader, view) = (self.leader(), self.view());
                self.fetch(leader, view, expected);
            }
            return false;
        }
        if c.counter < expected {
            return false;
        }
        let parent = if expected == 0 { None } else { self.voted.get(&(expected - 1)).copied() };
        if p.body.parent != parent {
            self.request_view_change("proposal does not extend the previous one");
            return false;
        }
        if let Some(j) = &p.body.justify {
            let prev = parent.expect("justify is only allowed above counter 0");
            if !j.qc.opens(self.store[&prev].commitment(), &self.dir) {
                self.request_view_change("quorum certificate does not open the commitment");
                return false;
            }
            self.note(ReplicaEvent::QcAccepted {
                counter: j.qc.counter,
                kind: j.qc.kind,
                secret: j.qc.secret.digest(),
            });
            let result = self.execute(&prev);
            self.learn_qc(&prev, &j.qc);
            if result != j.result {
                self.request_view_change("execution result mismatch");
                return false;
            }
        }
        let Some(share) = p.envelope.share_for(self.id).cloned() else { return false };
        match self.enclave.verify_counter(&p.signed, &share) {
            Ok(vote) => {
                self.voted.insert(c.counter, d);
                self.saw_proposal(&p);
                let is_commit = p.body.requests.is_empty() && p.body.justify.is_some();
                let msg = if is_commit { Message::VoteForDecide(vote) } else { Message::VoteForCommit(vote) };
                let leader = p.signed.issuer;
                if self.faults.double_vote {
                    self.send_replica(leader, msg.clone());
                    self.try_double_vote(&p);
                }
                self.send_replica(leader, msg);
                if self.faults.log_rollback {
                    self.try_log_rollback();
                }
                true
            }
            Err(e) => {
                self.reject(Some(c), e.to_string());
                if e.implicates_leader() {
                    self.request_view_change("enclave refused the proposal");
                }
                false
            }
        }
    }

    pub(super) fn on_decide(&mut self, from: ReplicaId, qc: QuorumCert) {
        if qc.counter.view != self.view() || from != self.leader() {
            return;
        }
        let Some(d) = self.voted.get(&qc.counter.counter).copied() else { return };
        if qc.opens(self.store[&d].commitment(), &self.dir) {
            self.note(ReplicaEvent::QcAccepted {
                counter: qc.counter,
                kind: qc.kind,
                secret: qc.secret.digest(),
            });
            self.learn_qc(&d, &qc);
        } else {
            self.request_view_change("decide secret does not open the commitment");
        }
    }

    fn try_double_vote(&mut self, p: &Proposal) {
        let Some(share) = p.envelope.share_for(self.id).cloned() else { return };
        let outcome = match self.enclave.verify_counter(&p.signed, &share) {
            Ok(_) => "second share released".to_string(),
            Err(e) => e.to_string(),
        };
        self.note(ReplicaEvent::Attempt { what: "double_vote", outcome });
    }

    /// Corrupt follower: ask for a proof that omits the latest vote, then
    /// keep a genuine proof but pair it with a truncated log.
    fn try_log_rollback(&mut self) {
        if self.proof_cache.is_some() || self.voted.len() < 3 {
            return;
        }
        let entries: Vec<_> = self.voted.values().map(|d| self.store[d].signed.clone()).collect();
        let older = &entries[entries.len() - 2];
        let outcome = match self.enclave.get_highest_message(Some(older)) {
            Ok(_) => "stale proof issued".to_string(),
            Err(e) => e.to_string(),
        };
        self.note(ReplicaEvent::Attempt { what: "log_rollback", outcome });
        if let Ok(proof) = self.enclave.get_highest_message(entries.last()) {
            let truncated = entries[..entries.len() - 2].to_vec();
            self.proof_cache = Some((proof, truncated));
        }
    }
}

/// Tries subsets of `f+1` shares until one reconstructs a secret hashing to
/// `target`, giving up after a bounded number of attempts.
fn find_opening(shares: &[crate::crypto::Share], f: usize, target: &Digest) -> Option<Secret> {
    let k = f + 1;
    if shares.len() < k {
        return None;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    for _ in 0..RECONSTRUCT_TRIES {
        let subset: Vec<_> = idx.iter().map(|&i| shares[i]).collect();
        if let Ok(fe) = reconstruct(&subset, f) {
            let s = Secret(fe);
            if &s.digest() == target {
                return Some(s);
            }
        }
        // next combination in lexicographic order
        let n = shares.len();
        let mut i = k;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    None
}

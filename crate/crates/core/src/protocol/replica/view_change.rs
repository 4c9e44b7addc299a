//! Leaving a view: log proofs, the next leader's merge, the view-change
//! voting round and entering the new view.

use crate::crypto::{Digest, Secret};
use crate::enclave::{
    HistoryAnchor, MessageLogProof, NewViewCert, ReplicaId, SignedCommitment, SignedCounter,
};
use crate::protocol::log::MessageLog;
use crate::protocol::messages::{
    anchor_digest, check_opening, Closing, Message, Proposal, ProposalBody, ProposalKind, QcKind,
    QuorumCert,
};

use super::{NvLeader, ProofKind, Replica, ReplicaEvent, Round, VcState};

impl Replica {
    pub(super) fn request_view_change(&mut self, reason: &'static str) {
        if self.vc.is_none() {
            self.start_view_change(self.view() + 1, reason);
        }
    }

    fn start_view_change(&mut self, target: u64, reason: &'static str) {
        self.note(ReplicaEvent::ViewChangeRequested { target, reason });
        let Some((proof, log)) = self.current_proof(target) else { return };
        self.vc = Some(VcState { target });
        self.arm_vc_timer();
        self.send_request_view_change(target, proof, log);
    }

    /// The log proof for the view change to `target`. The first one locks the
    /// enclave; while it stays locked, later targets get the same proof
    /// re-issued.
    fn current_proof(&mut self, target: u64) -> Option<(MessageLogProof, Vec<SignedCounter>)> {
        if let Some((p, log)) = self.proof_cache.clone().filter(|_| self.enclave.is_locked()) {
            if p.target == target {
                return Some((p, log));
            }
            return match self.enclave.retarget_proof(target) {
                Ok(proof) => {
                    self.proof_cache = Some((proof, log));
                    self.proof_cache.clone()
                }
                Err(e) => {
                    self.reject(self.enclave.last_validated(), e.to_string());
                    None
                }
            };
        }
        let last = self.enclave.last_validated();
        let tip = last.and_then(|c| self.voted.get(&c.counter).copied());
        let (highest, log) = match (tip, &self.anchored_log) {
            // merged onto an anchor whose chain has not arrived yet
            (None, Some(log)) if log.last().map(|h| h.counter) == last => {
                (log.last().cloned(), log.clone())
            }
            _ => {
                let log = self
                    .chain(tip)
                    .map(|ch| ch.iter().map(|d| self.store[d].signed.clone()).collect())
                    .unwrap_or_default();
                (tip.map(|d| self.store[&d].signed.clone()), log)
            }
        };
        match self.enclave.get_highest_message_for(highest.as_ref(), target) {
            Ok(proof) => {
                self.proof_cache = Some((proof, log));
                self.proof_cache.clone()
            }
            Err(e) => {
                self.reject(self.enclave.last_validated(), e.to_string());
                None
            }
        }
    }

    fn send_request_view_change(&mut self, target: u64, proof: MessageLogProof, log: Vec<SignedCounter>) {
        let to = self.enclave.leader_of(target);
        if to == self.id {
            self.on_request_view_change(self.id, target, proof, log);
        } else {
            self.send_replica(to, Message::RequestViewChange { target, proof, log });
        }
    }

    pub(super) fn on_view_change_timeout(&mut self) {
        let Some(state) = self.vc else { return };
        self.vc_failures += 1;
        let target = state.target + 1;
        if !self.enclave.is_locked() {
            // moved onto an anchor since the last proof; it is stale now
            self.proof_cache = None;
        }
        if self.nv_leader.as_ref().is_some_and(|s| s.target < target) {
            self.nv_leader = None;
        }
        self.pending_vc = None;
        self.note(ReplicaEvent::ViewChangeRequested { target, reason: "view change timed out" });
        self.vc = Some(VcState { target });
        self.arm_vc_timer();
        if let Some((proof, log)) = self.current_proof(target) {
            self.send_request_view_change(target, proof, log);
        }
    }

    pub(super) fn on_request_view_change(
        &mut self,
        from: ReplicaId,
        target: u64,
        proof: MessageLogProof,
        log: Vec<SignedCounter>,
    ) {
        let view = self.view();
        if target <= view {
            return;
        }
        if proof.proof_counter.view > view {
            self.fetch(from, view, 0);
            return;
        }
        if proof.proof_counter.view < view {
            // the sender missed how its view was closed
            self.on_fetch(from, proof.proof_counter.view, 0);
            return;
        }
        if self.enclave.leader_of(target) != self.id || proof.issuer != from || proof.target != target {
            return;
        }
        let mlog = MessageLog { owner: from, view, entries: log, proof: Some(proof.clone()) };
        if let Err(e) = mlog.validate(&self.dir) {
            self.note(ReplicaEvent::LogRejected { owner: from, reason: e.to_string() });
            return;
        }
        self.note(ReplicaEvent::LogAccepted { owner: from, view, entries: mlog.normal_entries() });
        self.rvcs.entry(target).or_default().insert(from, (proof, mlog.entries));
        let others = self.rvcs[&target].keys().filter(|r| **r != self.id).count();
        let behind = self.vc.is_none_or(|s| s.target < target);
        if behind && others > self.dir.f {
            self.join_view_change(target);
        }
        self.try_merge(target);
    }

    fn join_view_change(&mut self, target: u64) {
        match self.vc {
            None => self.start_view_change(target, "joined view change"),
            Some(s) if s.target < target => {
                self.vc = Some(VcState { target });
                if let Some((proof, log)) = self.current_proof(target) {
                    self.send_request_view_change(target, proof, log);
                }
            }
            Some(_) => {}
        }
    }

    fn try_merge(&mut self, target: u64) {
        if self.nv_leader.as_ref().is_some_and(|s| s.target >= target) {
            return;
        }
        let Some(set) = self.rvcs.get(&target) else { return };
        if !set.contains_key(&self.id) || set.len() < self.dir.quorum() {
            return;
        }
        let proofs: Vec<_> = set.values().map(|(p, _)| p.clone()).collect();
        match self.enclave.merge_highest_messages(target, &proofs) {
            Ok(anchor) => {
                self.proof_cache = None;
                self.anchored_log =
                    set.values().find(|(p, _)| p.highest == anchor.highest).map(|(_, log)| log.clone());
                self.nv_leader = Some(NvLeader { target, anchor, proposal: None });
                self.continue_nv_leader();
            }
            Err(e) => self.reject(None, e.to_string()),
        }
    }

    /// Next leader: once the anchored prefix is available, opens the
    /// view-change voting round. The prefix is executed only when the round's
    /// QC forms.
    pub(super) fn continue_nv_leader(&mut self) {
        let Some(state) = self.nv_leader.clone() else { return };
        if state.proposal.is_some() {
            return;
        }
        let tip = state.anchor.highest.as_ref().map(|h| h.reference_digest());
        let chain = match self.chain(tip) {
            Ok(ch) => ch,
            Err(missing) => {
                let holder = self.rvcs.get(&state.target).and_then(|set| {
                    set.iter().find(|(_, (p, _))| p.highest == state.anchor.highest).map(|(r, _)| *r)
                });
                if let Some(h) = holder {
                    let view = self.view();
                    self.fetch(h, view, missing);
                }
                return;
            }
        };
        self.adopt_chain(&chain);
        self.rounds.clear();
        let body = ProposalBody {
            kind: ProposalKind::NewViewRound {
                target: state.target,
                anchor: anchor_digest(&state.anchor),
            },
            requests: Vec::new(),
            justify: None,
            parent: tip,
        };
        let Some(p) = self.sign_proposal(body) else { return };
        let d = p.reference();
        let c = p.counter().counter;
        self.voted.insert(c, d);
        self.rounds.insert(c, Round { reference: d, votes: Default::default(), done: false });
        if let Some(s) = &mut self.nv_leader {
            s.proposal = Some(d);
        }
        self.broadcast(Message::ViewChange { anchor: state.anchor, proposal: p.clone() });
        self.self_vote(&p);
    }

    pub(super) fn on_view_change(&mut self, from: ReplicaId, anchor: HistoryAnchor, proposal: Proposal) {
        let view = self.view();
        if anchor.base_view > view {
            self.fetch(from, view, 0);
            return;
        }
        if anchor.base_view < view {
            self.on_fetch(from, anchor.base_view, 0);
            return;
        }
        if anchor.target_view <= view || anchor.issuer == self.id {
            return;
        }
        if anchor.issuer != self.enclave.leader_of(anchor.target_view) || !anchor.verify(&self.dir) {
            return;
        }
        if let Err(reason) = check_opening(&anchor, &proposal, &self.dir) {
            self.reject(Some(proposal.counter()), reason);
            return;
        }
        let d = proposal.reference();
        self.store.entry(d).or_insert(proposal);
        self.pending_vc = Some((anchor, d));
        self.continue_follow_vc();
    }

    /// Follower: with the anchored prefix available, moves the enclave onto
    /// the anchor and votes for the new view. Execution waits for the
    /// certificate.
    pub(super) fn continue_follow_vc(&mut self) {
        let Some((anchor, d)) = self.pending_vc.clone() else { return };
        let tip = anchor.highest.as_ref().map(|h| h.reference_digest());
        let chain = match self.chain(tip) {
            Ok(ch) => ch,
            Err(missing) => {
                let view = self.view();
                self.fetch(anchor.issuer, view, missing);
                return;
            }
        };
        self.pending_vc = None;
        if let Err(e) = self.enclave.sync_with_highest(&anchor) {
            self.reject(anchor.highest.as_ref().map(|h| h.counter), e.to_string());
            return;
        }
        self.proof_cache = None;
        self.anchored_log = None;
        self.adopt_chain(&chain);
        let target = anchor.target_view.max(self.vc.map_or(0, |s| s.target));
        if self.vc.is_none() {
            self.vc = Some(VcState { target });
            self.arm_vc_timer();
        }
        let p = self.store[&d].clone();
        let Some(share) = p.envelope.share_for(self.id).cloned() else { return };
        match self.enclave.verify_counter(&p.signed, &share) {
            Ok(vote) => {
                self.voted.insert(p.counter().counter, d);
                // give the round a full timeout to finish
                self.arm_vc_timer();
                self.send_replica(anchor.issuer, Message::VoteForNewView(vote));
            }
            Err(e) => self.reject(Some(p.counter()), e.to_string()),
        }
    }

    pub(super) fn on_new_view_qc(&mut self, p: Proposal, secret: Secret) {
        let Some(state) = self.nv_leader.take() else { return };
        if state.proposal != Some(p.reference()) {
            return;
        }
        let cert = NewViewCert { commitment: p.commitment().clone(), secret };
        let closing = Closing { anchor: state.anchor, proposal: p, cert };
        let view = self.view();
        let chain = self.closing_chain(&closing);
        self.execute_chain(&chain);
        if let Err(e) = self.enclave.update_view(&closing.cert) {
            self.reject(Some(closing.cert.commitment.counter), e.to_string());
            return;
        }
        self.broadcast(Message::NewView(Box::new(closing.clone())));
        self.announce = Some(Box::new(closing.clone()));
        self.enter_view(view, closing);
    }

    pub(super) fn on_new_view(&mut self, from: ReplicaId, closing: Closing) {
        let view = self.view();
        let target = closing.target_view();
        if target <= view {
            return;
        }
        if closing.anchor.base_view != view {
            if closing.anchor.base_view > view {
                self.fetch(from, view, 0);
            }
            return;
        }
        if let Err(reason) = closing.check(&self.dir) {
            self.reject(Some(closing.cert.commitment.counter), reason);
            return;
        }
        let d = closing.proposal.reference();
        self.store.entry(d).or_insert(closing.proposal.clone());
        self.pending_nv = Some(closing);
        self.continue_new_view();
    }

    pub(super) fn continue_new_view(&mut self) {
        let Some(closing) = self.pending_nv.clone() else { return };
        let tip = closing.anchor.highest.as_ref().map(|h| h.reference_digest());
        let chain = match self.chain(tip) {
            Ok(ch) => ch,
            Err(missing) => {
                let view = self.view();
                self.fetch(closing.anchor.issuer, view, missing);
                return;
            }
        };
        let target = closing.target_view();
        let superseding = self.enclave.transition_target().is_some_and(|t| t > target);
        let evidence = if superseding {
            match self.live_evidence(target) {
                Some(ev) => Some(ev),
                None => {
                    // wait for proposals of the certified view
                    let view = self.view();
                    self.fetch(closing.cert.commitment.issuer, view, 0);
                    return;
                }
            }
        } else {
            None
        };
        self.pending_nv = None;
        let view = self.view();
        self.execute_chain(&chain);
        let entered = match &evidence {
            None => self.enclave.update_view(&closing.cert),
            Some((cm, secret)) => self.enclave.update_view_superseding(&closing.cert, cm, secret),
        };
        if let Err(e) = entered {
            self.reject(Some(closing.cert.commitment.counter), e.to_string());
            return;
        }
        self.note(ReplicaEvent::QcAccepted {
            counter: closing.cert.commitment.counter,
            kind: QcKind::NewView,
            secret: closing.cert.digest(),
        });
        self.enter_view(view, closing);
    }

    /// An opened QC of a proposal that `view`'s leader issued inside `view`,
    /// taken from the proposals stored so far.
    fn live_evidence(&self, view: u64) -> Option<(SignedCommitment, Secret)> {
        let inside = |p: &Proposal| p.counter().view == view && p.signed.issuer_view == view;
        self.store.values().filter(|p| inside(p)).find_map(|p| {
            let j = p.body.justify.as_ref()?;
            let parent = self.store.get(&p.body.parent?)?;
            let cm = parent.commitment();
            (inside(parent) && j.qc.opens(cm, &self.dir)).then(|| (cm.clone(), j.qc.secret))
        })
    }

    /// Bookkeeping after the enclave accepted a New-View certificate.
    fn enter_view(&mut self, old_view: u64, closing: Closing) {
        let qc = QuorumCert {
            secret: closing.cert.secret,
            counter: closing.cert.commitment.counter,
            kind: QcKind::NewView,
        };
        let commitment = closing.cert.commitment.clone();
        let mut settled = Vec::new();
        for (key, e) in self.executed.iter_mut() {
            if e.commit.is_none() {
                e.commit = Some((qc.clone(), commitment.clone()));
                settled.push((*key, ProofKind::Commit));
            }
            if e.execute.is_none() {
                e.execute = Some((qc.clone(), commitment.clone()));
                settled.push((*key, ProofKind::Execute));
            }
        }
        self.closings.insert(old_view, closing);
        for (key, kind) in settled {
            self.reply(key, kind);
        }

        let view = self.view();
        self.vc = None;
        self.vc_failures = 0;
        self.vc_timer = None;
        self.progress_timer = None;
        self.nv_leader = None;
        self.pending_vc = None;
        self.pending_nv = None;
        self.proof_cache = None;
        self.anchored_log = None;
        self.rvcs.retain(|t, _| *t > view);
        self.voted.clear();
        self.buffer.clear();
        self.rounds.clear();
        self.tail = None;
        self.outstanding_prepare = None;
        self.queued.clear();

        let mut carry: Vec<_> = std::mem::take(&mut self.queue).into_iter().collect();
        carry.extend(self.awaiting.values().map(|(req, _)| req.clone()));
        // the new leader gets a full timeout for requests still waiting
        let now = self.now;
        for (_, since) in self.awaiting.values_mut() {
            *since = now;
        }
        if self.is_leader() {
            for req in carry {
                self.enqueue(req);
            }
        } else {
            self.announce = None;
            let leader = self.leader();
            let mut seen = std::collections::BTreeSet::new();
            for req in carry {
                if !self.executed.contains_key(&req.key()) && seen.insert(req.key()) {
                    self.send_replica(leader, Message::Request { req, resent: false });
                }
            }
        }
        self.arm_progress_timer();

        for (from, msg) in std::mem::take(&mut self.future) {
            self.dispatch(from, msg);
        }
        self.try_propose();
    }

    pub(super) fn closing_chain(&self, closing: &Closing) -> Vec<Digest> {
        let tip = closing.anchor.highest.as_ref().map(|h| h.reference_digest());
        self.chain(tip).unwrap_or_default()
    }
}

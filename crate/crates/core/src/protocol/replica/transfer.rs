//! State transfer: lagging replicas fetch the proposals and view closings
//! they missed.

use crate::enclave::ReplicaId;
use crate::protocol::messages::{Message, Segment};

use super::Replica;

impl Replica {
    /// Asks `to` for everything from `(from, view)` on, at most once per
    /// `2 delta` for the same request.
    pub(super) fn fetch(&mut self, to: ReplicaId, view: u64, from: u64) {
        if to == self.id {
            return;
        }
        let key = (to, view, from);
        if let Some((last, at)) = self.last_fetch {
            if last == key && self.now < at + 2 * self.cfg.delta {
                return;
            }
        }
        self.last_fetch = Some((key, self.now));
        self.send_replica(to, Message::FetchProposals { view, from });
    }

    pub(super) fn on_fetch(&mut self, from: ReplicaId, view: u64, from_counter: u64) {
        let mut segments = Vec::new();
        let closings: Vec<_> = self.closings.range(view..).map(|(w, c)| (*w, c.clone())).collect();
        for (w, closing) in closings {
            let skip = if w == view { from_counter } else { 0 };
            let proposals = self
                .closing_chain(&closing)
                .iter()
                .map(|d| self.store[d].clone())
                .filter(|p| p.counter().counter >= skip)
                .collect();
            segments.push(Segment { view: w, proposals, closing: Some(closing) });
        }
        let current = self.view();
        if view <= current {
            let skip = if view == current { from_counter } else { 0 };
            let proposals = self
                .voted
                .range(skip..)
                .map(|(_, d)| self.store[d].clone())
                .collect();
            segments.push(Segment { view: current, proposals, closing: None });
        }
        self.send_replica(from, Message::Proposals(segments));
    }

    pub(super) fn on_proposals(&mut self, from: ReplicaId, mut segments: Vec<Segment>) {
        segments.sort_by_key(|s| s.view);
        for seg in segments {
            for p in &seg.proposals {
                if p.check(&self.dir).is_ok() {
                    self.store.entry(p.reference()).or_insert_with(|| p.clone());
                }
            }
            if seg.view != self.view() {
                continue;
            }
            match seg.closing {
                Some(closing) => self.on_new_view(from, closing),
                None => {
                    let leader = self.leader();
                    for p in seg.proposals {
                        if p.signed.issuer == leader && p.signed.issuer_view == self.view() {
                            self.on_proposal(leader, p);
                        }
                    }
                }
            }
        }
        self.continue_nv_leader();
        self.continue_follow_vc();
        self.continue_new_view();
    }
}

//! Client sessions: submit to the leader, verify proofs, resend on timeout.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::enclave::{CounterValue, Directory, ReplicaId};
use crate::protocol::{ClientId, ClientReply, ClientRequest, Message, Operation, QcKind, Subscription};

/// One signature check and one hash: the commitment must be signed by its
/// issuer, and the proof's secret must hash to the committed digest.
pub fn verify_proof(dir: &Directory, reply: &ClientReply) -> bool {
    reply.proof.counter == reply.commitment.counter
        && reply.commitment.verify(dir)
        && reply.proof.secret.digest() == reply.commitment.secret_digest
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientTimer {
    pub request_id: u64,
    pub generation: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientEvent {
    Submitted { request_id: u64 },
    ProofAccepted { request_id: u64, kind: QcKind, counter: CounterValue },
    ProofRejected { request_id: u64 },
    Resent { request_id: u64, attempt: u32 },
    Completed { request_id: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientAction {
    Send { to: ReplicaId, msg: Message },
    SetTimer { timer: ClientTimer, after: u64 },
    Note(ClientEvent),
}

#[derive(Clone, Debug)]
struct Pending {
    req: ClientRequest,
    timeout: u64,
    generation: u64,
    attempts: u32,
    committed: bool,
    executed: bool,
}

#[derive(Debug)]
pub struct ClientSession {
    id: ClientId,
    dir: Arc<Directory>,
    subscription: Subscription,
    base_timeout: u64,
    known_leader: Option<ReplicaId>,
    next_request_id: u64,
    pending: BTreeMap<u64, Pending>,
    timer_gen: u64,
    completed: u64,
}

impl ClientSession {
    /// `delta` is the network bound; the first resend happens after `8 delta`.
    pub fn new(id: ClientId, dir: Arc<Directory>, subscription: Subscription, delta: u64) -> Self {
        ClientSession {
            id,
            dir,
            subscription,
            base_timeout: 8 * delta,
            known_leader: None,
            next_request_id: 0,
            pending: BTreeMap::new(),
            timer_gen: 0,
            completed: 0,
        }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn known_leader(&self) -> Option<ReplicaId> {
        self.known_leader
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    fn arm(&mut self, request_id: u64, after: u64, out: &mut Vec<ClientAction>) -> u64 {
        self.timer_gen += 1;
        out.push(ClientAction::SetTimer {
            timer: ClientTimer { request_id, generation: self.timer_gen },
            after,
        });
        self.timer_gen
    }

    /// Sends `op` to the leader this client believes in (replica 0 before it
    /// has heard of any).
    pub fn submit(&mut self, op: Operation) -> (u64, Vec<ClientAction>) {
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        let req = ClientRequest { client: self.id, request_id, op, subscription: self.subscription };
        let mut out = vec![
            ClientAction::Note(ClientEvent::Submitted { request_id }),
            ClientAction::Send {
                to: self.known_leader.unwrap_or(0),
                msg: Message::Request { req: req.clone(), resent: false },
            },
        ];
        let timeout = self.base_timeout;
        let generation = self.arm(request_id, timeout, &mut out);
        self.pending.insert(
            request_id,
            Pending { req, timeout, generation, attempts: 0, committed: false, executed: false },
        );
        (request_id, out)
    }

    pub fn on_reply(&mut self, reply: &ClientReply) -> Vec<ClientAction> {
        let mut out = Vec::new();
        let rid = reply.request_id;
        if reply.client != self.id || !self.pending.contains_key(&rid) {
            return out;
        }
        if !verify_proof(&self.dir, reply) {
            out.push(ClientAction::Note(ClientEvent::ProofRejected { request_id: rid }));
            return out;
        }
        self.known_leader = Some(reply.leader);
        let p = self.pending.get_mut(&rid).expect("checked above");
        let fresh = match reply.proof.kind {
            QcKind::Commit => !std::mem::replace(&mut p.committed, true),
            QcKind::Execute => !std::mem::replace(&mut p.executed, true),
            // a request settled by a view change is both committed and executed
            QcKind::NewView => {
                let was = p.committed && p.executed;
                p.committed = true;
                p.executed = true;
                !was
            }
        };
        if fresh {
            out.push(ClientAction::Note(ClientEvent::ProofAccepted {
                request_id: rid,
                kind: reply.proof.kind,
                counter: reply.counter,
            }));
        }
        let done = match self.subscription {
            Subscription::Commitment => p.committed,
            Subscription::Execution => p.executed,
            Subscription::Both => p.committed && p.executed,
        };
        if done {
            self.pending.remove(&rid);
            self.completed += 1;
            out.push(ClientAction::Note(ClientEvent::Completed { request_id: rid }));
        }
        out
    }

    /// On a live timer, resends the request to every replica and doubles the
    /// deadline.
    pub fn on_timer(&mut self, timer: ClientTimer) -> Vec<ClientAction> {
        let mut out = Vec::new();
        let Some(p) = self.pending.get(&timer.request_id) else { return out };
        if p.generation != timer.generation {
            return out;
        }
        let req = p.req.clone();
        let attempt = p.attempts + 1;
        let timeout = p.timeout * 2;
        out.push(ClientAction::Note(ClientEvent::Resent { request_id: timer.request_id, attempt }));
        for r in 0..self.dir.n as ReplicaId {
            out.push(ClientAction::Send { to: r, msg: Message::Request { req: req.clone(), resent: true } });
        }
        let generation = self.arm(timer.request_id, timeout, &mut out);
        let p = self.pending.get_mut(&timer.request_id).expect("checked above");
        p.attempts = attempt;
        p.timeout = timeout;
        p.generation = generation;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{CryptoSuite, Prg, Secret};
    use crate::enclave::trusted_setup;

    fn genuine() -> (Arc<Directory>, ClientReply) {
        let mut rng = Prg::new(b"client-tests");
        let (mut es, dir) = trusted_setup(3, 1, CryptoSuite::Sim, &mut rng);
        let l = es[0].leader() as usize;
        let at = es[l].current();
        let env = es[l].generate_secret(at).unwrap();
        let sc = es[l].create_counter(crate::crypto::hash(b"req"));
        let mut shares = Vec::new();
        for (i, e) in es.iter_mut().enumerate() {
            if let Ok(v) = e.verify_counter(&sc, env.share_for(i as u32).unwrap()) {
                shares.push(v.share);
            }
        }
        let secret = Secret(crate::crypto::reconstruct(&shares[..2], 1).unwrap());
        let reply = ClientReply {
            client: 1,
            request_id: 0,
            result: crate::protocol::OpResult::Stored,
            proof: crate::protocol::QuorumCert { secret, counter: at, kind: QcKind::Commit },
            commitment: env.commitment,
            counter: at,
            view: 0,
            leader: l as u32,
        };
        (dir, reply)
    }

    #[test]
    fn genuine_reply_verifies() {
        let (dir, reply) = genuine();
        assert!(verify_proof(&dir, &reply));
    }

    #[test]
    fn random_secrets_never_verify() {
        let (dir, reply) = genuine();
        let mut rng = Prg::new(b"forgeries");
        let accepted = (0..10_000)
            .filter(|_| {
                let mut r = reply.clone();
                r.proof.secret = Secret::random(&mut rng);
                verify_proof(&dir, &r)
            })
            .count();
        assert_eq!(accepted, 0);
    }

    #[test]
    fn commitment_for_another_counter_is_refused() {
        let (dir, mut reply) = genuine();
        reply.proof.counter = reply.proof.counter.next();
        assert!(!verify_proof(&dir, &reply));
        let (dir, mut reply) = genuine();
        reply.commitment.counter = reply.commitment.counter.next();
        reply.proof.counter = reply.commitment.counter;
        assert!(!verify_proof(&dir, &reply));
    }

    #[test]
    fn submit_goes_to_replica_zero_then_to_the_known_leader() {
        let (dir, reply) = genuine();
        let mut c = ClientSession::new(1, dir, Subscription::Commitment, 10);
        let (rid, acts) = c.submit(Operation::Get { key: "a".into() });
        assert_eq!(rid, 0);
        assert!(acts.iter().any(|a| matches!(a, ClientAction::Send { to: 0, .. })));
        assert!(acts.iter().any(|a| matches!(a, ClientAction::SetTimer { after: 80, .. })));
        let acts = c.on_reply(&reply);
        assert!(acts.contains(&ClientAction::Note(ClientEvent::Completed { request_id: 0 })));
        assert_eq!(c.known_leader(), Some(reply.leader));
        let (_, acts) = c.submit(Operation::Get { key: "b".into() });
        let to = reply.leader;
        assert!(acts.iter().any(|a| matches!(a, ClientAction::Send { to: t, .. } if *t == to)));
    }

    #[test]
    fn timeouts_resend_to_all_with_doubling_deadline() {
        let (dir, _) = genuine();
        let mut c = ClientSession::new(1, dir, Subscription::Commitment, 10);
        let (_, acts) = c.submit(Operation::Get { key: "a".into() });
        let mut timer = acts
            .iter()
            .find_map(|a| match a {
                ClientAction::SetTimer { timer, .. } => Some(*timer),
                _ => None,
            })
            .unwrap();
        let mut afters = Vec::new();
        for _ in 0..3 {
            let acts = c.on_timer(timer);
            let sends = acts.iter().filter(|a| matches!(a, ClientAction::Send { .. })).count();
            assert_eq!(sends, 3);
            let (t, after) = acts
                .iter()
                .find_map(|a| match a {
                    ClientAction::SetTimer { timer, after } => Some((*timer, *after)),
                    _ => None,
                })
                .unwrap();
            afters.push(after);
            // the superseded timer is inert
            assert!(c.on_timer(timer).is_empty());
            timer = t;
        }
        assert_eq!(afters, vec![160, 320, 640]);
    }

    #[test]
    fn reply_before_deadline_cancels_the_resend() {
        let (dir, reply) = genuine();
        let mut c = ClientSession::new(1, dir, Subscription::Commitment, 10);
        let (_, acts) = c.submit(Operation::Get { key: "a".into() });
        let timer = acts
            .iter()
            .find_map(|a| match a {
                ClientAction::SetTimer { timer, .. } => Some(*timer),
                _ => None,
            })
            .unwrap();
        c.on_reply(&reply);
        assert!(c.on_timer(timer).is_empty());
    }
}

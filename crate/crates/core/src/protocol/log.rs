//! Per-view message logs and their validity rules.

use thiserror::Error;

use crate::crypto::Digest;
use crate::enclave::{Directory, MessageLogProof, ReplicaId, SignedCounter};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("entry {index} has an invalid signature")]
    BadEntrySignature { index: usize },
    #[error("entry {index} belongs to view {found}, log is for view {view}")]
    WrongView { index: usize, view: u64, found: u64 },
    #[error("entry {index} has counter {found}, counters must run 0,1,2,...")]
    Gap { index: usize, found: u64 },
    #[error("log has no proof")]
    MissingProof,
    #[error("proof signature is invalid")]
    BadProofSignature,
    #[error("proof was issued by {found}, log belongs to {owner}")]
    WrongOwner { owner: ReplicaId, found: ReplicaId },
    #[error("proof does not name the last entry as highest")]
    HighestMismatch,
    #[error("proof counter must be one above the highest entry")]
    ProofCounter,
}

/// The counter-ordered proposals a replica voted for in one view, closed by
/// the enclave's proof over the last of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageLog {
    pub owner: ReplicaId,
    pub view: u64,
    pub entries: Vec<SignedCounter>,
    pub proof: Option<MessageLogProof>,
}

impl MessageLog {
    pub fn new(owner: ReplicaId, view: u64, entries: Vec<SignedCounter>, proof: MessageLogProof) -> Self {
        MessageLog { owner, view, entries, proof: Some(proof) }
    }

    /// Accepts the log only if every signature verifies, the entries carry
    /// counters 0,1,2,... of this view, and the proof sits exactly one
    /// counter above the last entry.
    pub fn validate(&self, dir: &Directory) -> Result<(), LogError> {
        for (index, e) in self.entries.iter().enumerate() {
            if !e.verify(dir) {
                return Err(LogError::BadEntrySignature { index });
            }
            if e.counter.view != self.view {
                return Err(LogError::WrongView { index, view: self.view, found: e.counter.view });
            }
            if e.counter.counter != index as u64 {
                return Err(LogError::Gap { index, found: e.counter.counter });
            }
        }
        let proof = self.proof.as_ref().ok_or(LogError::MissingProof)?;
        if !proof.verify(dir) {
            return Err(LogError::BadProofSignature);
        }
        if proof.issuer != self.owner {
            return Err(LogError::WrongOwner { owner: self.owner, found: proof.issuer });
        }
        if proof.highest.as_ref() != self.entries.last() {
            return Err(LogError::HighestMismatch);
        }
        if proof.proof_counter.view != self.view || !proof.counter_rule_holds() {
            return Err(LogError::ProofCounter);
        }
        Ok(())
    }

    /// `(counter, payload)` pairs issued by the leader that reigned in the
    /// view, i.e. excluding view-change round proposals.
    pub fn normal_entries(&self) -> Vec<(u64, Digest)> {
        self.entries
            .iter()
            .take_while(|e| e.issuer_view == e.counter.view)
            .map(|e| (e.counter.counter, e.payload))
            .collect()
    }
}

/// True if one sequence is a prefix of the other.
pub fn prefix_related<T: PartialEq>(a: &[T], b: &[T]) -> bool {
    let k = a.len().min(b.len());
    a[..k] == b[..k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, CryptoSuite, Prg};
    use crate::enclave::{trusted_setup, Enclave};

    fn setup() -> Vec<Enclave> {
        trusted_setup(3, 1, CryptoSuite::Sim, &mut Prg::new(b"log-tests")).0
    }

    /// Leader 0 proposes `k` times; replica 1 votes for all of them.
    fn voted_log(es: &mut [Enclave], k: usize) -> Vec<SignedCounter> {
        let leader = es[0].leader() as usize;
        let follower = (leader + 1) % 3;
        let mut out = Vec::new();
        for i in 0..k {
            let at = es[leader].current();
            let env = es[leader].generate_secret(at).unwrap();
            let sc = es[leader].create_counter(hash(&[i as u8]));
            let ct = env.share_for(follower as u32).unwrap().clone();
            es[follower].verify_counter(&sc, &ct).unwrap();
            out.push(sc);
        }
        out
    }

    fn follower_of(es: &[Enclave]) -> usize {
        (es[0].leader() as usize + 1) % 3
    }

    #[test]
    fn honest_log_is_valid() {
        let mut es = setup();
        let entries = voted_log(&mut es, 4);
        let fo = follower_of(&es);
        let proof = es[fo].get_highest_message(entries.last()).unwrap();
        let dir = es[0].directory().clone();
        let log = MessageLog::new(fo as u32, 0, entries, proof);
        assert_eq!(log.validate(&dir), Ok(()));
        assert_eq!(log.normal_entries().len(), 4);
    }

    #[test]
    fn empty_log_is_valid() {
        let mut es = setup();
        let dir = es[0].directory().clone();
        let fo = follower_of(&es);
        let proof = es[fo].get_highest_message(None).unwrap();
        assert_eq!(MessageLog::new(fo as u32, 0, vec![], proof).validate(&dir), Ok(()));
    }

    #[test]
    fn truncated_or_gapped_logs_are_rejected() {
        let mut es = setup();
        let entries = voted_log(&mut es, 4);
        let fo = follower_of(&es);
        let proof = es[fo].get_highest_message(entries.last()).unwrap();
        let dir = es[0].directory().clone();

        let truncated = MessageLog::new(fo as u32, 0, entries[..2].to_vec(), proof.clone());
        assert_eq!(truncated.validate(&dir), Err(LogError::HighestMismatch));

        let mut gapped = entries.clone();
        gapped.remove(1);
        let gapped = MessageLog::new(fo as u32, 0, gapped, proof.clone());
        assert_eq!(gapped.validate(&dir), Err(LogError::Gap { index: 1, found: 2 }));

        let mut forged = entries.clone();
        forged[2].payload = hash(b"other");
        let forged = MessageLog::new(fo as u32, 0, forged, proof.clone());
        assert_eq!(forged.validate(&dir), Err(LogError::BadEntrySignature { index: 2 }));

        let stolen = MessageLog::new((fo as u32 + 1) % 3, 0, entries.clone(), proof);
        assert!(matches!(stolen.validate(&dir), Err(LogError::WrongOwner { .. })));

        let unproven = MessageLog { owner: fo as u32, view: 0, entries, proof: None };
        assert_eq!(unproven.validate(&dir), Err(LogError::MissingProof));
    }

    #[test]
    fn prefix_relation() {
        assert!(prefix_related(&[1, 2], &[1, 2, 3]));
        assert!(prefix_related::<u8>(&[], &[1]));
        assert!(!prefix_related(&[1, 3], &[1, 2, 3]));
    }
}

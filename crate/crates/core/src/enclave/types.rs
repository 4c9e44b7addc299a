use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, PublicKey, Secret, Signature};

pub type ReplicaId = u32;

/// The `(c, v)` pair. Ordered by view first, then counter.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct CounterValue {
    pub view: u64,
    pub counter: u64,
}

impl CounterValue {
    pub const fn new(counter: u64, view: u64) -> Self {
        CounterValue { view, counter }
    }

    pub fn next(self) -> Self {
        CounterValue::new(self.counter + 1, self.view)
    }

    fn to_bytes(self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[..8].copy_from_slice(&self.counter.to_be_bytes());
        b[8..].copy_from_slice(&self.view.to_be_bytes());
        b
    }
}

impl fmt::Debug for CounterValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.counter, self.view)
    }
}

impl fmt::Display for CounterValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.counter, self.view)
    }
}

/// Public keys of all enclaves plus the group parameters, installed at setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Directory {
    pub n: usize,
    pub f: usize,
    pub keys: Vec<PublicKey>,
}

impl Directory {
    pub fn key(&self, id: ReplicaId) -> Option<&PublicKey> {
        self.keys.get(id as usize)
    }

    pub fn quorum(&self) -> usize {
        self.f + 1
    }

    fn verify(&self, id: ReplicaId, msg: &[u8], sig: &Signature) -> bool {
        self.key(id).is_some_and(|pk| pk.verify(msg, sig))
    }
}

/// `<x, (c, v)>` signed by the issuing enclave.
///
/// `issuer_view` is the view whose leader issued it: equal to `counter.view`
/// for ordinary proposals, and the target view for the proposal that opens a
/// view change round.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedCounter {
    pub issuer: ReplicaId,
    pub issuer_view: u64,
    pub payload: Digest,
    pub counter: CounterValue,
    pub sig: Signature,
}

impl SignedCounter {
    pub(crate) fn signing_bytes(
        issuer: ReplicaId,
        issuer_view: u64,
        payload: &Digest,
        counter: CounterValue,
    ) -> Vec<u8> {
        let mut b = Vec::with_capacity(80);
        b.extend_from_slice(b"tbft/counter");
        b.extend_from_slice(&issuer.to_be_bytes());
        b.extend_from_slice(&issuer_view.to_be_bytes());
        b.extend_from_slice(payload.as_bytes());
        b.extend_from_slice(&counter.to_bytes());
        b
    }

    /// Signature check only; who may issue in which view is checked by the caller.
    pub fn verify(&self, dir: &Directory) -> bool {
        let msg = Self::signing_bytes(self.issuer, self.issuer_view, &self.payload, self.counter);
        dir.verify(self.issuer, &msg, &self.sig)
    }

    /// Compact identity used inside other signed structures.
    pub fn reference_digest(&self) -> Digest {
        crate::crypto::hash(&Self::signing_bytes(
            self.issuer,
            self.issuer_view,
            &self.payload,
            self.counter,
        ))
    }
}

/// Leader-signed `<h_c, (c, v)>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedCommitment {
    pub issuer: ReplicaId,
    pub issuer_view: u64,
    pub secret_digest: Digest,
    pub counter: CounterValue,
    pub sig: Signature,
}

impl SignedCommitment {
    pub(crate) fn signing_bytes(
        issuer: ReplicaId,
        issuer_view: u64,
        secret_digest: &Digest,
        counter: CounterValue,
    ) -> Vec<u8> {
        let mut b = Vec::with_capacity(80);
        b.extend_from_slice(b"tbft/commitment");
        b.extend_from_slice(&issuer.to_be_bytes());
        b.extend_from_slice(&issuer_view.to_be_bytes());
        b.extend_from_slice(secret_digest.as_bytes());
        b.extend_from_slice(&counter.to_bytes());
        b
    }

    pub fn verify(&self, dir: &Directory) -> bool {
        let msg =
            Self::signing_bytes(self.issuer, self.issuer_view, &self.secret_digest, self.counter);
        dir.verify(self.issuer, &msg, &self.sig)
    }

    /// True iff the signature holds and `secret` opens the commitment.
    pub fn opens_with(&self, dir: &Directory, secret: &Secret) -> bool {
        self.verify(dir) && secret.digest() == self.secret_digest
    }
}

/// Output of `generate_secret`: the commitment plus one ciphertext per replica.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SecretEnvelope {
    pub commitment: SignedCommitment,
    pub shares: Vec<crate::crypto::Ciphertext>,
}

impl SecretEnvelope {
    pub fn share_for(&self, id: ReplicaId) -> Option<&crate::crypto::Ciphertext> {
        self.shares.get(id as usize)
    }
}

/// A share released by `verify_counter`, i.e. a vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoteShare {
    pub voter: ReplicaId,
    pub counter: CounterValue,
    pub secret_digest: Digest,
    pub share: crate::crypto::Share,
}

/// Signature over a replica's highest voted proposal at `proof_counter`,
/// issued for the view change to `target`. `highest = None` is the empty log.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MessageLogProof {
    pub issuer: ReplicaId,
    pub highest: Option<SignedCounter>,
    pub proof_counter: CounterValue,
    pub target: u64,
    pub sig: Signature,
}

pub(crate) fn highest_ref(h: &Option<SignedCounter>) -> (Digest, [u8; 16]) {
    match h {
        Some(sc) => (sc.reference_digest(), sc.counter.to_bytes()),
        None => (crate::crypto::hash(b"tbft/empty-log"), [0xff; 16]),
    }
}

impl MessageLogProof {
    pub(crate) fn signing_bytes(
        issuer: ReplicaId,
        highest: &Option<SignedCounter>,
        proof_counter: CounterValue,
        target: u64,
    ) -> Vec<u8> {
        let (d, c) = highest_ref(highest);
        let mut b = Vec::with_capacity(104);
        b.extend_from_slice(b"tbft/log-proof");
        b.extend_from_slice(&issuer.to_be_bytes());
        b.extend_from_slice(d.as_bytes());
        b.extend_from_slice(&c);
        b.extend_from_slice(&proof_counter.to_bytes());
        b.extend_from_slice(&target.to_be_bytes());
        b
    }

    pub fn verify(&self, dir: &Directory) -> bool {
        let msg = Self::signing_bytes(self.issuer, &self.highest, self.proof_counter, self.target);
        dir.verify(self.issuer, &msg, &self.sig)
            && self.highest.as_ref().is_none_or(|h| h.verify(dir))
    }

    /// The proof counter sits exactly one above its own highest entry.
    pub fn counter_rule_holds(&self) -> bool {
        match &self.highest {
            Some(h) => self.proof_counter == h.counter.next(),
            None => self.proof_counter.counter == 0,
        }
    }
}

/// Next leader's signed choice of the globally highest proposal of `base_view`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryAnchor {
    pub issuer: ReplicaId,
    pub base_view: u64,
    pub target_view: u64,
    pub highest: Option<SignedCounter>,
    pub sig: Signature,
}

impl HistoryAnchor {
    pub(crate) fn signing_bytes(
        issuer: ReplicaId,
        base_view: u64,
        target_view: u64,
        highest: &Option<SignedCounter>,
    ) -> Vec<u8> {
        let (d, c) = highest_ref(highest);
        let mut b = Vec::with_capacity(96);
        b.extend_from_slice(b"tbft/anchor");
        b.extend_from_slice(&issuer.to_be_bytes());
        b.extend_from_slice(&base_view.to_be_bytes());
        b.extend_from_slice(&target_view.to_be_bytes());
        b.extend_from_slice(d.as_bytes());
        b.extend_from_slice(&c);
        b
    }

    pub fn verify(&self, dir: &Directory) -> bool {
        let msg =
            Self::signing_bytes(self.issuer, self.base_view, self.target_view, &self.highest);
        dir.verify(self.issuer, &msg, &self.sig)
            && self.highest.as_ref().is_none_or(|h| h.verify(dir))
    }

    /// First counter of the view-change voting round.
    pub fn next_counter(&self) -> u64 {
        self.highest.as_ref().map_or(0, |h| h.counter.counter + 1)
    }
}

/// The New-View quorum certificate together with the commitment it opens.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NewViewCert {
    pub commitment: SignedCommitment,
    pub secret: Secret,
}

impl NewViewCert {
    pub fn target_view(&self) -> u64 {
        self.commitment.issuer_view
    }

    pub fn digest(&self) -> Digest {
        self.secret.digest()
    }
}

//! Emulated trusted enclave.
//!
//! An [`Enclave`] is a sealed per-replica state machine. Its host may call it
//! in any order, replay inputs or drop outputs, but the only way to observe or
//! change its state is through the methods below. Signing keys, pairwise
//! symmetric keys and the election seed never leave it.

mod types;

use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{
    aead_decrypt, aead_encrypt, hash, share_secret, CryptoSuite, Digest, FieldElement, KeyPair,
    Prg, Secret, Share, SigningKey, SymmetricKey,
};

pub use types::{
    CounterValue, Directory, HistoryAnchor, MessageLogProof, NewViewCert, ReplicaId,
    SecretEnvelope, SignedCommitment, SignedCounter, VoteShare,
};

/// Digest standing in for "the last QC" before any view change happened.
pub fn genesis_digest() -> Digest {
    hash(b"tbft/genesis")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnclaveError {
    #[error("invalid message: {0}")]
    InvalidMessage(&'static str),
    #[error("invalid counter: expected {expected:?}, got {got}")]
    InvalidCounter {
        expected: Option<CounterValue>,
        got: CounterValue,
    },
    #[error("voting is locked for view {0}")]
    VotingLocked(u64),
    #[error("secret must bind to the current counter {expected}, got {got}")]
    StaleBinding {
        expected: CounterValue,
        got: CounterValue,
    },
    #[error("not the latest vote: last validated is {last:?}")]
    NotLatestVote { last: Option<CounterValue> },
    #[error("only {valid} valid log proofs, need {needed}")]
    InsufficientQuorum { valid: usize, needed: usize },
    #[error("replica {me} is not the leader of view {target}")]
    NotNextLeader { me: ReplicaId, target: u64 },
    #[error("anchor would reopen counter {reopened} in view {view}")]
    StaleAnchor { view: u64, reopened: u64 },
    #[error("already voted in a view change past view {target}")]
    AbandonedViewChange { target: u64 },
}

impl EnclaveError {
    /// Errors that signal a faulty proposer and justify a view-change request.
    pub fn implicates_leader(&self) -> bool {
        matches!(
            self,
            EnclaveError::InvalidMessage(_) | EnclaveError::InvalidCounter { .. }
        )
    }
}

/// Record of every output an enclave produces, drained by the simulator for
/// the trace. Not visible to the host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditEvent {
    Signed { counter: CounterValue, payload: Digest },
    ShareReleased { counter: CounterValue, secret_digest: Digest },
    LogProof { proof_counter: CounterValue, highest: Option<CounterValue> },
    Anchored { target: u64, highest: Option<CounterValue> },
    EnteredView { view: u64, leader: ReplicaId },
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    target: u64,
    issuer: ReplicaId,
}

pub struct Enclave {
    id: ReplicaId,
    directory: Arc<Directory>,
    signer: SigningKey,
    pair_keys: Vec<SymmetricKey>,
    seed: [u8; 32],
    rng: Prg,

    view: u64,
    counter: u64,
    last_validated: Option<CounterValue>,
    locked: bool,
    // highest counter of this view already signed or voted; never reopened
    used_high: Option<u64>,
    own_pending: Option<CounterValue>,
    transition: Option<Transition>,
    // latest proof of this view as (highest, proof counter), while locked
    last_proof: Option<(Option<SignedCounter>, CounterValue)>,
    // highest view change a proof was issued for in this view
    proof_target: u64,
    leader: ReplicaId,
    entry_digest: Digest,

    audit: Vec<AuditEvent>,
}

impl std::fmt::Debug for Enclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enclave")
            .field("id", &self.id)
            .field("view", &self.view)
            .field("counter", &self.counter)
            .field("last_validated", &self.last_validated)
            .field("locked", &self.locked)
            .finish_non_exhaustive()
    }
}

/// Trusted setup: key generation, pairwise key exchange and the shared
/// election seed, installed into every enclave before the run starts.
pub fn trusted_setup(
    n: usize,
    f: usize,
    suite: CryptoSuite,
    rng: &mut Prg,
) -> (Vec<Enclave>, Arc<Directory>) {
    let pairs: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate(suite, rng)).collect();
    let mut matrix: Vec<Vec<Option<SymmetricKey>>> = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let k = SymmetricKey::generate(rng);
            matrix[i][j] = Some(k.clone());
            matrix[j][i] = Some(k);
        }
    }
    let mut seed = [0u8; 32];
    rng.fill(&mut seed);
    let directory = Arc::new(Directory {
        n,
        f,
        keys: pairs.iter().map(|p| p.public.clone()).collect(),
    });
    let enclaves = pairs
        .into_iter()
        .zip(matrix)
        .enumerate()
        .map(|(i, (kp, row))| {
            let mut e = Enclave {
                id: i as ReplicaId,
                directory: directory.clone(),
                signer: kp.secret,
                pair_keys: row.into_iter().map(|k| k.expect("filled above")).collect(),
                seed,
                rng: rng.fork(&(i as u64).to_be_bytes()),
                view: 0,
                counter: 0,
                last_validated: None,
                locked: false,
                used_high: None,
                own_pending: None,
                transition: None,
                last_proof: None,
                proof_target: 0,
                leader: 0,
                entry_digest: genesis_digest(),
                audit: Vec::new(),
            };
            e.leader = e.elect_leader(0, &genesis_digest());
            e
        })
        .collect();
    (enclaves, directory)
}

fn encode_share_plaintext(share: &Share, counter: CounterValue, h: &Digest) -> Vec<u8> {
    let mut b = Vec::with_capacity(68);
    b.extend_from_slice(&share.index.to_be_bytes());
    b.extend_from_slice(&share.value.to_bytes());
    b.extend_from_slice(&counter.counter.to_be_bytes());
    b.extend_from_slice(&counter.view.to_be_bytes());
    b.extend_from_slice(h.as_bytes());
    b
}

fn decode_share_plaintext(b: &[u8]) -> Option<(Share, CounterValue, Digest)> {
    if b.len() != 68 {
        return None;
    }
    let index = u32::from_be_bytes(b[0..4].try_into().ok()?);
    let value = FieldElement::from_bytes(b[4..20].try_into().ok()?)?;
    let c = u64::from_be_bytes(b[20..28].try_into().ok()?);
    let v = u64::from_be_bytes(b[28..36].try_into().ok()?);
    let h = Digest(b[36..68].try_into().ok()?);
    Some((Share { index, value }, CounterValue::new(c, v), h))
}

impl Enclave {
    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn directory(&self) -> &Arc<Directory> {
        &self.directory
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn current(&self) -> CounterValue {
        CounterValue::new(self.counter, self.view)
    }

    pub fn last_validated(&self) -> Option<CounterValue> {
        self.last_validated
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    /// Target of the view change whose anchor this enclave adopted, if any.
    pub fn transition_target(&self) -> Option<u64> {
        self.transition.map(|t| t.target)
    }

    pub fn leader(&self) -> ReplicaId {
        self.leader
    }

    pub fn entry_digest(&self) -> Digest {
        self.entry_digest
    }

    /// Leader of a future view `target > view`, as this enclave will accept it.
    pub fn leader_of(&self, target: u64) -> ReplicaId {
        if target == self.view {
            self.leader
        } else {
            self.elect_leader(target, &self.entry_digest)
        }
    }

    pub fn drain_audit(&mut self) -> Vec<AuditEvent> {
        std::mem::take(&mut self.audit)
    }

    fn sign(&self, msg: &[u8]) -> crate::crypto::Signature {
        self.signer.sign(msg)
    }

    fn expected_vote(&self) -> u64 {
        self.last_validated.map_or(0, |lv| lv.counter + 1)
    }

    fn bump_used(&mut self, c: u64) {
        self.used_high = Some(self.used_high.map_or(c, |u| u.max(c)));
    }

    /// The view this enclave signs proposals for: its own target while it is
    /// running a view-change round, else the current view.
    fn proposing_view(&self) -> u64 {
        match self.transition {
            Some(t) if t.issuer == self.id => t.target,
            _ => self.view,
        }
    }

    fn is_acting_proposer(&self) -> bool {
        match self.transition {
            Some(t) => t.issuer == self.id,
            None => self.leader == self.id,
        }
    }

    /// Whether `sc` comes from a proposer this enclave accepts in its view.
    fn proposer_is_legit(&self, sc: &SignedCounter) -> bool {
        if sc.issuer_view == self.view && sc.counter.view == self.view {
            return sc.issuer == self.leader;
        }
        sc.counter.view == self.view
            && sc.issuer_view > self.view
            && sc.issuer == self.elect_leader(sc.issuer_view, &self.entry_digest)
    }

    /// Signs `<x, (c, v)>` at the current counter, then increments it.
    pub fn create_counter(&mut self, x: Digest) -> SignedCounter {
        let counter = self.current();
        let issuer_view = self.proposing_view();
        let msg = SignedCounter::signing_bytes(self.id, issuer_view, &x, counter);
        let sc = SignedCounter {
            issuer: self.id,
            issuer_view,
            payload: x,
            counter,
            sig: self.sign(&msg),
        };
        if self.is_acting_proposer() && !self.locked && counter.counter == self.expected_vote() {
            self.last_validated = Some(counter);
            self.own_pending = Some(counter);
        }
        self.bump_used(counter.counter);
        self.counter += 1;
        self.audit.push(AuditEvent::Signed { counter, payload: x });
        sc
    }

    /// Fresh secret shared `(f+1, n)`, bound to the current `(c, v)`.
    pub fn generate_secret(&mut self, at: CounterValue) -> Result<SecretEnvelope, EnclaveError> {
        let current = self.current();
        if at != current {
            return Err(EnclaveError::StaleBinding {
                expected: current,
                got: at,
            });
        }
        let secret = Secret::random(&mut self.rng);
        let h = secret.digest();
        let shares = share_secret(secret.0, self.directory.f, self.directory.n, &mut self.rng)
            .expect("directory parameters are validated at setup");
        let ciphertexts = shares
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let pt = encode_share_plaintext(s, at, &h);
                aead_encrypt(&self.pair_keys[i], &pt, &mut self.rng)
            })
            .collect();
        let issuer_view = self.proposing_view();
        let msg = SignedCommitment::signing_bytes(self.id, issuer_view, &h, at);
        Ok(SecretEnvelope {
            commitment: SignedCommitment {
                issuer: self.id,
                issuer_view,
                secret_digest: h,
                counter: at,
                sig: self.sign(&msg),
            },
            shares: ciphertexts,
        })
    }

    /// Checks a proposal and, only if every check passes, releases this
    /// replica's share of the proposal's secret.
    pub fn verify_counter(
        &mut self,
        sc: &SignedCounter,
        share: &crate::crypto::Ciphertext,
    ) -> Result<VoteShare, EnclaveError> {
        if self.locked {
            return Err(EnclaveError::VotingLocked(self.view));
        }
        if !sc.verify(&self.directory) {
            return Err(EnclaveError::InvalidMessage("bad proposal signature"));
        }
        if sc.counter.view != self.view {
            return Err(EnclaveError::InvalidCounter {
                expected: Some(CounterValue::new(self.expected_vote(), self.view)),
                got: sc.counter,
            });
        }
        if !self.proposer_is_legit(sc) {
            return Err(EnclaveError::InvalidMessage("proposal from a non-leader"));
        }
        // after adopting an anchor only view-change rounds may be voted on
        if self.transition.is_some_and(|t| sc.issuer_view < t.target) {
            return Err(EnclaveError::InvalidMessage("proposal from an abandoned view"));
        }
        let key = self
            .pair_keys
            .get(sc.issuer as usize)
            .ok_or(EnclaveError::InvalidMessage("unknown issuer"))?;
        let pt = aead_decrypt(key, share)
            .map_err(|_| EnclaveError::InvalidMessage("share authentication failed"))?;
        let (s, bound, h) = decode_share_plaintext(&pt)
            .ok_or(EnclaveError::InvalidMessage("malformed share"))?;
        if s.index != self.id + 1 {
            return Err(EnclaveError::InvalidMessage("share for another replica"));
        }
        if bound != sc.counter {
            return Err(EnclaveError::InvalidCounter {
                expected: Some(sc.counter),
                got: bound,
            });
        }
        if sc.issuer == self.id {
            // the proposer's own vote on what it just created
            if self.own_pending != Some(sc.counter) {
                return Err(EnclaveError::InvalidCounter {
                    expected: self.own_pending,
                    got: sc.counter,
                });
            }
            self.own_pending = None;
        } else {
            let expected = CounterValue::new(self.expected_vote(), self.view);
            if sc.counter != expected || self.counter != expected.counter {
                return Err(EnclaveError::InvalidCounter {
                    expected: Some(expected),
                    got: sc.counter,
                });
            }
            self.last_validated = Some(sc.counter);
            self.bump_used(sc.counter.counter);
            self.counter += 1;
        }
        self.audit.push(AuditEvent::ShareReleased {
            counter: sc.counter,
            secret_digest: h,
        });
        Ok(VoteShare {
            voter: self.id,
            counter: sc.counter,
            secret_digest: h,
            share: s,
        })
    }

    /// Signs a proof over the latest voted proposal (or the empty log) for the
    /// view change to the next view and consumes a counter without validating
    /// it, which locks voting for the rest of the view.
    pub fn get_highest_message(
        &mut self,
        highest: Option<&SignedCounter>,
    ) -> Result<MessageLogProof, EnclaveError> {
        self.get_highest_message_for(highest, self.view + 1)
    }

    /// [`Enclave::get_highest_message`] for the view change to `target`.
    pub fn get_highest_message_for(
        &mut self,
        highest: Option<&SignedCounter>,
        target: u64,
    ) -> Result<MessageLogProof, EnclaveError> {
        if target <= self.view {
            return Err(EnclaveError::InvalidMessage("proof for a past view"));
        }
        if let Some(h) = highest {
            if !h.verify(&self.directory) {
                return Err(EnclaveError::InvalidMessage("bad highest signature"));
            }
        }
        if highest.map(|h| h.counter) != self.last_validated {
            return Err(EnclaveError::NotLatestVote {
                last: self.last_validated,
            });
        }
        let proof_counter = self.current();
        let proof = self.sign_proof(highest.cloned(), proof_counter, target);
        self.counter += 1;
        self.locked = true;
        self.own_pending = None;
        self.last_proof = Some((proof.highest.clone(), proof_counter));
        self.audit.push(AuditEvent::LogProof {
            proof_counter,
            highest: proof.highest.as_ref().map(|h| h.counter),
        });
        Ok(proof)
    }

    /// Re-issues the latest proof of this view for a later view change,
    /// without consuming a counter. Only possible while voting stays locked.
    pub fn retarget_proof(&mut self, target: u64) -> Result<MessageLogProof, EnclaveError> {
        let Some((highest, proof_counter)) = self.last_proof.clone().filter(|_| self.locked) else {
            return Err(EnclaveError::InvalidMessage("no proof to re-issue"));
        };
        if target <= self.proof_target {
            return Err(EnclaveError::InvalidMessage("proof already issued for a later view"));
        }
        Ok(self.sign_proof(highest, proof_counter, target))
    }

    fn sign_proof(
        &mut self,
        highest: Option<SignedCounter>,
        proof_counter: CounterValue,
        target: u64,
    ) -> MessageLogProof {
        let msg = MessageLogProof::signing_bytes(self.id, &highest, proof_counter, target);
        self.proof_target = self.proof_target.max(target);
        MessageLogProof {
            issuer: self.id,
            highest,
            proof_counter,
            target,
            sig: self.sign(&msg),
        }
    }

    /// An anchor for `target` may be adopted only in increasing target order
    /// and never below a view change this enclave already gave a proof for.
    fn may_adopt(&self, target: u64) -> Result<(), EnclaveError> {
        if self.transition.is_some_and(|t| target <= t.target) {
            return Err(EnclaveError::InvalidMessage("anchor for an older view change"));
        }
        if target < self.proof_target {
            return Err(EnclaveError::InvalidMessage("proof already issued for a later view"));
        }
        Ok(())
    }

    fn proof_is_valid(&self, p: &MessageLogProof, target: u64) -> bool {
        if p.target != target {
            return false;
        }
        if !p.verify(&self.directory) || p.proof_counter.view != self.view || !p.counter_rule_holds()
        {
            return false;
        }
        match &p.highest {
            Some(h) => self.proposer_is_legit(h),
            None => true,
        }
    }

    /// Picks the highest proposal among at least f+1 valid log proofs for the
    /// view change to `target`, signs it, and moves this enclave onto it.
    pub fn merge_highest_messages(
        &mut self,
        target: u64,
        proofs: &[MessageLogProof],
    ) -> Result<HistoryAnchor, EnclaveError> {
        if target <= self.view || self.leader_of(target) != self.id {
            return Err(EnclaveError::NotNextLeader { me: self.id, target });
        }
        self.may_adopt(target)?;
        let mut seen = Vec::new();
        let mut best: Option<&SignedCounter> = None;
        for p in proofs {
            if seen.contains(&p.issuer) || !self.proof_is_valid(p, target) {
                continue;
            }
            seen.push(p.issuer);
            if let Some(h) = &p.highest {
                let better = match best {
                    None => true,
                    Some(b) => (h.issuer_view, h.counter) > (b.issuer_view, b.counter),
                };
                if better {
                    best = Some(h);
                }
            }
        }
        let needed = self.directory.quorum();
        if seen.len() < needed {
            return Err(EnclaveError::InsufficientQuorum {
                valid: seen.len(),
                needed,
            });
        }
        let highest = best.cloned();
        let next = highest.as_ref().map_or(0, |h| h.counter.counter + 1);
        if self.used_high.is_some_and(|u| u >= next) {
            return Err(EnclaveError::StaleAnchor {
                view: self.view,
                reopened: next,
            });
        }
        let msg = HistoryAnchor::signing_bytes(self.id, self.view, target, &highest);
        let anchor = HistoryAnchor {
            issuer: self.id,
            base_view: self.view,
            target_view: target,
            highest,
            sig: self.sign(&msg),
        };
        self.adopt_anchor(&anchor);
        Ok(anchor)
    }

    fn adopt_anchor(&mut self, anchor: &HistoryAnchor) {
        self.last_proof = None;
        self.last_validated = anchor.highest.as_ref().map(|h| h.counter);
        self.counter = anchor.next_counter();
        self.locked = false;
        self.own_pending = None;
        self.transition = Some(Transition {
            target: anchor.target_view,
            issuer: anchor.issuer,
        });
        self.audit.push(AuditEvent::Anchored {
            target: anchor.target_view,
            highest: self.last_validated,
        });
    }

    /// Moves `(c, v)` and `(c', v')` onto the next leader's anchor so the
    /// view-change round can be voted on.
    pub fn sync_with_highest(&mut self, anchor: &HistoryAnchor) -> Result<(), EnclaveError> {
        if !anchor.verify(&self.directory) {
            return Err(EnclaveError::InvalidMessage("bad anchor signature"));
        }
        if anchor.base_view != self.view
            || anchor.target_view <= self.view
            || anchor.issuer != self.leader_of(anchor.target_view)
        {
            return Err(EnclaveError::InvalidMessage("anchor from a non-leader"));
        }
        if let Some(h) = &anchor.highest {
            if !self.proposer_is_legit(h) {
                return Err(EnclaveError::InvalidMessage("anchor references a foreign proposal"));
            }
        }
        self.may_adopt(anchor.target_view)?;
        let next = anchor.next_counter();
        if self.used_high.is_some_and(|u| u >= next) {
            return Err(EnclaveError::StaleAnchor {
                view: self.view,
                reopened: next,
            });
        }
        self.adopt_anchor(anchor);
        Ok(())
    }

    /// Enters the view certified by a New-View QC: `v := target`, `c := 0`,
    /// `(c', v')` cleared.
    pub fn update_view(&mut self, cert: &NewViewCert) -> Result<(), EnclaveError> {
        let target = cert.target_view();
        let cm = &cert.commitment;
        if target <= self.view
            || cm.counter.view != self.view
            || cm.issuer != self.leader_of(target)
        {
            return Err(EnclaveError::InvalidMessage("certificate for another view"));
        }
        if self.transition.is_some_and(|t| target < t.target) {
            return Err(EnclaveError::AbandonedViewChange { target });
        }
        self.enter(cert)
    }

    /// Like [`Enclave::update_view`], but also accepts a certificate for a
    /// view below the view change this enclave already voted in, provided
    /// `(commitment, secret)` is an opened quorum certificate of a proposal
    /// issued by the certified view's leader inside that view.
    ///
    /// Enclaves that voted in the higher round refuse the lower certificate,
    /// so f+1 votes inside the lower view mean the higher round can never
    /// gather a quorum.
    pub fn update_view_superseding(
        &mut self,
        cert: &NewViewCert,
        commitment: &SignedCommitment,
        secret: &Secret,
    ) -> Result<(), EnclaveError> {
        let target = cert.target_view();
        let cm = &cert.commitment;
        if target <= self.view
            || cm.counter.view != self.view
            || cm.issuer != self.leader_of(target)
        {
            return Err(EnclaveError::InvalidMessage("certificate for another view"));
        }
        if commitment.counter.view != target
            || commitment.issuer_view != target
            || commitment.issuer != cm.issuer
            || !commitment.opens_with(&self.directory, secret)
        {
            return Err(EnclaveError::InvalidMessage("no quorum certificate inside the view"));
        }
        self.enter(cert)
    }

    fn enter(&mut self, cert: &NewViewCert) -> Result<(), EnclaveError> {
        let target = cert.target_view();
        let cm = &cert.commitment;
        if !cm.opens_with(&self.directory, &cert.secret) {
            return Err(EnclaveError::InvalidMessage("certificate does not open"));
        }
        self.leader = cm.issuer;
        self.entry_digest = cert.digest();
        self.view = target;
        self.counter = 0;
        self.last_validated = None;
        self.locked = false;
        self.used_high = None;
        self.own_pending = None;
        self.transition = None;
        self.last_proof = None;
        self.proof_target = 0;
        self.audit.push(AuditEvent::EnteredView {
            view: target,
            leader: self.leader,
        });
        Ok(())
    }

    /// `r = first 64 bits of PRG(r1 || last_qc_digest || v_next)`, leader `r mod n`.
    pub fn elect_leader(&self, v_next: u64, last_qc_digest: &Digest) -> ReplicaId {
        elect_with_seed(&self.seed, self.directory.n, v_next, last_qc_digest)
    }
}

pub(crate) fn elect_with_seed(seed: &[u8; 32], n: usize, v_next: u64, d: &Digest) -> ReplicaId {
    let mut input = Vec::with_capacity(72);
    input.extend_from_slice(seed);
    input.extend_from_slice(d.as_bytes());
    input.extend_from_slice(&v_next.to_be_bytes());
    (Prg::new(&input).next_u64() % n as u64) as ReplicaId
}

#[cfg(test)]
mod tests;

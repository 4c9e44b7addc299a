//! Wire messages and their canonical encoding.
//!
//! Encoding is bincode with its default fixed-width little-endian integers
//! and u64 length prefixes, so a value always maps to the same bytes.

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, hash_parts, Digest, Secret};
use crate::enclave::{
    CounterValue, Directory, HistoryAnchor, MessageLogProof, NewViewCert, ReplicaId,
    SecretEnvelope, SignedCommitment, SignedCounter, VoteShare,
};

use super::kv::{OpResult, Operation};

pub type ClientId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Replica(ReplicaId),
    Client(ClientId),
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::Replica(i) => write!(f, "r{i}"),
            NodeId::Client(i) => write!(f, "c{i}"),
        }
    }
}

/// Which proofs a client wants back for a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Subscription {
    #[default]
    Commitment,
    Execution,
    Both,
}

impl Subscription {
    pub fn wants_commitment(self) -> bool {
        matches!(self, Subscription::Commitment | Subscription::Both)
    }

    pub fn wants_execution(self) -> bool {
        matches!(self, Subscription::Execution | Subscription::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClientRequest {
    pub client: ClientId,
    pub request_id: u64,
    pub op: Operation,
    pub subscription: Subscription,
}

impl ClientRequest {
    pub fn key(&self) -> (ClientId, u64) {
        (self.client, self.request_id)
    }

    pub fn digest(&self) -> Digest {
        hash(&encode(self))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QcKind {
    Commit,
    Execute,
    NewView,
}

/// A reconstructed secret: proof that f+1 enclaves voted for `counter`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuorumCert {
    pub secret: Secret,
    pub counter: CounterValue,
    pub kind: QcKind,
}

impl QuorumCert {
    pub fn opens(&self, commitment: &SignedCommitment, dir: &Directory) -> bool {
        self.counter == commitment.counter && commitment.opens_with(dir, &self.secret)
    }
}

/// The QC of the previous counter together with the digest of the results of
/// executing that proposal's requests.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Justify {
    pub qc: QuorumCert,
    pub result: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProposalKind {
    Normal,
    /// Opens the voting round of a view change; carries no requests.
    NewViewRound { target: u64, anchor: Digest },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProposalBody {
    pub kind: ProposalKind,
    pub requests: Vec<ClientRequest>,
    pub justify: Option<Justify>,
    /// Reference digest of the signed proposal at the previous counter.
    pub parent: Option<Digest>,
}

impl ProposalBody {
    pub fn digest(&self) -> Digest {
        hash_parts(&[b"tbft/proposal", &encode(self)])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub body: ProposalBody,
    pub signed: SignedCounter,
    pub envelope: SecretEnvelope,
}

impl Proposal {
    pub fn counter(&self) -> CounterValue {
        self.signed.counter
    }

    pub fn reference(&self) -> Digest {
        self.signed.reference_digest()
    }

    pub fn commitment(&self) -> &SignedCommitment {
        &self.envelope.commitment
    }

    /// Host-side structural checks. The enclave repeats the ones it needs.
    pub fn check(&self, dir: &Directory) -> Result<(), &'static str> {
        let c = &self.envelope.commitment;
        if self.body.digest() != self.signed.payload {
            return Err("payload digest mismatch");
        }
        if c.counter != self.signed.counter
            || c.issuer != self.signed.issuer
            || c.issuer_view != self.signed.issuer_view
        {
            return Err("envelope bound to another counter");
        }
        if self.envelope.shares.len() != dir.n {
            return Err("wrong share count");
        }
        if !self.signed.verify(dir) || !c.verify(dir) {
            return Err("bad signature");
        }
        let nv = matches!(self.body.kind, ProposalKind::NewViewRound { .. });
        if nv != (self.signed.issuer_view != self.signed.counter.view) {
            return Err("proposal kind does not match its issuer view");
        }
        if nv && (!self.body.requests.is_empty() || self.body.justify.is_some()) {
            return Err("view change proposal carries requests");
        }
        match (&self.body.justify, self.signed.counter.counter) {
            (Some(j), c) if c == 0 || j.qc.counter.next() != self.signed.counter => {
                Err("justify does not cover the previous counter")
            }
            _ => Ok(()),
        }
    }
}

/// A client-verifiable proof that a request was committed or executed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClientReply {
    pub client: ClientId,
    pub request_id: u64,
    pub result: OpResult,
    pub proof: QuorumCert,
    pub commitment: SignedCommitment,
    /// Counter at which the request was ordered.
    pub counter: CounterValue,
    pub view: u64,
    pub leader: ReplicaId,
}

/// Everything needed to leave a view: the anchor chosen by the next leader,
/// the proposal that opened the view-change round (which names the anchor),
/// and the certificate reconstructed from that round's votes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Closing {
    pub anchor: HistoryAnchor,
    pub proposal: Proposal,
    pub cert: NewViewCert,
}

impl Closing {
    pub fn target_view(&self) -> u64 {
        self.cert.target_view()
    }

    /// Checks that the three parts belong together. Signatures of the
    /// proposal and anchor are checked, the certificate is left to the enclave.
    pub fn check(&self, dir: &Directory) -> Result<(), &'static str> {
        if !self.anchor.verify(dir) {
            return Err("bad anchor signature");
        }
        if self.anchor.target_view != self.cert.target_view() {
            return Err("anchor and certificate disagree on the target view");
        }
        if self.proposal.envelope.commitment != self.cert.commitment {
            return Err("certificate does not belong to the proposal");
        }
        check_opening(&self.anchor, &self.proposal, dir)
    }
}

pub fn anchor_digest(a: &HistoryAnchor) -> Digest {
    hash_parts(&[b"tbft/anchor-digest", &encode(a)])
}

/// Checks that `proposal` is the round opened by `anchor`'s issuer on top of it.
pub fn check_opening(
    anchor: &HistoryAnchor,
    proposal: &Proposal,
    dir: &Directory,
) -> Result<(), &'static str> {
    proposal.check(dir)?;
    let expected_kind =
        ProposalKind::NewViewRound { target: anchor.target_view, anchor: anchor_digest(anchor) };
    if proposal.body.kind != expected_kind {
        return Err("proposal does not name this anchor");
    }
    if proposal.body.parent != anchor.highest.as_ref().map(|h| h.reference_digest()) {
        return Err("proposal does not extend the anchor");
    }
    if proposal.counter() != CounterValue::new(anchor.next_counter(), anchor.base_view)
        || proposal.signed.issuer != anchor.issuer
    {
        return Err("proposal not issued right after the anchor");
    }
    Ok(())
}

/// History of one view as needed by a replica catching up: the proposals of
/// its chain and, for a closed view, how it was closed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub view: u64,
    pub proposals: Vec<Proposal>,
    pub closing: Option<Closing>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Message {
    Request {
        req: ClientRequest,
        /// Set when the client broadcast the request after a timeout.
        resent: bool,
    },
    Prepare {
        proposal: Proposal,
        new_view: Option<Box<Closing>>,
    },
    VoteForCommit(VoteShare),
    Commit(Proposal),
    VoteForDecide(VoteShare),
    Decide(QuorumCert),
    RequestViewChange {
        target: u64,
        proof: MessageLogProof,
        log: Vec<SignedCounter>,
    },
    ViewChange {
        anchor: HistoryAnchor,
        proposal: Proposal,
    },
    VoteForNewView(VoteShare),
    NewView(Box<Closing>),
    FetchProposals {
        view: u64,
        from: u64,
    },
    Proposals(Vec<Segment>),
    Reply(ClientReply),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Request,
    Prepare,
    VoteForCommit,
    Commit,
    VoteForDecide,
    Decide,
    RequestViewChange,
    ViewChange,
    VoteForNewView,
    NewView,
    FetchProposals,
    Proposals,
    Reply,
}

impl MessageKind {
    pub const ALL: [MessageKind; 13] = [
        MessageKind::Request,
        MessageKind::Prepare,
        MessageKind::VoteForCommit,
        MessageKind::Commit,
        MessageKind::VoteForDecide,
        MessageKind::Decide,
        MessageKind::RequestViewChange,
        MessageKind::ViewChange,
        MessageKind::VoteForNewView,
        MessageKind::NewView,
        MessageKind::FetchProposals,
        MessageKind::Proposals,
        MessageKind::Reply,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Request => "Request",
            MessageKind::Prepare => "Prepare",
            MessageKind::VoteForCommit => "VoteForCommit",
            MessageKind::Commit => "Commit",
            MessageKind::VoteForDecide => "VoteForDecide",
            MessageKind::Decide => "Decide",
            MessageKind::RequestViewChange => "RequestViewChange",
            MessageKind::ViewChange => "ViewChange",
            MessageKind::VoteForNewView => "VoteForNewView",
            MessageKind::NewView => "NewView",
            MessageKind::FetchProposals => "FetchProposals",
            MessageKind::Proposals => "Proposals",
            MessageKind::Reply => "Reply",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Messages that belong to a view change rather than the normal case.
    pub fn is_view_change(self) -> bool {
        matches!(
            self,
            MessageKind::RequestViewChange
                | MessageKind::ViewChange
                | MessageKind::VoteForNewView
                | MessageKind::NewView
        )
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Request { .. } => MessageKind::Request,
            Message::Prepare { .. } => MessageKind::Prepare,
            Message::VoteForCommit(_) => MessageKind::VoteForCommit,
            Message::Commit(_) => MessageKind::Commit,
            Message::VoteForDecide(_) => MessageKind::VoteForDecide,
            Message::Decide(_) => MessageKind::Decide,
            Message::RequestViewChange { .. } => MessageKind::RequestViewChange,
            Message::ViewChange { .. } => MessageKind::ViewChange,
            Message::VoteForNewView(_) => MessageKind::VoteForNewView,
            Message::NewView(_) => MessageKind::NewView,
            Message::FetchProposals { .. } => MessageKind::FetchProposals,
            Message::Proposals(_) => MessageKind::Proposals,
            Message::Reply(_) => MessageKind::Reply,
        }
    }

    /// The counter a message is about, when it has one.
    pub fn counter(&self) -> Option<CounterValue> {
        match self {
            Message::Prepare { proposal, .. } | Message::Commit(proposal) => {
                Some(proposal.counter())
            }
            Message::ViewChange { proposal, .. } => Some(proposal.counter()),
            Message::VoteForCommit(v) | Message::VoteForDecide(v) | Message::VoteForNewView(v) => {
                Some(v.counter)
            }
            Message::Decide(qc) => Some(qc.counter),
            Message::RequestViewChange { proof, .. } => Some(proof.proof_counter),
            Message::NewView(c) => Some(c.cert.commitment.counter),
            Message::Reply(r) => Some(r.counter),
            Message::Request { .. } | Message::FetchProposals { .. } | Message::Proposals(_) => {
                None
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn from_bytes(b: &[u8]) -> Option<Message> {
        bincode::deserialize(b).ok()
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

pub(crate) fn encode<T: Serialize>(v: &T) -> Vec<u8> {
    bincode::serialize(v).expect("in-memory encoding cannot fail")
}

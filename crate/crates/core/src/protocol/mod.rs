//! The untrusted host side of a replica.

pub mod kv;
pub mod log;
pub mod messages;

pub use kv::{KvStore, OpResult, Operation};
pub use log::{prefix_related, LogError, MessageLog};
pub use messages::{
    anchor_digest, check_opening, ClientId, ClientReply, Closing, ClientRequest, Justify, Message, MessageKind, NodeId, Proposal,
    ProposalBody, ProposalKind, QcKind, QuorumCert, Segment, Subscription,
};
pub mod replica;
pub use replica::{Action, ExecRecord, Faults, Mode, Replica, ReplicaConfig, ReplicaEvent, Timer, TimerKind};

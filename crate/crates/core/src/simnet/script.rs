//! Adversary scripts: which replicas are corrupt, how they misbehave, and
//! what the network does to messages.

use serde::{Deserialize, Serialize};

use crate::protocol::{Faults, MessageKind};

/// A replica named in a script: a plain id, `"leader0"` for whoever the setup
/// elects as the first leader, or `"follower0"` for the lowest other id.
/// Inside a partition group, `"rest"` stands for every replica not listed in
/// another group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplicaRef {
    Id(u32),
    Named(String),
}

/// An endpoint pattern in a rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodePattern {
    Replica(ReplicaRef),
    AnyReplica,
    AnyClient,
    Corrupt,
    /// The leader of the highest view any honest replica has reached.
    CurrentLeader,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptReplica {
    pub replica: ReplicaRef,
    /// Stop sending, receiving and running timers from this tick on.
    #[serde(default)]
    pub crash_at: Option<u64>,
    #[serde(default)]
    pub faults: Faults,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Match {
    #[serde(default)]
    pub kinds: Vec<String>,
    #[serde(default)]
    pub from: Option<NodePattern>,
    #[serde(default)]
    pub to: Option<NodePattern>,
    /// First tick (inclusive) the rule applies at.
    #[serde(default)]
    pub after: Option<u64>,
    /// Last tick (exclusive).
    #[serde(default)]
    pub before: Option<u64>,
    /// Chance the rule fires on a matching message; 1 when absent.
    #[serde(default)]
    pub probability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleAction {
    Drop,
    Delay { ticks: u64 },
    /// Extra uniform delay in `[0, max]`, which reorders messages.
    Reorder { max: u64 },
    Duplicate { copies: u32 },
    /// Delivers a copy again `after` ticks later.
    Replay { after: u64 },
    /// Flips `bytes` random bytes of the encoded message.
    Modify { bytes: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default)]
    pub when: Match,
    pub action: RuleAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub groups: Vec<Vec<ReplicaRef>>,
    pub from: u64,
    pub until: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub from: u64,
    pub until: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnclaveCall {
    CreateCounter,
    GenerateSecret,
    GetHighestMessage,
    Terminate,
}

/// Calls made directly on a corrupt replica's enclave at a given tick.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnclaveSchedule {
    pub replica: ReplicaRef,
    pub at: u64,
    pub calls: Vec<EnclaveCall>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryScript {
    #[serde(default)]
    pub corrupt: Vec<CorruptReplica>,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub partitions: Vec<Partition>,
    #[serde(default)]
    pub dos_leader: Vec<Span>,
    #[serde(default)]
    pub schedule: Vec<EnclaveSchedule>,
}

impl Match {
    pub fn kind_filter(&self) -> Result<Vec<MessageKind>, String> {
        self.kinds
            .iter()
            .map(|k| MessageKind::from_name(k).ok_or_else(|| format!("unknown message kind {k:?}")))
            .collect()
    }
}

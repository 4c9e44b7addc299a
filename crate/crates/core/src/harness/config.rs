//! Scenario files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::CryptoSuite;
use crate::protocol::{Mode, Subscription};
use crate::simnet::script::{AdversaryScript, NodePattern, ReplicaRef};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Never {
    Never,
}

/// Global stabilization time: a tick, or `"never"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gst {
    At(u64),
    Never(Never),
}

impl Default for Gst {
    fn default() -> Self {
        Gst::At(0)
    }
}

impl Gst {
    pub fn tick(self) -> Option<u64> {
        match self {
            Gst::At(t) => Some(t),
            Gst::Never(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OpMix {
    #[default]
    Noop,
    Put,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub count: u32,
    pub requests_per_client: u64,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
    #[serde(default)]
    pub subscription: Subscription,
    /// Requests a client keeps in flight at once.
    #[serde(default = "one")]
    pub window: usize,
    #[serde(default)]
    pub ops: OpMix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayLaw {
    /// Every message takes `ticks`, or delta when absent.
    Fixed {
        #[serde(default)]
        ticks: Option<u64>,
    },
    Uniform { min: u64, max: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "fixed_delta")]
    pub post_gst: DelayLaw,
    /// Defaults to uniform in `[1, 3 delta]`.
    #[serde(default)]
    pub pre_gst: Option<DelayLaw>,
    #[serde(default)]
    pub pre_gst_drop: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { post_gst: fixed_delta(), pre_gst: None, pre_gst_drop: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub f: usize,
    #[serde(default = "default_delta")]
    pub delta: u64,
    #[serde(default)]
    pub gst: Gst,
    /// Defaults to `gst + 500 delta`; required when gst is never.
    #[serde(default)]
    pub max_ticks: Option<u64>,
    #[serde(default)]
    pub mode: Mode,
    pub clients: WorkloadConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub adversary: AdversaryScript,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub crypto: CryptoSuite,
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Whether every request must be answered before `max_ticks`.
    #[serde(default = "yes")]
    pub liveness: bool,
}

fn default_delta() -> u64 {
    10
}
fn default_payload() -> usize {
    16
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn fixed_delta() -> DelayLaw {
    DelayLaw::Fixed { ticks: None }
}

impl ScenarioConfig {
    /// Parses and validates a scenario file.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// A small honest scenario, handy as a starting point.
    pub fn honest(n: usize, requests: u64) -> Self {
        ScenarioConfig {
            schema: SCHEMA_VERSION,
            name: "honest".into(),
            n,
            f: (n - 1) / 2,
            delta: default_delta(),
            gst: Gst::At(0),
            max_ticks: None,
            mode: Mode::Basic,
            clients: WorkloadConfig {
                count: 1,
                requests_per_client: requests,
                payload_bytes: default_payload(),
                subscription: Subscription::Commitment,
                window: 1,
                ops: OpMix::Noop,
            },
            network: NetworkConfig::default(),
            adversary: AdversaryScript::default(),
            seed: 1,
            crypto: CryptoSuite::Sim,
            batch_size: 1,
            liveness: true,
        }
    }

    /// Same scenario with `n` replicas and `f = (n-1)/2`.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self.f = (n - 1) / 2;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn max_ticks(&self) -> u64 {
        match (self.max_ticks, self.gst.tick()) {
            (Some(m), _) => m,
            (None, Some(g)) => g + 500 * self.delta,
            (None, None) => 500 * self.delta,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.n != 2 * self.f + 1 {
            return Err(invalid("n", format!("n must equal 2f+1 (n={}, f={})", self.n, self.f)));
        }
        if self.delta == 0 {
            return Err(invalid("delta", "must be at least 1 tick"));
        }
        if self.gst.tick().is_none() && self.max_ticks.is_none() {
            return Err(invalid("max_ticks", "required when gst is never"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.clients.count == 0 {
            return Err(invalid("clients.count", "need at least one client"));
        }
        if self.clients.window == 0 {
            return Err(invalid("clients.window", "must be at least 1"));
        }
        self.validate_network()?;
        self.validate_adversary()
    }

    fn validate_network(&self) -> Result<(), ConfigError> {
        match self.network.post_gst {
            DelayLaw::Fixed { ticks: Some(t) } if t > self.delta || t == 0 => {
                return Err(invalid("network.post_gst.ticks", "must lie in [1, delta]"));
            }
            DelayLaw::Uniform { min, max } if min == 0 || min > max || max > self.delta => {
                return Err(invalid("network.post_gst", "need 1 <= min <= max <= delta"));
            }
            _ => {}
        }
        if let Some(DelayLaw::Uniform { min, max }) = self.network.pre_gst {
            if min == 0 || min > max {
                return Err(invalid("network.pre_gst", "need 1 <= min <= max"));
            }
        }
        if !(0.0..=1.0).contains(&self.network.pre_gst_drop) {
            return Err(invalid("network.pre_gst_drop", "must be a probability"));
        }
        Ok(())
    }

    fn check_ref(&self, field: &str, r: &ReplicaRef) -> Result<(), ConfigError> {
        match r {
            ReplicaRef::Id(i) if (*i as usize) < self.n => Ok(()),
            ReplicaRef::Id(i) => Err(invalid(field, format!("replica {i} out of range"))),
            ReplicaRef::Named(s) if s == "leader0" || s == "follower0" => Ok(()),
            ReplicaRef::Named(s) => Err(invalid(field, format!("unknown replica name {s:?}"))),
        }
    }

    fn validate_adversary(&self) -> Result<(), ConfigError> {
        let adv = &self.adversary;
        if adv.corrupt.len() > self.f {
            return Err(invalid(
                "adversary.corrupt",
                format!("{} corrupt replicas exceed f = {}", adv.corrupt.len(), self.f),
            ));
        }
        for (i, c) in adv.corrupt.iter().enumerate() {
            self.check_ref(&format!("adversary.corrupt[{i}].replica"), &c.replica)?;
            if adv.corrupt[..i].iter().any(|o| o.replica == c.replica) {
                return Err(invalid(&format!("adversary.corrupt[{i}].replica"), "listed twice"));
            }
        }
        for (i, r) in adv.rules.iter().enumerate() {
            let field = format!("adversary.rules[{i}]");
            r.when.kind_filter().map_err(|m| invalid(&format!("{field}.when.kinds"), m))?;
            if r.when.probability.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
                return Err(invalid(&format!("{field}.when.probability"), "must be a probability"));
            }
            for p in [&r.when.from, &r.when.to].into_iter().flatten() {
                if let NodePattern::Replica(rr) = p {
                    self.check_ref(&format!("{field}.when"), rr)?;
                }
            }
        }
        let gst = self.gst.tick();
        for (i, p) in adv.partitions.iter().enumerate() {
            let field = format!("adversary.partitions[{i}]");
            for g in &p.groups {
                for r in g {
                    if !matches!(r, ReplicaRef::Named(s) if s == "rest") {
                        self.check_ref(&field, r)?;
                    }
                }
            }
            if p.from > p.until || gst.is_some_and(|g| p.until > g) {
                return Err(invalid(&field, "partitions must end by gst"));
            }
        }
        for (i, s) in adv.dos_leader.iter().enumerate() {
            if s.from > s.until || gst.is_some_and(|g| s.until > g) {
                return Err(invalid(&format!("adversary.dos_leader[{i}]"), "spans must end by gst"));
            }
        }
        for (i, s) in adv.schedule.iter().enumerate() {
            let field = format!("adversary.schedule[{i}].replica");
            self.check_ref(&field, &s.replica)?;
            if !adv.corrupt.iter().any(|c| c.replica == s.replica) {
                return Err(invalid(&field, "only corrupt enclaves can be scheduled"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"schema":1,"n":3,"f":1,"clients":{"count":1,"requests_per_client":2}}"#
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = ScenarioConfig::from_json(minimal()).unwrap();
        assert_eq!(c.delta, 10);
        assert_eq!(c.gst, Gst::At(0));
        assert_eq!(c.max_ticks(), 5000);
        assert_eq!(c.mode, Mode::Basic);
        assert!(c.liveness);
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let text = "{\"schema\":1,\n\"n\":3,\"f\":1,\"bogus\":2,\"clients\":{\"count\":1,\"requests_per_client\":2}}";
        match ScenarioConfig::from_json(text) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn n_must_be_two_f_plus_one() {
        let text = r#"{"schema":1,"n":4,"f":1,"clients":{"count":1,"requests_per_client":2}}"#;
        assert!(matches!(ScenarioConfig::from_json(text), Err(ConfigError::Invalid { field, .. }) if field == "n"));
    }

    #[test]
    fn too_many_corrupt_replicas_are_rejected() {
        let mut c = ScenarioConfig::honest(3, 1);
        let bad = crate::simnet::script::CorruptReplica {
            replica: ReplicaRef::Id(0),
            crash_at: None,
            faults: Default::default(),
        };
        c.adversary.corrupt = vec![bad.clone(), crate::simnet::script::CorruptReplica { replica: ReplicaRef::Id(1), ..bad }];
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field, .. }) if field == "adversary.corrupt"));
    }

    #[test]
    fn never_gst_parses_and_needs_max_ticks() {
        let text = r#"{"schema":1,"n":3,"f":1,"gst":"never","clients":{"count":1,"requests_per_client":2}}"#;
        assert!(matches!(ScenarioConfig::from_json(text), Err(ConfigError::Invalid { field, .. }) if field == "max_ticks"));
        let text = r#"{"schema":1,"n":3,"f":1,"gst":"never","max_ticks":900,"clients":{"count":1,"requests_per_client":2}}"#;
        let c = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(c.gst.tick(), None);
    }

    #[test]
    fn partitions_past_gst_break_the_honesty_bound() {
        let mut c = ScenarioConfig::honest(3, 1);
        c.gst = Gst::At(100);
        c.adversary.partitions.push(crate::simnet::script::Partition {
            groups: vec![vec![ReplicaRef::Id(0)], vec![ReplicaRef::Id(1), ReplicaRef::Id(2)]],
            from: 0,
            until: 150,
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let c = ScenarioConfig::honest(5, 3);
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
    }
}

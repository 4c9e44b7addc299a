//! The replicated key-value state machine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Digest};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    Put { key: String, value: String },
    Get { key: String },
    Noop { payload: Vec<u8> },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpResult {
    Stored,
    Value(Option<String>),
    PayloadDigest(Digest),
    Error(String),
}

impl OpResult {
    pub fn digest(&self) -> Digest {
        hash(&bincode::serialize(self).expect("in-memory encoding"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvStore {
    map: BTreeMap<String, String>,
}

impl KvStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// PUT stores, GET reads, NOOP returns the payload hash. Malformed
    /// operations produce an error result that is replicated like any other.
    pub fn apply(&mut self, op: &Operation) -> OpResult {
        match op {
            Operation::Put { key, .. } | Operation::Get { key } if key.is_empty() => {
                OpResult::Error("empty key".into())
            }
            Operation::Put { key, value } => {
                self.map.insert(key.clone(), value.clone());
                OpResult::Stored
            }
            Operation::Get { key } => OpResult::Value(self.map.get(key).cloned()),
            Operation::Noop { payload } => OpResult::PayloadDigest(hash(payload)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&String> {
        self.map.get(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Digest of the full contents, stable across replicas.
    pub fn digest(&self) -> Digest {
        hash(&bincode::serialize(&self.map).expect("in-memory encoding"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Prg;

    #[test]
    fn put_then_get() {
        let mut kv = KvStore::new();
        assert_eq!(
            kv.apply(&Operation::Put { key: "a".into(), value: "1".into() }),
            OpResult::Stored
        );
        assert_eq!(
            kv.apply(&Operation::Get { key: "a".into() }),
            OpResult::Value(Some("1".into()))
        );
        assert_eq!(kv.apply(&Operation::Get { key: "b".into() }), OpResult::Value(None));
    }

    #[test]
    fn malformed_ops_are_deterministic_errors() {
        let mut kv = KvStore::new();
        let r = kv.apply(&Operation::Put { key: String::new(), value: "x".into() });
        assert_eq!(r, OpResult::Error("empty key".into()));
        assert!(kv.is_empty());
    }

    fn random_ops(seed: &[u8], count: usize) -> Vec<Operation> {
        let mut prg = Prg::new(seed);
        (0..count)
            .map(|_| {
                let key = format!("k{}", prg.below(20));
                match prg.below(4) {
                    0 => Operation::Get { key },
                    1 => Operation::Noop { payload: prg.bytes(8) },
                    2 => Operation::Put { key: String::new(), value: "bad".into() },
                    _ => Operation::Put { key, value: format!("{}", prg.next_u64()) },
                }
            })
            .collect()
    }

    #[test]
    fn replaying_random_ops_gives_identical_state() {
        let ops = random_ops(b"kv-replay", 1000);
        let (mut a, mut b) = (KvStore::new(), KvStore::new());
        let ra: Vec<_> = ops.iter().map(|o| a.apply(o)).collect();
        let rb: Vec<_> = ops.iter().map(|o| b.apply(o)).collect();
        assert_eq!(ra, rb);
        assert_eq!(a.digest(), b.digest());
        assert!(!a.is_empty());
    }
}

//! Cryptographic building blocks shared by the enclave and the replicas.
//!
//! Everything here is a pure function of its inputs. Randomness always comes
//! from an explicit [`Prg`], so a whole simulation is reproducible from its
//! seed.

mod aead;
mod prg;
mod shamir;
mod sign;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use aead::{aead_decrypt, aead_encrypt, Ciphertext, SymmetricKey};
pub use prg::Prg;
pub use shamir::{reconstruct, share_secret, FieldElement, Secret, Share, MODULUS};
pub use sign::{CryptoSuite, KeyPair, PublicKey, Signature, SigningKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid sharing parameters: f={f}, n={n}")]
    InvalidThreshold { f: usize, n: usize },
    #[error("duplicate share index {0}")]
    DuplicateIndex(u32),
    #[error("share index 0 is reserved for the secret")]
    ZeroIndex,
    #[error("expected {expected} shares, got {got}")]
    WrongShareCount { expected: usize, got: usize },
    #[error("authenticated decryption failed")]
    AuthFailure,
    #[error("malformed encoding")]
    Malformed,
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 8 bytes, big endian. Used for compact trace notes and election.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hashes a sequence of fields, each prefixed with its length so that
/// distinct field splits never collide.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_published_vector() {
        // FIPS 180-2 test vector for the empty message.
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        // "abc"
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn appending_a_zero_byte_changes_the_digest() {
        let mut prg = Prg::new(b"hash-sampling");
        for _ in 0..10_000 {
            let len = (prg.next_u64() % 64) as usize;
            let x = prg.bytes(len);
            let mut y = x.clone();
            y.push(0);
            assert_eq!(hash(&x), hash(&x));
            assert_ne!(hash(&x), hash(&y));
        }
    }

    #[test]
    fn hash_parts_is_split_sensitive() {
        assert_ne!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"a", b"bc"]));
    }
}

use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::Prg;

type HmacSha256 = Hmac<Sha256>;

/// Which signature backend a run uses.
///
/// `Sim` is a keyed-hash MAC standing in for signatures: fast and trivially
/// reproducible. Its verification key is the MAC key itself, so it only
/// models unforgeability through API visibility. `Real` is Ed25519, which is
/// deterministic and so also yields reproducible traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CryptoSuite {
    #[default]
    Sim,
    Real,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    hi: [u8; 32],
    lo: [u8; 32],
}

impl Signature {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.hi);
        out[32..].copy_from_slice(&self.lo);
        out
    }

    pub fn from_bytes(b: [u8; 64]) -> Self {
        Signature {
            hi: b[..32].try_into().unwrap(),
            lo: b[32..].try_into().unwrap(),
        }
    }

    /// Returns a copy with one bit flipped; handy for tamper tests.
    pub fn with_bit_flipped(&self, bit: usize) -> Self {
        let mut b = self.to_bytes();
        b[(bit / 8) % 64] ^= 1 << (bit % 8);
        Signature::from_bytes(b)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.hi[..6]))
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PublicKey {
    Sim([u8; 32]),
    Real([u8; 32]),
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (tag, b) = match self {
            PublicKey::Sim(b) => ("sim", b),
            PublicKey::Real(b) => ("ed25519", b),
        };
        write!(f, "PublicKey({tag}:{})", hex::encode(&b[..6]))
    }
}

impl PublicKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        match self {
            PublicKey::Sim(key) => {
                let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key size");
                mac.update(msg);
                sig.lo == [0u8; 32] && mac.verify_slice(&sig.hi).is_ok()
            }
            PublicKey::Real(bytes) => {
                let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(bytes) else {
                    return false;
                };
                let s = ed25519_dalek::Signature::from_bytes(&sig.to_bytes());
                vk.verify(msg, &s).is_ok()
            }
        }
    }
}

/// Signing capability. Not `Clone`, not serializable: it lives only inside
/// the enclave that generated it.
pub struct SigningKey(SigningInner);

enum SigningInner {
    Sim([u8; 32]),
    Real(Box<ed25519_dalek::SigningKey>),
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

impl SigningKey {
    pub fn sign(&self, msg: &[u8]) -> Signature {
        match &self.0 {
            SigningInner::Sim(key) => {
                let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key size");
                mac.update(msg);
                Signature {
                    hi: mac.finalize().into_bytes().into(),
                    lo: [0u8; 32],
                }
            }
            SigningInner::Real(sk) => Signature::from_bytes(sk.sign(msg).to_bytes()),
        }
    }
}

pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SigningKey,
}

impl KeyPair {
    pub fn generate(suite: CryptoSuite, rng: &mut Prg) -> KeyPair {
        let mut seed = [0u8; 32];
        rng.fill(&mut seed);
        match suite {
            CryptoSuite::Sim => KeyPair {
                public: PublicKey::Sim(seed),
                secret: SigningKey(SigningInner::Sim(seed)),
            },
            CryptoSuite::Real => {
                let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
                KeyPair {
                    public: PublicKey::Real(sk.verifying_key().to_bytes()),
                    secret: SigningKey(SigningInner::Real(Box::new(sk))),
                }
            }
        }
    }
}

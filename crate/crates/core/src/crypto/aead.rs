use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce};
use serde::{Deserialize, Serialize};

use super::{CryptoError, Prg};

/// 128-bit AES-GCM key.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey([u8; 16]);

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

impl SymmetricKey {
    pub fn generate(rng: &mut Prg) -> Self {
        let mut k = [0u8; 16];
        rng.fill(&mut k);
        SymmetricKey(k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ciphertext {
    pub nonce: [u8; 12],
    pub payload: Vec<u8>,
}

pub fn aead_encrypt(key: &SymmetricKey, plaintext: &[u8], rng: &mut Prg) -> Ciphertext {
    let cipher = Aes128Gcm::new(&key.0.into());
    let mut nonce = [0u8; 12];
    rng.fill(&mut nonce);
    let payload = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("AES-GCM encryption of in-memory buffers cannot fail");
    Ciphertext { nonce, payload }
}

pub fn aead_decrypt(key: &SymmetricKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes128Gcm::new(&key.0.into());
    cipher
        .decrypt(Nonce::from_slice(&ct.nonce), ct.payload.as_slice())
        .map_err(|_| CryptoError::AuthFailure)
}

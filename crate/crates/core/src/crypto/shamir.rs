//! (f+1, n) Shamir secret sharing over the Mersenne prime field 2^127 - 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CryptoError, Prg};

/// The field modulus, 2^127 - 1.
pub const MODULUS: u128 = (1u128 << 127) - 1;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct FieldElement(u128);

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp({:#x})", self.0)
    }
}

#[inline]
fn fold(x: u128) -> u128 {
    // x mod p for any u128, using 2^127 = 1 (mod p)
    let r = (x & MODULUS) + (x >> 127);
    if r >= MODULUS {
        r - MODULUS
    } else {
        r
    }
}

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    pub fn new(x: u128) -> Self {
        FieldElement(fold(x))
    }

    pub fn value(self) -> u128 {
        self.0
    }

    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    /// Rejects non-canonical encodings (values >= p).
    pub fn from_bytes(b: [u8; 16]) -> Option<Self> {
        let v = u128::from_be_bytes(b);
        (v < MODULUS).then_some(FieldElement(v))
    }

    pub fn random(rng: &mut Prg) -> Self {
        loop {
            let v = rng.next_u128() >> 1;
            if v < MODULUS {
                return FieldElement(v);
            }
        }
    }

    pub fn add(self, o: Self) -> Self {
        // both < 2^127 so the sum fits
        FieldElement(fold(self.0 + o.0))
    }

    pub fn sub(self, o: Self) -> Self {
        FieldElement(fold(self.0 + (MODULUS - o.0)))
    }

    pub fn mul(self, o: Self) -> Self {
        let (a1, a0) = (self.0 >> 64, self.0 & u64::MAX as u128);
        let (b1, b0) = (o.0 >> 64, o.0 & u64::MAX as u128);
        let high = a1 * b1; // < 2^126, weight 2^128 = 2
        let mid = a1 * b0 + a0 * b1; // < 2^128, weight 2^64
        let low = a0 * b0;
        let (mh, ml) = (mid >> 64, mid & u64::MAX as u128);
        let t1 = FieldElement(fold(high << 1));
        let t2 = FieldElement(fold(mh << 1));
        let t3 = FieldElement(fold(ml << 64));
        let t4 = FieldElement(fold(low));
        t1.add(t2).add(t3).add(t4)
    }

    pub fn pow(self, mut e: u128) -> Self {
        let mut base = self;
        let mut acc = FieldElement::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; zero maps to zero.
    pub fn inv(self) -> Self {
        self.pow(MODULUS - 2)
    }
}

/// A shared secret, sampled from `[1, p-1]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Secret(pub FieldElement);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

impl Secret {
    pub fn random(rng: &mut Prg) -> Self {
        loop {
            let e = FieldElement::random(rng);
            if e != FieldElement::ZERO {
                return Secret(e);
            }
        }
    }

    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_bytes()
    }

    pub fn digest(self) -> super::Digest {
        super::hash(&self.to_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Share {
    /// Evaluation point, the holder's replica id plus one.
    pub index: u32,
    pub value: FieldElement,
}

/// Splits `secret` into `n` shares, any `f + 1` of which reconstruct it.
pub fn share_secret(
    secret: FieldElement,
    f: usize,
    n: usize,
    rng: &mut Prg,
) -> Result<Vec<Share>, CryptoError> {
    if n == 0 || f >= n || n > u32::MAX as usize {
        return Err(CryptoError::InvalidThreshold { f, n });
    }
    let mut coeffs = Vec::with_capacity(f + 1);
    coeffs.push(secret);
    coeffs.extend((0..f).map(|_| FieldElement::random(rng)));
    Ok((1..=n as u32)
        .map(|i| {
            let x = FieldElement::new(i as u128);
            // Horner
            let value = coeffs
                .iter()
                .rev()
                .fold(FieldElement::ZERO, |acc, &c| acc.mul(x).add(c));
            Share { index: i, value }
        })
        .collect())
}

/// Lagrange interpolation at zero from exactly `f + 1` shares.
pub fn reconstruct(shares: &[Share], f: usize) -> Result<FieldElement, CryptoError> {
    if shares.len() != f + 1 {
        return Err(CryptoError::WrongShareCount {
            expected: f + 1,
            got: shares.len(),
        });
    }
    for (i, s) in shares.iter().enumerate() {
        if s.index == 0 {
            return Err(CryptoError::ZeroIndex);
        }
        if shares[..i].iter().any(|t| t.index == s.index) {
            return Err(CryptoError::DuplicateIndex(s.index));
        }
    }
    let mut acc = FieldElement::ZERO;
    for (i, si) in shares.iter().enumerate() {
        let xi = FieldElement::new(si.index as u128);
        let mut num = FieldElement::ONE;
        let mut den = FieldElement::ONE;
        for (j, sj) in shares.iter().enumerate() {
            if i == j {
                continue;
            }
            let xj = FieldElement::new(sj.index as u128);
            num = num.mul(xj);
            den = den.mul(xj.sub(xi));
        }
        acc = acc.add(si.value.mul(num).mul(den.inv()));
    }
    Ok(acc)
}

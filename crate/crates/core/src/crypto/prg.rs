use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::hash;

/// Seedable deterministic generator (ChaCha20 keyed by SHA-256 of the seed).
#[derive(Clone, Debug)]
pub struct Prg {
    inner: ChaCha20Rng,
}

impl Prg {
    pub fn new(seed: &[u8]) -> Self {
        Prg {
            inner: ChaCha20Rng::from_seed(hash(seed).0),
        }
    }

    /// Derives an independent child stream labelled by `label`.
    pub fn fork(&mut self, label: &[u8]) -> Prg {
        let mut seed = self.bytes(32);
        seed.extend_from_slice(label);
        Prg::new(&seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_u128(&mut self) -> u128 {
        ((self.inner.next_u64() as u128) << 64) | self.inner.next_u64() as u128
    }

    /// Uniform in `[0, bound)`; `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        // rejection sampling to avoid modulo bias
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    pub fn bytes(&mut self, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        self.inner.fill_bytes(&mut out);
        out
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        self.inner.fill_bytes(buf);
    }
}

impl RngCore for Prg {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

impl rand::CryptoRng for Prg {}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn same_seed_same_stream() {
        assert_eq!(Prg::new(b"s").next_u64(), Prg::new(b"s").next_u64());
    }

    #[test]
    fn extended_seed_diverges() {
        let a = Prg::new(b"seed").bytes(128);
        let b = Prg::new(b"seed\x01").bytes(128);
        assert_ne!(a, b);
    }

    #[test]
    fn low_bits_are_uniform() {
        let mut prg = Prg::new(b"chi-square");
        let mut bins = [0u64; 8];
        let draws = 100_000u64;
        for _ in 0..draws {
            bins[(prg.next_u64() % 8) as usize] += 1;
        }
        let expected = draws as f64 / 8.0;
        let stat: f64 = bins
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        let crit = ChiSquared::new(7.0).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }
}

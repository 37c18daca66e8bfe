//! Cascade information reconciliation with hash verification.
//!
//! Classic four-pass Cascade: pass `p` partitions a (seeded) permutation of the
//! key into blocks of `k₁·2^p` bits with `k₁ = ⌈0.73 / QBER⌉`. Alice discloses
//! every block parity; blocks whose parity disagrees are bisected (one
//! disclosed parity per step) to locate and flip one error. Each flip toggles
//! the parity agreement of the blocks holding that bit in all earlier passes,
//! and those are bisected in turn, smallest first.
//!
//! After the passes Alice and Bob compare a 64-bit polynomial hash of their
//! keys. On mismatch further passes run, each followed by a new hash, up to
//! `max_passes`. Every disclosed parity and hash bit counts as leakage.
//!
//! Alice is modeled as a parity oracle over `key_a`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_bits, pack_bits};
use crate::error::{invalid, Error, Result};

/// Bits disclosed by one verification hash.
pub const VERIFY_HASH_BITS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub passes: usize,
    /// Upper bound on passes including extra ones after a failed verification.
    pub max_passes: usize,
    /// First-pass block size constant, `k₁ = ⌈block_constant / QBER⌉`.
    pub block_constant: f64,
    /// Shortest key accepted.
    pub min_len: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            passes: 4,
            max_passes: 8,
            block_constant: 0.73,
            min_len: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub corrected: Vec<u8>,
    /// Parity and verification bits disclosed.
    pub leak_bits: u64,
    pub passes: usize,
    pub flips: usize,
    pub verifications: usize,
}

impl CascadeOutcome {
    /// `leak / (n · h₂(qber))`.
    pub fn efficiency(&self, qber: f64) -> f64 {
        self.leak_bits as f64 / (self.corrected.len() as f64 * super::h2(qber))
    }
}

/// Reconciles `key_b` to `key_a` with the default configuration.
pub fn cascade_correct(key_a: &[u8], key_b: &[u8], qber_estimate: f64, seed: u64) -> Result<CascadeOutcome> {
    cascade_correct_with(key_a, key_b, qber_estimate, seed, &CascadeConfig::default())
}

pub fn cascade_correct_with(
    key_a: &[u8],
    key_b: &[u8],
    qber_estimate: f64,
    seed: u64,
    cfg: &CascadeConfig,
) -> Result<CascadeOutcome> {
    let n = key_a.len();
    if key_b.len() != n {
        return Err(invalid(format!("key lengths differ: {} vs {}", n, key_b.len())));
    }
    if n < cfg.min_len {
        return Err(invalid(format!("keys need at least {} bits, got {n}", cfg.min_len)));
    }
    if !(qber_estimate > 0.0 && qber_estimate <= 0.25) {
        return Err(invalid(format!("QBER estimate {qber_estimate} outside (0, 0.25]")));
    }
    if cfg.passes == 0 || cfg.max_passes < cfg.passes {
        return Err(invalid("cascade needs 1 <= passes <= max_passes"));
    }
    check_bits("key_a", key_a)?;
    check_bits("key_b", key_b)?;

    let k1 = ((cfg.block_constant / qber_estimate).ceil() as usize).clamp(2, n);
    let mut state = Cascade::new(key_a, key_b.to_vec(), seed);
    let mut verifications = 0;

    for pass in 0..cfg.max_passes {
        let size = k1.saturating_mul(1 << pass.min(40)).min(n);
        state.run_pass(size);
        if pass + 1 >= cfg.passes {
            verifications += 1;
            if state.verify(verifications as u64) {
                return Ok(CascadeOutcome {
                    corrected: state.bob,
                    leak_bits: state.leak,
                    passes: pass + 1,
                    flips: state.flips,
                    verifications,
                });
            }
        }
    }
    Err(Error::CorrectionFailed {
        passes: cfg.max_passes,
    })
}

struct Pass {
    /// Key positions in pass order.
    order: Vec<u32>,
    /// Position in `order` of each key bit.
    slot: Vec<u32>,
    block: usize,
    /// Whether Bob's block parity currently differs from Alice's.
    odd: Vec<bool>,
}

impl Pass {
    fn block_of(&self, bit: usize) -> usize {
        self.slot[bit] as usize / self.block
    }

    fn range(&self, b: usize) -> (usize, usize) {
        let lo = b * self.block;
        (lo, (lo + self.block).min(self.order.len()))
    }
}

struct Cascade<'a> {
    alice: &'a [u8],
    bob: Vec<u8>,
    passes: Vec<Pass>,
    rng: ChaCha8Rng,
    seed: u64,
    leak: u64,
    flips: usize,
}

impl<'a> Cascade<'a> {
    fn new(alice: &'a [u8], bob: Vec<u8>, seed: u64) -> Self {
        Self {
            alice,
            bob,
            passes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            leak: 0,
            flips: 0,
        }
    }

    fn parity(key: &[u8], order: &[u32]) -> u8 {
        order.iter().fold(0u8, |acc, &i| acc ^ key[i as usize])
    }

    fn run_pass(&mut self, block: usize) {
        let n = self.bob.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        if !self.passes.is_empty() {
            order.shuffle(&mut self.rng);
        }
        let mut slot = vec![0u32; n];
        for (s, &bit) in order.iter().enumerate() {
            slot[bit as usize] = s as u32;
        }
        let blocks = n.div_ceil(block);
        let mut odd = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let chunk = &order[b * block..((b + 1) * block).min(n)];
            odd.push(Self::parity(self.alice, chunk) != Self::parity(&self.bob, chunk));
        }
        self.leak += blocks as u64;
        self.passes.push(Pass {
            order,
            slot,
            block,
            odd,
        });

        let current = self.passes.len() - 1;
        let mut queue: BTreeSet<(usize, usize)> = self.passes[current]
            .odd
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(b, _)| (current, b))
            .collect();

        // lower pass index means smaller blocks
        while let Some((p, b)) = queue.pop_first() {
            if !self.passes[p].odd[b] {
                continue;
            }
            let bit = self.bisect(p, b);
            self.bob[bit] ^= 1;
            self.flips += 1;
            for (q, pass) in self.passes.iter_mut().enumerate() {
                let qb = pass.block_of(bit);
                pass.odd[qb] = !pass.odd[qb];
                if pass.odd[qb] {
                    queue.insert((q, qb));
                }
            }
        }
    }

    /// Locates one error in an odd block of pass `p`.
    fn bisect(&mut self, p: usize, b: usize) -> usize {
        let pass = &self.passes[p];
        let (mut lo, mut hi) = pass.range(b);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let left = &pass.order[lo..mid];
            self.leak += 1;
            if Self::parity(self.alice, left) != Self::parity(&self.bob, left) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        pass.order[lo] as usize
    }

    fn verify(&mut self, round: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(round);
        let point = rng.random_range(2..POLY_PRIME);
        self.leak += VERIFY_HASH_BITS;
        poly_hash(self.alice, point) == poly_hash(&self.bob, point)
    }
}

const POLY_PRIME: u64 = u64::MAX - 58; // 2^64 - 59

/// Polynomial hash of the packed key evaluated at `point` modulo 2^64 − 59.
pub fn poly_hash(bits: &[u8], point: u64) -> u64 {
    let p = POLY_PRIME as u128;
    let x = point as u128 % p;
    let mut acc: u128 = bits.len() as u128 % p;
    for w in pack_bits(bits) {
        acc = (acc * x + (w as u128 % p)) % p;
    }
    acc as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postproc::h2;
    use rand::seq::index::sample;

    fn keys(n: usize, errors: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let mut b = a.clone();
        for i in sample(&mut rng, n, errors) {
            b[i] ^= 1;
        }
        (a, b)
    }

    #[test]
    fn identical_keys_cost_only_parities_and_hash() {
        let (a, _) = keys(4096, 0, 1);
        let out = cascade_correct(&a, &a, 0.02, 7).unwrap();
        assert_eq!(out.corrected, a);
        assert_eq!(out.flips, 0);
        let k1 = (0.73f64 / 0.02).ceil() as usize;
        let parities: u64 = (0..4).map(|p| 4096usize.div_ceil(k1 << p) as u64).sum();
        assert_eq!(out.leak_bits, parities + VERIFY_HASH_BITS);
    }

    #[test]
    fn corrects_one_percent() {
        let n = 1 << 20;
        let (a, b) = keys(n, n / 100, 2);
        let out = cascade_correct(&a, &b, 0.01, 3).unwrap();
        assert_eq!(out.corrected, a);
        let f = out.leak_bits as f64 / (n as f64 * h2(0.01));
        assert!(f <= 1.2, "efficiency {f}");
    }

    #[test]
    fn corrects_high_qber() {
        let n = 1 << 18;
        let e = 0.042;
        let (a, b) = keys(n, (n as f64 * e) as usize, 5);
        let out = cascade_correct(&a, &b, e, 6).unwrap();
        assert_eq!(out.corrected, a);
        assert!(out.efficiency(e) <= 1.25, "{}", out.efficiency(e));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (a, b) = keys(2048, 10, 1);
        assert!(cascade_correct(&a, &b[..2000], 0.01, 1).is_err());
        assert!(cascade_correct(&a[..512], &b[..512], 0.01, 1).is_err());
        assert!(cascade_correct(&a, &b, 0.0, 1).is_err());
        assert!(cascade_correct(&a, &b, 0.3, 1).is_err());
    }

    #[test]
    fn reports_failure_when_passes_exhausted() {
        // one pass with blocks far too large leaves even-weight error patterns
        let (a, b) = keys(4096, 400, 9);
        let cfg = CascadeConfig {
            passes: 1,
            max_passes: 1,
            block_constant: 0.73 * 64.0,
            ..Default::default()
        };
        assert!(matches!(
            cascade_correct_with(&a, &b, 0.1, 1, &cfg),
            Err(Error::CorrectionFailed { passes: 1 })
        ));
    }

    #[test]
    fn deterministic() {
        let (a, b) = keys(8192, 100, 4);
        assert_eq!(
            cascade_correct(&a, &b, 0.0122, 5).unwrap(),
            cascade_correct(&a, &b, 0.0122, 5).unwrap()
        );
    }

    #[test]
    fn poly_hash_separates_single_flips() {
        let (a, _) = keys(5000, 0, 3);
        let h = poly_hash(&a, 123_456_789);
        for i in [0, 63, 64, 4999] {
            let mut b = a.clone();
            b[i] ^= 1;
            assert_ne!(poly_hash(&b, 123_456_789), h);
        }
    }
}

//! Classical post-processing: Cascade reconciliation, Toeplitz privacy
//! amplification and the finite-key secure key length.

pub mod cascade;
pub mod finite_key;
pub mod toeplitz;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::protocol::Class;

pub use cascade::{cascade_correct, cascade_correct_with, CascadeConfig, CascadeOutcome};
pub use finite_key::{
    decoy_bounds, expected_block_stats, key_length, key_report, skr_curve, CurvePoint, DecoyBounds,
    KeyReport, LeakModel,
};
pub use toeplitz::toeplitz_hash;

/// Binary entropy in bits; 0 at the endpoints.
pub fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// Per-intensity counts of one post-processing block, indexed by
/// [`Class::index`]. Counts are real so that expected (model) statistics and
/// Monte Carlo tallies share one type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    /// Pulses sent.
    pub sent: [f64; 3],
    /// Matched-basis detections.
    pub sifted: [f64; 3],
    /// Matched-basis bit errors.
    pub errors: [f64; 3],
}

impl BlockStats {
    pub fn qber(&self, class: Class) -> f64 {
        let n = self.sifted[class.index()];
        if n > 0.0 {
            self.errors[class.index()] / n
        } else {
            0.0
        }
    }

    pub fn scaled(&self, factor: f64) -> BlockStats {
        let s = |a: [f64; 3]| a.map(|x| x * factor);
        BlockStats {
            sent: s(self.sent),
            sifted: s(self.sifted),
            errors: s(self.errors),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in Class::ALL {
            let i = c.index();
            if !(self.errors[i] >= 0.0 && self.errors[i] <= self.sifted[i] && self.sifted[i] <= self.sent[i]) {
                return Err(invalid(format!(
                    "{} counts violate 0 <= errors <= sifted <= sent",
                    c.name()
                )));
            }
        }
        Ok(())
    }
}

/// Security and block parameters for the key-length computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    /// Signal-state sifted bits per privacy-amplification block.
    pub block_size: u64,
    pub epsilon_sec: f64,
    pub epsilon_cor: f64,
    /// Error-correction efficiency for modeled leakage.
    pub f_ec: f64,
    /// Apply finite-sample deviations; `false` gives the asymptotic bounds.
    pub finite_size: bool,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            block_size: 1 << 20,
            epsilon_sec: 1e-10,
            epsilon_cor: 1e-15,
            f_ec: 1.14,
            finite_size: true,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(invalid("security.block_size must be positive"));
        }
        for (name, e) in [("epsilon_sec", self.epsilon_sec), ("epsilon_cor", self.epsilon_cor)] {
            if !(e > 0.0 && e < 1.0) {
                return Err(invalid(format!("security.{name} must lie in (0, 1), got {e}")));
            }
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(invalid(format!("security.f_ec must be >= 1, got {}", self.f_ec)));
        }
        Ok(())
    }
}

/// Checks that every element of a bit sequence is 0 or 1.
pub(crate) fn check_bits(name: &str, bits: &[u8]) -> Result<()> {
    match bits.iter().position(|&b| b > 1) {
        Some(i) => Err(invalid(format!("{name}[{i}] = {} is not a bit", bits[i]))),
        None => Ok(()),
    }
}

/// Packs bits LSB-first into 64-bit words.
pub(crate) fn pack_bits(bits: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (i, &b) in bits.iter().enumerate() {
        words[i / 64] |= (b as u64 & 1) << (i % 64);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_entropy() {
        assert_eq!(h2(0.0), 0.0);
        assert_eq!(h2(1.0), 0.0);
        assert!((h2(0.5) - 1.0).abs() < 1e-15);
        assert!((h2(0.01) - 0.080_793_136_2).abs() < 1e-9);
        assert!((h2(0.3) - h2(0.7)).abs() < 1e-15);
    }

    #[test]
    fn block_stats_validation() {
        let mut s = BlockStats {
            sent: [10.0, 10.0, 10.0],
            sifted: [5.0, 5.0, 5.0],
            errors: [1.0, 0.0, 2.0],
        };
        assert!(s.validate().is_ok());
        assert!((s.qber(Class::Vacuum) - 0.4).abs() < 1e-15);
        s.errors[1] = 6.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn pack_layout() {
        let mut bits = vec![0u8; 130];
        bits[0] = 1;
        bits[65] = 1;
        bits[129] = 1;
        assert_eq!(pack_bits(&bits), vec![1, 2, 2]);
        assert!(check_bits("k", &[0, 1, 2]).is_err());
    }
}

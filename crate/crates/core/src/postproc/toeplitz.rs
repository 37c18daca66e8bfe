//! Toeplitz-matrix universal hashing over GF(2).
//!
//! An `m × n` Toeplitz matrix is fixed by `n + m − 1` seed bits. Its first
//! column is `seed[0..m]` and its first row continues as `seed[m..]`, so
//! `T[i][j] = seed[i − j]` for `i ≥ j` and `seed[m − 1 + j − i]` otherwise.
//!
//! Row `i` of `T` read right to left is the window `w[i .. i + n]` of a single
//! diagonal sequence `w`, so `y_i = parity(w[i .. i + n] & reverse(key))`.
//! The window is read from one of 64 pre-shifted copies of `w` and the
//! product is a word-wise AND/XOR followed by one popcount.

use rayon::prelude::*;

use super::{check_bits, pack_bits};
use crate::error::{invalid, Result};

/// `T · key` over GF(2); returns `out_len` bits.
pub fn toeplitz_hash(key: &[u8], seed_bits: &[u8], out_len: usize) -> Result<Vec<u8>> {
    let n = key.len();
    let m = out_len;
    if m > n {
        return Err(invalid(format!("output length {m} exceeds key length {n}")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if seed_bits.len() != n + m - 1 {
        return Err(invalid(format!(
            "Toeplitz seed has {} bits, expected key length + output length - 1 = {}",
            seed_bits.len(),
            n + m - 1
        )));
    }
    check_bits("key", key)?;
    check_bits("seed", seed_bits)?;

    // diagonal sequence: w[t] = T[i][j] for t = i - j + n - 1
    let diag: Vec<u8> = (0..n + m - 1)
        .map(|t| {
            if t >= n - 1 {
                seed_bits[t + 1 - n]
            } else {
                seed_bits[m + n - 2 - t]
            }
        })
        .collect();
    let reversed: Vec<u8> = key.iter().rev().copied().collect();
    let key_words = pack_bits(&reversed);
    let nw = key_words.len();

    let base = pack_bits(&diag);
    let shifted: Vec<Vec<u64>> = (0..64).map(|s| shift_right(&base, s, nw + base.len())).collect();

    Ok((0..m)
        .into_par_iter()
        .map(|i| {
            let window = &shifted[i % 64][i / 64..i / 64 + nw];
            let acc = window
                .iter()
                .zip(&key_words)
                .fold(0u64, |acc, (w, k)| acc ^ (w & k));
            (acc.count_ones() & 1) as u8
        })
        .collect())
}

/// Bit string shifted toward index 0 by `s` bits, zero-padded to `len` words.
fn shift_right(words: &[u64], s: usize, len: usize) -> Vec<u64> {
    let mut out = vec![0u64; len];
    for (i, o) in out.iter_mut().enumerate().take(words.len()) {
        let lo = words[i] >> s;
        let hi = if s == 0 {
            0
        } else {
            words.get(i + 1).map_or(0, |w| w << (64 - s))
        };
        *o = lo | hi;
    }
    out
}

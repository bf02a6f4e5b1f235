//! Privacy amplification by binary Toeplitz hashing.
//!
//! A reconciled key of `n` bits about which `t` bits have leaked is
//! compressed to `r = n - t - s` bits, where `s` is the safety margin. The
//! compression function is a random Toeplitz matrix over GF(2), described by
//! its `n + r - 1` diagonal bits.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrivacyError {
    #[error("no secure key: safety margin s={s} must be below n - t (n={n}, t={t})")]
    SafetyViolation { n: usize, t: usize, s: usize },
    #[error("safety margin must be at least 1")]
    ZeroSafety,
    #[error("dimension mismatch: {what} is {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Output length `n - t - s`; fails when `s >= n - t`.
pub fn output_length(n: usize, t: usize, s: usize) -> Result<usize, PrivacyError> {
    match n.checked_sub(t) {
        Some(room) if s < room => Ok(room - s),
        _ => Err(PrivacyError::SafetyViolation { n, t, s }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionSpec {
    pub n: usize,
    pub t: usize,
    pub s: usize,
    pub r: usize,
}

impl CompressionSpec {
    pub fn new(n: usize, t: usize, s: usize) -> Result<Self, PrivacyError> {
        if s == 0 {
            return Err(PrivacyError::ZeroSafety);
        }
        let r = output_length(n, t, s)?;
        Ok(Self { n, t, s, r })
    }

    pub fn seed_len(&self) -> usize {
        self.n + self.r - 1
    }

    /// Upper bound on Eve's information about the output, in bits.
    pub fn eve_info_bound(&self) -> f64 {
        eve_info_bound(self.s)
    }
}

/// `2^-s / ln 2`, the generalized privacy amplification bound.
pub fn eve_info_bound(s: usize) -> f64 {
    (-(s as f64)).exp2() / std::f64::consts::LN_2
}

/// Diagonal bits of an `r x n` Toeplitz matrix: entry `(i, j)` is
/// `bits[i + j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToeplitzSeed {
    bits: BitString,
    n: usize,
    r: usize,
}

impl ToeplitzSeed {
    pub fn new(bits: BitString, n: usize, r: usize) -> Result<Self, PrivacyError> {
        let expected = (n + r).saturating_sub(1);
        if n == 0 || r == 0 || bits.len() != expected {
            return Err(PrivacyError::DimensionMismatch {
                what: "seed length",
                expected,
                got: bits.len(),
            });
        }
        Ok(Self { bits, n, r })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Result<Self, PrivacyError> {
        Self::new(BitString::random((n + r).saturating_sub(1), rng), n, r)
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_len(&self) -> usize {
        self.r
    }
}

/// Computes `G(w)`: bit `i` of the output is the parity of
/// `seed[i + j] & w[j]` over `j < n`.
pub fn compress(w: &BitString, seed: &ToeplitzSeed, r: usize) -> Result<BitString, PrivacyError> {
    if w.len() != seed.n {
        return Err(PrivacyError::DimensionMismatch {
            what: "input length",
            expected: seed.n,
            got: w.len(),
        });
    }
    if r != seed.r {
        return Err(PrivacyError::DimensionMismatch {
            what: "output length",
            expected: seed.r,
            got: r,
        });
    }
    Ok(toeplitz_product(&seed.bits, w, r))
}

/// Word-packed Toeplitz matrix-vector product. `diag` must hold at least
/// `w.len() + r - 1` bits.
pub(crate) fn toeplitz_product(diag: &BitString, w: &BitString, r: usize) -> BitString {
    let n = w.len();
    debug_assert!(diag.len() + 1 >= n + r);
    let wv = w.to_words();
    let mut dv = diag.to_words();
    // one spare word so the unaligned window read never runs off the end
    dv.push(0);
    let tail_bits = n % 64;
    let tail_mask = if tail_bits == 0 { !0u64 } else { (1u64 << tail_bits) - 1 };

    (0..r)
        .map(|row| {
            let (base, off) = (row / 64, row % 64);
            let mut acc = 0u64;
            for (k, &wk) in wv.iter().enumerate() {
                let lo = dv[base + k] >> off;
                let hi = if off == 0 { 0 } else { dv[base + k + 1] << (64 - off) };
                let mut window = lo | hi;
                if k + 1 == wv.len() {
                    window &= tail_mask;
                }
                acc ^= window & wk;
            }
            acc.count_ones() % 2 == 1
        })
        .collect()
}

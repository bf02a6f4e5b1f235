//! Bit strings used for raw, sifted and distilled key material.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single binary digit. Key material is stored one `bool` per bit.
pub type Bit = bool;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitsError {
    #[error("invalid bit character {0:?}")]
    BadChar(char),
    #[error("invalid hex payload: {0}")]
    BadHex(String),
    #[error("payload holds {available} bits, {wanted} requested")]
    TooShort { available: usize, wanted: usize },
}

/// An ordered sequence of bits.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BitString(Vec<Bit>);

impl BitString {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self(Vec::with_capacity(cap))
    }

    /// Draws `len` independent uniform bits.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| rng.random::<bool>()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<Bit> {
        self.0.get(i).copied()
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = !self.0[i];
    }

    pub fn push(&mut self, bit: Bit) {
        self.0.push(bit);
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn as_slice(&self) -> &[Bit] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Bit> {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = Bit> + '_ {
        self.0.iter().copied()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Parity of the whole string.
    pub fn parity(&self) -> Bit {
        self.count_ones() % 2 == 1
    }

    /// Parity of the bits in `range`, or `None` if the range leaves the string.
    pub fn parity_of(&self, range: Range<usize>) -> Option<Bit> {
        if range.start > range.end || range.end > self.len() {
            return None;
        }
        Some(self.0[range].iter().fold(false, |acc, &b| acc ^ b))
    }

    /// Number of positions where the two strings differ. Extra tail bits of
    /// the longer string count as differences.
    pub fn hamming(&self, other: &BitString) -> usize {
        let common = self.len().min(other.len());
        let diff = self.0[..common]
            .iter()
            .zip(&other.0[..common])
            .filter(|(a, b)| a != b)
            .count();
        diff + self.len().max(other.len()) - common
    }

    /// Bitwise exclusive-or of two equal-length strings.
    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len(), other.len(), "xor of unequal lengths");
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect())
    }

    /// Keeps the bits at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> BitString {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }

    /// Drops the bits at `indices` (any order, duplicates ignored).
    pub fn without(&self, indices: &[usize]) -> BitString {
        let mut drop = vec![false; self.len()];
        for &i in indices {
            drop[i] = true;
        }
        Self(
            self.0
                .iter()
                .zip(drop)
                .filter_map(|(&b, d)| (!d).then_some(b))
                .collect(),
        )
    }

    pub fn prefix(&self, len: usize) -> BitString {
        Self(self.0[..len].to_vec())
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    /// Bits of `byte`, most significant first.
    pub fn from_byte(byte: u8) -> BitString {
        Self((0..8).rev().map(|i| (byte >> i) & 1 == 1).collect())
    }

    /// Packs into bytes, most significant bit first, zero padded at the end.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
            })
            .collect()
    }

    /// Reads the first `len` bits from packed bytes.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<BitString, BitsError> {
        if bytes.len() * 8 < len {
            return Err(BitsError::TooShort {
                available: bytes.len() * 8,
                wanted: len,
            });
        }
        Ok(Self(
            (0..len)
                .map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1 == 1)
                .collect(),
        ))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str, len: usize) -> Result<BitString, BitsError> {
        let bytes = hex::decode(s).map_err(|e| BitsError::BadHex(e.to_string()))?;
        Self::from_bytes(&bytes, len)
    }

    /// Little-endian word packing: bit `i` lands in word `i / 64` at
    /// position `i % 64`.
    pub(crate) fn to_words(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.len().div_ceil(64)];
        for (i, &b) in self.0.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        words
    }
}

impl From<Vec<Bit>> for BitString {
    fn from(v: Vec<Bit>) -> Self {
        Self(v)
    }
}

impl FromIterator<Bit> for BitString {
    fn from_iter<I: IntoIterator<Item = Bit>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl FromStr for BitString {
    type Err = BitsError;

    /// Parses a string of `0`/`1` characters; `_` and whitespace are ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(BitsError::BadChar(other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len() <= 128 {
            write!(f, "BitString({self})")
        } else {
            write!(f, "BitString(len={}, hex={})", self.len(), self.to_hex())
        }
    }
}

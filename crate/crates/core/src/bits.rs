//! Packed bit strings for key material, payloads and ciphertext.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("bit string lengths differ ({left} vs {right})")]
pub struct LengthMismatch {
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid bit character {0:?}")]
pub struct ParseBitsError(pub char);

/// A little-endian packed bit string: bit `i` is bit `i % 64` of word `i / 64`.
///
/// Bits past `len` in the last word are always zero, so derived equality and
/// hashing compare only the logical content.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl BitString {
    pub fn new() -> BitString {
        BitString::default()
    }

    pub fn zeros(len: usize) -> BitString {
        BitString { words: vec![0; words_for(len)], len }
    }

    /// Builds a bit string from raw words, masking off anything past `len`.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> BitString {
        words.resize(words_for(len), 0);
        let mut bits = BitString { words, len };
        bits.clear_tail();
        bits
    }

    pub fn from_bools(values: &[bool]) -> BitString {
        let mut bits = BitString::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            bits.set(i, v);
        }
        bits
    }

    /// Parses a string of `0`/`1` characters, first character is bit 0.
    pub fn parse(text: &str) -> Result<BitString, ParseBitsError> {
        let mut bits = BitString::zeros(text.chars().count());
        for (i, c) in text.chars().enumerate() {
            match c {
                '0' => {}
                '1' => bits.set(i, true),
                other => return Err(ParseBitsError(other)),
            }
        }
        Ok(bits)
    }

    /// The low `len` bits of `value`, bit 0 first.
    pub fn from_u64(value: u64, len: usize) -> BitString {
        assert!(len <= 64);
        BitString::from_words(vec![value], len)
    }

    pub fn random<R: RngCore + ?Sized>(len: usize, rng: &mut R) -> BitString {
        let words = (0..words_for(len)).map(|_| rng.next_u64()).collect();
        BitString::from_words(words, len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let v = self.get(i);
        self.set(i, !v);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming_distance(&self, other: &BitString) -> Result<usize, LengthMismatch> {
        Ok(self.xor(other)?.count_ones())
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, LengthMismatch> {
        if self.len != other.len {
            return Err(LengthMismatch { left: self.len, right: other.len });
        }
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect();
        Ok(BitString { words, len: self.len })
    }

    /// Copy of bits `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> BitString {
        assert!(start + len <= self.len, "slice {start}+{len} past length {}", self.len);
        let shift = start % 64;
        let first = start / 64;
        let mut words = Vec::with_capacity(words_for(len));
        for w in 0..words_for(len) {
            let lo = self.words[first + w] >> shift;
            let hi = if shift == 0 {
                0
            } else {
                self.words.get(first + w + 1).map_or(0, |next| next << (64 - shift))
            };
            words.push(lo | hi);
        }
        BitString::from_words(words, len)
    }

    /// Appends `other` after the last bit of `self`.
    pub fn extend(&mut self, other: &BitString) {
        let shift = self.len % 64;
        if shift == 0 {
            self.words.extend_from_slice(&other.words);
        } else {
            for &w in &other.words {
                *self.words.last_mut().expect("nonzero shift implies a word") |= w << shift;
                self.words.push(w >> (64 - shift));
            }
        }
        self.len += other.len;
        self.words.truncate(words_for(self.len));
    }

    pub fn concat(parts: &[BitString]) -> BitString {
        let mut out = BitString::new();
        for p in parts {
            out.extend(p);
        }
        out
    }

    /// Splits into consecutive pieces of at most `size` bits.
    pub fn chunks(&self, size: usize) -> Vec<BitString> {
        assert!(size > 0);
        (0..self.len)
            .step_by(size)
            .map(|start| self.slice(start, size.min(self.len - start)))
            .collect()
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            write!(f, "BitString({})", self.to_bit_string())
        } else {
            write!(f, "BitString(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

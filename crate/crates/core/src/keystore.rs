//! Per-link store of ready-to-use local key.
//!
//! Both endpoints of a link hold synchronized copies of the same store; the
//! simulator keeps one logical object per link. Key bits come from the link's
//! labelled random stream: every generated bit occupies the next position of
//! that stream, and bits dropped on overflow keep their positions, so the
//! material handed out depends only on the seed and the deposit/consume
//! history. Retained material is tracked as stream segments and only
//! materialised when a block is consumed.

use alloc::collections::VecDeque;

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::LinkId;

/// 100 Mbit.
pub const DEFAULT_CAPACITY_BITS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("insufficient key: requested {requested} bits, {available} available")]
pub struct InsufficientKey {
    pub requested: u64,
    pub available: u64,
}

/// Single-use key material drawn from a store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBlock {
    pub block_id: u64,
    pub link: LinkId,
    pub bits: BitString,
}

/// Running totals for the conservation identity
/// `deposited - discarded - consumed == available`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyLedger {
    pub deposited: u64,
    pub discarded: u64,
    pub consumed: u64,
    pub blocks_issued: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepositOutcome {
    pub retained: u64,
    pub discarded: u64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: u64,
    len: u64,
}

#[derive(Debug, Clone)]
pub struct KeyStore {
    link: LinkId,
    capacity_bits: u64,
    available_bits: u64,
    next_block_id: u64,
    material: ChaCha20Rng,
    cursor: u64,
    segments: VecDeque<Segment>,
    ledger: KeyLedger,
}

impl KeyStore {
    /// Empty store whose key bits are drawn from `material`.
    pub fn new(link: LinkId, capacity_bits: u64, material: ChaCha20Rng) -> KeyStore {
        KeyStore {
            link,
            capacity_bits,
            available_bits: 0,
            next_block_id: 0,
            material,
            cursor: 0,
            segments: VecDeque::new(),
            ledger: KeyLedger::default(),
        }
    }

    pub fn link(&self) -> LinkId {
        self.link
    }

    pub fn capacity_bits(&self) -> u64 {
        self.capacity_bits
    }

    pub fn available_bits(&self) -> u64 {
        self.available_bits
    }

    /// Identifier the next consumed block will carry. Every smaller id has
    /// been issued exactly once.
    pub fn next_block_id(&self) -> u64 {
        self.next_block_id
    }

    pub fn ledger(&self) -> KeyLedger {
        self.ledger
    }

    pub fn fill_fraction(&self) -> f64 {
        if self.capacity_bits == 0 {
            return 0.0;
        }
        self.available_bits as f64 / self.capacity_bits as f64
    }

    /// Adds freshly generated key; whatever does not fit is discarded.
    pub fn deposit(&mut self, num_bits: u64) -> DepositOutcome {
        let room = self.capacity_bits - self.available_bits;
        let retained = num_bits.min(room);
        let discarded = num_bits - retained;
        if retained > 0 {
            match self.segments.back_mut() {
                Some(last) if last.start + last.len == self.cursor => last.len += retained,
                _ => self.segments.push_back(Segment { start: self.cursor, len: retained }),
            }
        }
        self.cursor += num_bits;
        self.available_bits += retained;
        self.ledger.deposited += num_bits;
        self.ledger.discarded += discarded;
        DepositOutcome { retained, discarded }
    }

    /// Removes exactly `num_bits` of the oldest key as a fresh block, or
    /// nothing at all.
    pub fn consume(&mut self, num_bits: u64) -> Result<KeyBlock, InsufficientKey> {
        assert!(num_bits > 0, "consume of zero bits");
        if num_bits > self.available_bits {
            return Err(InsufficientKey { requested: num_bits, available: self.available_bits });
        }
        let mut remaining = num_bits;
        let mut bits = BitString::new();
        while remaining > 0 {
            let seg = self.segments.front_mut().expect("available bits are backed by segments");
            let take = remaining.min(seg.len);
            bits.extend(&read_stream(&mut self.material, seg.start, take));
            seg.start += take;
            seg.len -= take;
            if seg.len == 0 {
                self.segments.pop_front();
            }
            remaining -= take;
        }
        self.available_bits -= num_bits;
        self.ledger.consumed += num_bits;
        self.ledger.blocks_issued += 1;
        let block_id = self.next_block_id;
        self.next_block_id += 1;
        Ok(KeyBlock { block_id, link: self.link, bits })
    }
}

/// Bits `[start, start + len)` of the stream, independent of where the
/// generator currently stands.
fn read_stream(rng: &mut ChaCha20Rng, start: u64, len: u64) -> BitString {
    let first_word = start / 64;
    let offset = (start % 64) as usize;
    let n_words = (offset as u64 + len).div_ceil(64);
    rng.set_word_pos(u128::from(first_word) * 2);
    let words = (0..n_words).map(|_| rng.next_u64()).collect();
    let len = usize::try_from(len).expect("block length fits in memory");
    let raw = BitString::from_words(words, n_words as usize * 64);
    raw.slice(offset, len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::collections::BTreeSet;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn store(capacity: u64) -> KeyStore {
        KeyStore::new(LinkId(0), capacity, rng::stream(1, "keystore/test"))
    }

    #[test]
    fn deposit_below_capacity() {
        let mut s = store(1000);
        assert_eq!(s.deposit(600), DepositOutcome { retained: 600, discarded: 0 });
        assert_eq!(s.available_bits(), 600);
    }

    #[test]
    fn deposit_saturates() {
        let mut s = store(1000);
        s.deposit(800);
        assert_eq!(s.deposit(600), DepositOutcome { retained: 200, discarded: 400 });
        assert_eq!(s.available_bits(), 1000);
        assert_eq!(s.ledger().discarded, 400);
    }

    #[test]
    fn deposit_zero_on_full_store() {
        let mut s = store(1000);
        s.deposit(1000);
        assert_eq!(s.deposit(0), DepositOutcome { retained: 0, discarded: 0 });
        assert_eq!(s.available_bits(), 1000);
        assert_eq!(s.fill_fraction(), 1.0);
    }

    #[test]
    fn consume_exact_amount() {
        let mut s = store(10_000);
        s.deposit(1000);
        let block = s.consume(256).unwrap();
        assert_eq!(block.bits.len(), 256);
        assert_eq!(s.available_bits(), 744);
    }

    #[test]
    fn failed_consume_is_atomic() {
        let mut s = store(10_000);
        s.deposit(100);
        assert_eq!(s.consume(256), Err(InsufficientKey { requested: 256, available: 100 }));
        assert_eq!(s.available_bits(), 100);
        assert_eq!(s.ledger().consumed, 0);
    }

    #[test]
    fn successive_blocks_are_distinct() {
        let mut s = store(10_000);
        s.deposit(256);
        let a = s.consume(128).unwrap();
        let b = s.consume(128).unwrap();
        assert_ne!(a.block_id, b.block_id);
        assert_eq!(s.available_bits(), 0);
    }

    #[test]
    fn fill_fraction_values() {
        let mut s = store(1000);
        assert_eq!(s.fill_fraction(), 0.0);
        s.deposit(250);
        assert_eq!(s.fill_fraction(), 0.25);
    }

    #[test]
    fn material_is_the_stream_in_order() {
        // One 512-bit block equals two 256-bit blocks drawn from a twin store.
        let mut a = store(10_000);
        let mut b = store(10_000);
        a.deposit(512);
        b.deposit(512);
        let whole = a.consume(512).unwrap().bits;
        let first = b.consume(256).unwrap().bits;
        let second = b.consume(256).unwrap().bits;
        assert_eq!(whole, BitString::concat(&[first, second]));
    }

    #[test]
    fn overflow_bits_skip_stream_positions() {
        // Store with room for 100: the 50 discarded bits are never handed out.
        let mut a = store(100);
        a.deposit(150);
        let _ = a.consume(100).unwrap();
        a.deposit(10);
        let after = a.consume(10).unwrap().bits;

        let mut big = store(1000);
        big.deposit(160);
        let all = big.consume(160).unwrap().bits;
        assert_eq!(after, all.slice(150, 10));
    }

    #[test]
    fn seeds_change_material() {
        let mut a = KeyStore::new(LinkId(0), 1000, rng::stream(1, "k"));
        let mut b = KeyStore::new(LinkId(0), 1000, rng::stream(2, "k"));
        a.deposit(256);
        b.deposit(256);
        assert_ne!(a.consume(256).unwrap().bits, b.consume(256).unwrap().bits);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Deposit(u64),
        Consume(u64),
    }

    fn arb_op() -> impl Strategy<Value = Op> {
        prop_oneof![(0u64..3000).prop_map(Op::Deposit), (1u64..2000).prop_map(Op::Consume)]
    }

    proptest! {
        #[test]
        fn conservation_and_single_use(ops in proptest::collection::vec(arb_op(), 1..60)) {
            let mut s = store(5000);
            let mut ids = BTreeSet::new();
            let mut issued = Vec::new();
            for op in ops {
                match op {
                    Op::Deposit(n) => { s.deposit(n); }
                    Op::Consume(n) => {
                        let before = s.available_bits();
                        match s.consume(n) {
                            Ok(block) => {
                                prop_assert_eq!(block.bits.len() as u64, n);
                                prop_assert!(ids.insert(block.block_id));
                                issued.push(block.block_id);
                            }
                            Err(_) => prop_assert_eq!(s.available_bits(), before),
                        }
                    }
                }
                let l = s.ledger();
                prop_assert!(s.available_bits() <= s.capacity_bits());
                prop_assert_eq!(l.deposited - l.discarded - l.consumed, s.available_bits());
            }
            prop_assert_eq!(issued.len() as u64, s.next_block_id());
        }
    }
}

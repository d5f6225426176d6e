//! Point-to-point link layer between adjacent QBB nodes.
//!
//! Each message is cut into fragments of at most `max_frame_payload_bits`.
//! Every fragment is carried in its own frame and costs one fresh key block
//! of `fragment_len + auth_tag_key_bits` bits: the first part is the
//! one-time pad, the remainder masks the authentication tag. Control-plane
//! messages are authenticated only and cost `auth_tag_key_bits` per frame.
//!
//! The tag is a placeholder for a Wegman–Carter MAC: a fixed polynomial
//! digest over the header and ciphertext, masked with the tag key bits. It
//! detects any single-bit change but is not a secure MAC.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitString, LengthMismatch};
use crate::keystore::{InsufficientKey, KeyBlock, KeyStore};
use crate::time::SimTime;
use crate::{CircuitId, LinkId, NodeId};

pub const DEFAULT_AUTH_TAG_KEY_BITS: usize = 128;
pub const DEFAULT_MAX_FRAME_PAYLOAD_BITS: usize = 8192;
pub const DEFAULT_WINDOW: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Q3pConfig {
    pub max_frame_payload_bits: usize,
    pub auth_tag_key_bits: usize,
}

impl Default for Q3pConfig {
    fn default() -> Self {
        Q3pConfig {
            max_frame_payload_bits: DEFAULT_MAX_FRAME_PAYLOAD_BITS,
            auth_tag_key_bits: DEFAULT_AUTH_TAG_KEY_BITS,
        }
    }
}

impl Q3pConfig {
    pub fn fragments_for(&self, payload_bits: usize) -> usize {
        payload_bits.div_ceil(self.max_frame_payload_bits)
    }

    /// Key bits an encrypted message of `payload_bits` consumes on one hop.
    pub fn message_key_cost(&self, payload_bits: usize) -> u64 {
        (payload_bits + self.fragments_for(payload_bits) * self.auth_tag_key_bits) as u64
    }

    /// Authentication key spent per payload bit, on top of the pad itself.
    pub fn auth_overhead_fraction(&self, payload_bits: usize) -> f64 {
        (self.fragments_for(payload_bits) * self.auth_tag_key_bits) as f64 / payload_bits as f64
    }
}

/// Virtual-circuit label carried by a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameCircuit {
    Control,
    /// `epoch` increments every time the circuit is moved to a new path.
    Data { circuit: CircuitId, epoch: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Q3pFrame {
    pub frame_id: u64,
    pub link: LinkId,
    pub circuit: FrameCircuit,
    /// Upper-layer sequence number of the message this frame belongs to.
    pub sequence: u64,
    pub fragment_index: u32,
    pub fragment_count: u32,
    /// False for authenticated-only control frames, whose `ciphertext` is
    /// the plaintext.
    pub encrypted: bool,
    pub ciphertext: BitString,
    pub auth_tag: BitString,
    pub key_block_ref: u64,
}

impl Q3pFrame {
    pub fn key_bits(&self) -> u64 {
        let pad = if self.encrypted { self.ciphertext.len() } else { 0 };
        (pad + self.auth_tag.len()) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Q3pError {
    #[error(transparent)]
    InsufficientKey(#[from] InsufficientKey),
    #[error(transparent)]
    LengthMismatch(#[from] LengthMismatch),
    #[error("authentication failure on frame {frame_id}")]
    AuthFailure { frame_id: u64 },
    #[error("frame {frame_id} references key block {expected}, got {got}")]
    KeyMismatch { frame_id: u64, expected: u64, got: u64 },
    #[error("no key block {0} held for this channel")]
    UnknownKeyBlock(u64),
    #[error("frame {frame_id} arrived after frame {last}")]
    OutOfOrder { frame_id: u64, last: u64 },
    #[error("fragment {index} of {count} does not continue the pending message")]
    Reassembly { index: u32, count: u32 },
}

/// One-time pad: bitwise XOR of equal-length strings.
pub fn otp_encrypt(plaintext: &BitString, key: &BitString) -> Result<BitString, LengthMismatch> {
    plaintext.xor(key)
}

const MERSENNE_61: u64 = (1 << 61) - 1;
const LANE_POINTS: [u64; 4] = [
    0x0123_4567_89ab_cdef % MERSENNE_61,
    0x0fed_cba9_8765_4321 % MERSENNE_61,
    0x1357_9bdf_0246_8ace % MERSENNE_61,
    0x0bad_c0de_dead_beef % MERSENNE_61,
];

fn mul_mod(a: u64, b: u64) -> u64 {
    ((u128::from(a) * u128::from(b)) % u128::from(MERSENNE_61)) as u64
}

fn poly_lane(point: u64, chunks: &[u64]) -> u64 {
    chunks.iter().fold(0u64, |h, &c| (mul_mod(h, point) + c) % MERSENNE_61)
}

fn tag_digest(frame: &Q3pFrame, width: usize) -> BitString {
    let (circuit, epoch) = match frame.circuit {
        FrameCircuit::Control => (u64::MAX, u64::MAX),
        FrameCircuit::Data { circuit, epoch } => (u64::from(circuit.0), u64::from(epoch)),
    };
    let header = [
        frame.frame_id,
        u64::from(frame.link.0),
        circuit,
        epoch,
        frame.sequence,
        u64::from(frame.fragment_index),
        u64::from(frame.fragment_count),
        u64::from(frame.encrypted),
        frame.ciphertext.len() as u64,
    ];
    // 32-bit chunks stay below the modulus, so a change in any one input bit
    // changes every lane.
    let mut chunks = Vec::with_capacity(2 * (header.len() + frame.ciphertext.words().len()));
    for w in header.iter().chain(frame.ciphertext.words()) {
        chunks.push(w & 0xffff_ffff);
        chunks.push(w >> 32);
    }
    let lanes = width.div_ceil(64);
    let words = (0..lanes)
        .map(|i| {
            let point = LANE_POINTS[i % LANE_POINTS.len()] + (i / LANE_POINTS.len()) as u64;
            poly_lane(point, &chunks)
        })
        .collect();
    BitString::from_words(words, width)
}

fn compute_tag(frame: &Q3pFrame, tag_key: &BitString) -> BitString {
    tag_digest(frame, tag_key.len()).xor(tag_key).expect("digest has tag-key width")
}

/// Splits `payload` into frames, consuming key for every fragment.
///
/// All-or-nothing: if the store cannot pay for every fragment, nothing is
/// consumed. The blocks used are recorded in `receiver_keys`, the receiving
/// endpoint's copy of the synchronized store.
pub fn send_message(
    channel: &mut Channel,
    circuit: FrameCircuit,
    sequence: u64,
    payload: &BitString,
    store: &mut KeyStore,
    cfg: &Q3pConfig,
) -> Result<Vec<Q3pFrame>, InsufficientKey> {
    assert!(!payload.is_empty(), "q3p message payload must be nonempty");
    let need = cfg.message_key_cost(payload.len());
    if store.available_bits() < need {
        return Err(InsufficientKey { requested: need, available: store.available_bits() });
    }
    let fragments = payload.chunks(cfg.max_frame_payload_bits);
    let count = fragments.len() as u32;
    let mut frames = Vec::with_capacity(fragments.len());
    for (index, fragment) in fragments.into_iter().enumerate() {
        let block = store.consume((fragment.len() + cfg.auth_tag_key_bits) as u64)?;
        let pad = block.bits.slice(0, fragment.len());
        let tag_key = block.bits.slice(fragment.len(), cfg.auth_tag_key_bits);
        let mut frame = Q3pFrame {
            frame_id: channel.take_frame_id(),
            link: channel.link,
            circuit,
            sequence,
            fragment_index: index as u32,
            fragment_count: count,
            encrypted: true,
            ciphertext: otp_encrypt(&fragment, &pad).expect("pad has fragment width"),
            auth_tag: BitString::new(),
            key_block_ref: block.block_id,
        };
        frame.auth_tag = compute_tag(&frame, &tag_key);
        channel.stats.data_frames += 1;
        channel.stats.otp_bits += fragment.len() as u64;
        channel.receiver_keys.insert(block.block_id, block);
        frames.push(frame);
    }
    Ok(frames)
}

/// Builds an authenticated, unencrypted control frame.
pub fn send_control(
    channel: &mut Channel,
    sequence: u64,
    payload: &BitString,
    store: &mut KeyStore,
    cfg: &Q3pConfig,
) -> Result<Q3pFrame, InsufficientKey> {
    assert!(payload.len() <= cfg.max_frame_payload_bits, "control messages fit in one frame");
    let block = store.consume(cfg.auth_tag_key_bits as u64)?;
    let mut frame = Q3pFrame {
        frame_id: channel.take_frame_id(),
        link: channel.link,
        circuit: FrameCircuit::Control,
        sequence,
        fragment_index: 0,
        fragment_count: 1,
        encrypted: false,
        ciphertext: payload.clone(),
        auth_tag: BitString::new(),
        key_block_ref: block.block_id,
    };
    frame.auth_tag = compute_tag(&frame, &block.bits);
    channel.stats.control_frames += 1;
    channel.receiver_keys.insert(block.block_id, block);
    Ok(frame)
}

/// Checks the tag and strips the pad from one frame.
pub fn receive_frame(frame: &Q3pFrame, key: &KeyBlock) -> Result<BitString, Q3pError> {
    if key.block_id != frame.key_block_ref {
        return Err(Q3pError::KeyMismatch {
            frame_id: frame.frame_id,
            expected: frame.key_block_ref,
            got: key.block_id,
        });
    }
    let pad_len = if frame.encrypted { frame.ciphertext.len() } else { 0 };
    if key.bits.len() != pad_len + frame.auth_tag.len() {
        return Err(Q3pError::AuthFailure { frame_id: frame.frame_id });
    }
    let tag_key = key.bits.slice(pad_len, frame.auth_tag.len());
    if compute_tag(frame, &tag_key) != frame.auth_tag {
        return Err(Q3pError::AuthFailure { frame_id: frame.frame_id });
    }
    if frame.encrypted {
        Ok(otp_encrypt(&frame.ciphertext, &key.bits.slice(0, pad_len))?)
    } else {
        Ok(frame.ciphertext.clone())
    }
}

/// A fully reassembled message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub circuit: FrameCircuit,
    pub sequence: u64,
    pub payload: BitString,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub data_frames: u64,
    pub control_frames: u64,
    pub otp_bits: u64,
    pub auth_failures: u64,
}

/// One direction of the classical channel of a link: a lossless FIFO with a
/// fixed one-way latency and a static flow-control window.
#[derive(Debug, Clone)]
pub struct Channel {
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub latency: SimTime,
    pub window: u32,
    in_flight: u32,
    next_frame_id: u64,
    backlog: VecDeque<Q3pFrame>,
    receiver_keys: BTreeMap<u64, KeyBlock>,
    last_received: Option<u64>,
    pending: Vec<BitString>,
    pub stats: ChannelStats,
}

impl Channel {
    pub fn new(link: LinkId, from: NodeId, to: NodeId, latency: SimTime, window: u32) -> Channel {
        assert!(window >= 1);
        Channel {
            link,
            from,
            to,
            latency,
            window,
            in_flight: 0,
            next_frame_id: 0,
            backlog: VecDeque::new(),
            receiver_keys: BTreeMap::new(),
            last_received: None,
            pending: Vec::new(),
            stats: ChannelStats::default(),
        }
    }

    fn take_frame_id(&mut self) -> u64 {
        let id = self.next_frame_id;
        self.next_frame_id += 1;
        id
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    pub fn backlog_len(&self) -> usize {
        self.backlog.len()
    }

    /// Queues frames behind the flow-control window.
    pub fn enqueue(&mut self, frames: Vec<Q3pFrame>) {
        self.backlog.extend(frames);
    }

    /// Frames allowed onto the wire now, in order.
    pub fn release(&mut self) -> Vec<Q3pFrame> {
        let mut out = Vec::new();
        while self.in_flight < self.window {
            match self.backlog.pop_front() {
                Some(frame) => {
                    self.in_flight += 1;
                    out.push(frame);
                }
                None => break,
            }
        }
        out
    }

    /// Receiver side: consumes the matching key copy, verifies and
    /// decrypts, and returns the message once its last fragment is in.
    ///
    /// The frame leaves the window whether or not it verifies.
    pub fn accept(&mut self, frame: &Q3pFrame) -> Result<Option<Delivered>, Q3pError> {
        self.in_flight = self.in_flight.saturating_sub(1);
        if let Some(last) = self.last_received {
            if frame.frame_id <= last {
                return Err(Q3pError::OutOfOrder { frame_id: frame.frame_id, last });
            }
        }
        self.last_received = Some(frame.frame_id);
        let key = self
            .receiver_keys
            .remove(&frame.key_block_ref)
            .ok_or(Q3pError::UnknownKeyBlock(frame.key_block_ref))?;
        let plaintext = match receive_frame(frame, &key) {
            Ok(p) => p,
            Err(e) => {
                self.stats.auth_failures += 1;
                self.pending.clear();
                return Err(e);
            }
        };
        if frame.fragment_index as usize != self.pending.len() {
            self.pending.clear();
            return Err(Q3pError::Reassembly { index: frame.fragment_index, count: frame.fragment_count });
        }
        self.pending.push(plaintext);
        if frame.fragment_index + 1 < frame.fragment_count {
            return Ok(None);
        }
        let payload = BitString::concat(&self.pending);
        self.pending.clear();
        Ok(Some(Delivered { circuit: frame.circuit, sequence: frame.sequence, payload }))
    }

    /// Key copies held for frames that have not arrived yet.
    pub fn held_key_blocks(&self) -> usize {
        self.receiver_keys.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::collections::BTreeSet;
    use rand_chacha::rand_core::RngCore;

    fn setup(available: u64) -> (Channel, KeyStore) {
        let ch = Channel::new(LinkId(3), NodeId(0), NodeId(1), SimTime(1000), 4);
        let mut store = KeyStore::new(LinkId(3), 1 << 40, rng::stream(9, "keystore/q3p"));
        store.deposit(available);
        (ch, store)
    }

    fn data() -> FrameCircuit {
        FrameCircuit::Data { circuit: CircuitId(1), epoch: 0 }
    }

    fn deliver_all(ch: &mut Channel, frames: &[Q3pFrame]) -> Option<Delivered> {
        let mut out = None;
        for f in frames {
            out = ch.accept(f).unwrap();
        }
        out
    }

    #[test]
    fn xor_identity_and_cancellation() {
        let m = BitString::parse("1010").unwrap();
        assert_eq!(otp_encrypt(&m, &BitString::parse("0000").unwrap()).unwrap(), m);
        assert_eq!(otp_encrypt(&m, &m).unwrap(), BitString::parse("0000").unwrap());
        assert!(otp_encrypt(&m, &BitString::zeros(5)).is_err());
    }

    #[test]
    fn xor_involution_exhaustive_4bit() {
        let mut cases = 0;
        for m in 0u64..16 {
            for k in 0u64..16 {
                let mb = BitString::from_u64(m, 4);
                let kb = BitString::from_u64(k, 4);
                let twice = otp_encrypt(&otp_encrypt(&mb, &kb).unwrap(), &kb).unwrap();
                assert_eq!(twice, mb);
                cases += 1;
            }
        }
        assert_eq!(cases, 256);
    }

    #[test]
    fn fragmentation_accounting() {
        let cfg = Q3pConfig { max_frame_payload_bits: 1024, auth_tag_key_bits: 128 };
        let (mut ch, mut store) = setup(10_000);
        let payload = BitString::random(2048, &mut rng::stream(1, "payload"));
        let frames = send_message(&mut ch, data(), 0, &payload, &mut store, &cfg).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(store.ledger().consumed, 2048 + 2 * 128);
        assert_eq!(frames.iter().map(Q3pFrame::key_bits).sum::<u64>(), 2304);
    }

    #[test]
    fn boundary_payload_is_one_frame() {
        let cfg = Q3pConfig { max_frame_payload_bits: 1024, auth_tag_key_bits: 128 };
        let (mut ch, mut store) = setup(10_000);
        let payload = BitString::zeros(1024);
        let frames = send_message(&mut ch, data(), 0, &payload, &mut store, &cfg).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].fragment_count, 1);
    }

    #[test]
    fn insufficient_key_is_atomic() {
        let cfg = Q3pConfig::default();
        let (mut ch, mut store) = setup(99);
        let payload = BitString::zeros(100);
        let err = send_message(&mut ch, data(), 0, &payload, &mut store, &cfg).unwrap_err();
        assert_eq!(err.requested, 228);
        assert_eq!(store.available_bits(), 99);
        assert_eq!(ch.held_key_blocks(), 0);
    }

    #[test]
    fn single_fragment_round_trip() {
        let cfg = Q3pConfig::default();
        let (mut tx, mut store) = setup(10_000);
        let payload = BitString::parse("110010111").unwrap();
        let frames = send_message(&mut tx, data(), 7, &payload, &mut store, &cfg).unwrap();
        let got = deliver_all(&mut tx, &frames).unwrap();
        assert_eq!(got.payload, payload);
        assert_eq!(got.sequence, 7);
    }

    #[test]
    fn random_round_trips() {
        let cfg = Q3pConfig { max_frame_payload_bits: 256, auth_tag_key_bits: 128 };
        let (mut ch, mut store) = setup(1 << 30);
        let mut rng = rng::stream(5, "q3p/roundtrip");
        let mut block_refs = BTreeSet::new();
        let mut last_frame = None;
        for seq in 0..1000u64 {
            let len = 1 + (rng.next_u32() % 1500) as usize;
            let payload = BitString::random(len, &mut rng);
            let frames = send_message(&mut ch, data(), seq, &payload, &mut store, &cfg).unwrap();
            for f in &frames {
                assert!(block_refs.insert(f.key_block_ref));
                assert!(last_frame.map_or(true, |l| f.frame_id > l));
                last_frame = Some(f.frame_id);
                assert!(f.ciphertext.len() <= cfg.max_frame_payload_bits);
                assert!(f.fragment_index < f.fragment_count);
            }
            // ciphertext differs from plaintext exactly where the pad has ones
            let pad_ones: usize = frames
                .iter()
                .map(|f| {
                    let key = &ch.receiver_keys[&f.key_block_ref];
                    key.bits.slice(0, f.ciphertext.len()).count_ones()
                })
                .sum();
            let cipher = BitString::concat(&frames.iter().map(|f| f.ciphertext.clone()).collect::<Vec<_>>());
            assert_eq!(cipher.hamming_distance(&payload).unwrap(), pad_ones);
            let got = deliver_all(&mut ch, &frames).unwrap();
            assert_eq!(got.payload, payload);
        }
        let l = store.ledger();
        assert_eq!(l.consumed, ch.stats.otp_bits + ch.stats.data_frames * 128);
    }

    #[test]
    fn single_bit_tamper_detected_everywhere() {
        let cfg = Q3pConfig::default();
        let (mut ch, mut store) = setup(1 << 20);
        let payload = BitString::random(300, &mut rng::stream(2, "tamper"));
        for bit in 0..300 {
            let frames = send_message(&mut ch, data(), bit as u64, &payload, &mut store, &cfg).unwrap();
            let mut bad = frames[0].clone();
            bad.ciphertext.flip(bit);
            assert_eq!(ch.accept(&bad), Err(Q3pError::AuthFailure { frame_id: bad.frame_id }));
        }
        assert_eq!(ch.stats.auth_failures, 300);
    }

    #[test]
    fn header_tamper_detected() {
        let cfg = Q3pConfig::default();
        let (mut ch, mut store) = setup(1 << 20);
        let payload = BitString::random(64, &mut rng::stream(3, "tamper"));
        let frames = send_message(&mut ch, data(), 4, &payload, &mut store, &cfg).unwrap();
        let key = ch.receiver_keys[&frames[0].key_block_ref].clone();
        let mut bad = frames[0].clone();
        bad.sequence = 5;
        assert!(matches!(receive_frame(&bad, &key), Err(Q3pError::AuthFailure { .. })));
        assert!(receive_frame(&frames[0], &key).is_ok());
    }

    #[test]
    fn control_frames_cost_only_the_tag() {
        let cfg = Q3pConfig::default();
        let (mut ch, mut store) = setup(1000);
        let msg = BitString::from_u64(0xdead_beef, 64);
        let frame = send_control(&mut ch, 0, &msg, &mut store, &cfg).unwrap();
        assert_eq!(store.ledger().consumed, 128);
        assert!(!frame.encrypted);
        let got = ch.accept(&frame).unwrap().unwrap();
        assert_eq!(got.payload, msg);
        assert_eq!(got.circuit, FrameCircuit::Control);
    }

    #[test]
    fn window_limits_in_flight() {
        let cfg = Q3pConfig { max_frame_payload_bits: 64, auth_tag_key_bits: 128 };
        let (mut ch, mut store) = setup(1 << 20);
        let payload = BitString::zeros(64 * 10);
        let frames = send_message(&mut ch, data(), 0, &payload, &mut store, &cfg).unwrap();
        ch.enqueue(frames);
        let first = ch.release();
        assert_eq!(first.len(), 4);
        assert_eq!(ch.in_flight(), 4);
        assert!(ch.release().is_empty());
        for f in &first {
            ch.accept(f).unwrap();
        }
        assert_eq!(ch.in_flight(), 0);
        assert_eq!(ch.release().len(), 4);
        assert_eq!(ch.backlog_len(), 2);
    }

    #[test]
    fn wrong_key_block_rejected() {
        let cfg = Q3pConfig::default();
        let (mut ch, mut store) = setup(10_000);
        let a = send_message(&mut ch, data(), 0, &BitString::zeros(10), &mut store, &cfg).unwrap();
        let b = send_message(&mut ch, data(), 1, &BitString::zeros(10), &mut store, &cfg).unwrap();
        let kb = ch.receiver_keys[&b[0].key_block_ref].clone();
        assert!(matches!(receive_frame(&a[0], &kb), Err(Q3pError::KeyMismatch { .. })));
    }

    #[test]
    fn overhead_fraction_for_default_frame() {
        let cfg = Q3pConfig::default();
        assert_eq!(cfg.auth_overhead_fraction(8192), 0.015625);
        assert_eq!(cfg.message_key_cost(256), 384);
    }
}

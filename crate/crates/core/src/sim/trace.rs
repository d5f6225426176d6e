//! Event trace records, one per line in `trace.jsonl`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// How much of the run is recorded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    #[default]
    None,
    /// Circuit lifecycle, deliveries, link state and routing snapshots.
    Circuit,
    /// Everything above plus one record per transmitted frame.
    Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub dest: String,
    pub cost: f64,
    pub path: Vec<String>,
    pub next_hops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    /// A frame put on a link. Plaintext never appears here.
    Frame {
        time: f64,
        link: String,
        from: String,
        to: String,
        /// `control` or the circuit label `vcN/eM`.
        circuit: String,
        sequence: u64,
        frame_id: u64,
        fragment: u32,
        fragments: u32,
        encrypted: bool,
        size_bits: usize,
        key_bits: u64,
        block_id: u64,
        ciphertext_digest: String,
    },
    Circuit {
        time: f64,
        circuit: String,
        event: String,
        detail: String,
    },
    Delivery {
        time: f64,
        circuit: String,
        sequence: u64,
        bits: usize,
        payload_digest: String,
    },
    Link {
        time: f64,
        link: String,
        status: String,
        effective_rate: f64,
        qber: f64,
        num_quantum_channels: u32,
        cause: String,
    },
    Routes {
        time: f64,
        node: String,
        routes: Vec<RouteEntry>,
    },
}

impl TraceRecord {
    pub fn time(&self) -> f64 {
        match self {
            TraceRecord::Frame { time, .. }
            | TraceRecord::Circuit { time, .. }
            | TraceRecord::Delivery { time, .. }
            | TraceRecord::Link { time, .. }
            | TraceRecord::Routes { time, .. } => *time,
        }
    }
}

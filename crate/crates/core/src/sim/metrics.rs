//! Run summary written to `metrics.json`.
//!
//! Every counter is always present, zero or not, so consumers can rely on
//! a fixed shape.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::forwarding::ServiceClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    pub duration: f64,
    pub links: Vec<LinkMetrics>,
    pub circuits: Vec<CircuitMetrics>,
    pub network: NetworkMetrics,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub id: String,
    pub a: String,
    pub b: String,
    pub capacity_bits: u64,
    pub initial_bits: u64,
    /// Bits produced by key generation during the run.
    pub key_generated: u64,
    /// Everything that entered the store, including `initial_bits`.
    pub key_deposited: u64,
    pub key_discarded: u64,
    pub key_consumed: u64,
    pub key_available: u64,
    /// `key_generated / duration`.
    pub mean_generation_rate: f64,
    pub blocks_issued: u64,
    pub data_frames: u64,
    pub control_frames: u64,
    /// Pad bits spent on payload.
    pub otp_bits: u64,
    /// Key spent by data frames, pads plus tags.
    pub data_key_bits: u64,
    pub control_key_bits: u64,
    /// Control frames still waiting for key at the end.
    pub control_backlog: u64,
    pub auth_failures: u64,
    pub stale_frames: u64,
    pub downtime: f64,
    pub final_status: String,
    pub final_effective_rate: f64,
    pub final_reserved_rate: f64,
    pub final_qber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerouteRecord {
    pub time: f64,
    pub failed_link: String,
    pub new_path: Vec<String>,
    /// First delivery on the new path.
    pub resumed_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitMetrics {
    pub id: String,
    pub demand: usize,
    pub ingress: String,
    pub egress: String,
    pub source_app: String,
    pub dest_port: u16,
    pub service: ServiceClass,
    pub final_state: String,
    pub requested_at: f64,
    pub established_at: Option<f64>,
    pub establishment_latency: Option<f64>,
    pub path: Vec<String>,
    pub hops: usize,
    /// Payload rate of the contract; zero for best effort.
    pub contracted_rate: f64,
    /// Per-link reservation including authentication overhead.
    pub reserved_rate: f64,
    pub emitted_packets: u64,
    pub delivered_packets: u64,
    pub delivered_bits: u64,
    /// Delivered bits over the time the circuit was up.
    pub delivered_rate: f64,
    /// Policed requests plus packets abandoned at teardown.
    pub drops: u64,
    pub policed_drops: u64,
    pub abandoned_packets: u64,
    pub stale_drops: u64,
    pub duplicate_drops: u64,
    /// Deliveries whose payload differed from what the ingress generated.
    pub fidelity_violations: u64,
    pub in_flight_at_end: u64,
    pub reroute_count: usize,
    pub reroutes: Vec<RerouteRecord>,
    pub closed_at: Option<f64>,
    pub teardown_reason: Option<String>,
    pub notifications: Vec<String>,
    /// Hash over every delivered payload, in delivery order.
    pub delivered_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub demand: usize,
    pub time: f64,
    pub reason: String,
    pub best_available: Option<ServiceClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetrics {
    pub requests: u64,
    pub admitted: u64,
    /// Count per reason; both reasons always present.
    pub rejections: BTreeMap<String, u64>,
    pub rejected: Vec<RejectionRecord>,
    pub reroutes: u64,
    pub teardowns: u64,
    pub lsa_floods: u64,
    pub control_frames: u64,
    pub control_key_bits: u64,
    pub session_bits_delivered: u64,
    /// Σ delivered bits × hop count: the pad bits deliveries required.
    pub session_bit_hops: u64,
    pub otp_payload_bits: u64,
    pub events_processed: u64,
    pub causality_violations: u64,
    /// Events after which some link held more reservation than admission allows.
    pub reservation_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub available_bits: Vec<u64>,
    pub fill_fraction: Vec<f64>,
}

//! Virtual circuits: admission, policing, scheduling and hop-by-hop relay.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::keystore::{InsufficientKey, KeyStore};
use crate::q3p::{self, Channel, FrameCircuit, Q3pConfig, Q3pError, Q3pFrame};
use crate::routing::{LinkStatus, Route};
use crate::time::SimTime;
use crate::{CircuitId, LinkId, NodeId};

pub const DEFAULT_ADMISSION_FACTOR: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServiceClass {
    /// Upper bounds only: `lambda_k` key packets/s on average, bursts of `sigma_k`.
    BestEffort { lambda_k: f64, sigma_k: f64 },
    /// `bits_per_period` bits of session key every `period` seconds.
    GuaranteedRate { bits_per_period: u64, period: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("lambda_k must be positive")]
    Rate,
    #[error("sigma_k must be at least 1")]
    Burst,
    #[error("bits_per_period must be positive")]
    Bits,
    #[error("period must be positive")]
    Period,
}

impl ServiceClass {
    pub fn validate(&self) -> Result<(), ServiceError> {
        match *self {
            ServiceClass::BestEffort { lambda_k, sigma_k } => {
                if !(lambda_k.is_finite() && lambda_k > 0.0) {
                    return Err(ServiceError::Rate);
                }
                if !(sigma_k.is_finite() && sigma_k >= 1.0) {
                    return Err(ServiceError::Burst);
                }
            }
            ServiceClass::GuaranteedRate { bits_per_period, period } => {
                if bits_per_period == 0 {
                    return Err(ServiceError::Bits);
                }
                if !(period.is_finite() && period > 0.0) {
                    return Err(ServiceError::Period);
                }
            }
        }
        Ok(())
    }

    pub fn priority(&self) -> Priority {
        match self {
            ServiceClass::GuaranteedRate { .. } => Priority::Guaranteed,
            ServiceClass::BestEffort { .. } => Priority::BestEffort,
        }
    }

    /// Contracted session-key rate in bits/s; zero for best effort.
    pub fn guaranteed_rate(&self) -> f64 {
        match *self {
            ServiceClass::GuaranteedRate { bits_per_period, period } => bits_per_period as f64 / period,
            ServiceClass::BestEffort { .. } => 0.0,
        }
    }
}

/// Lower sorts first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Guaranteed,
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRequest {
    pub source_app: String,
    pub ingress: NodeId,
    pub dest_node: NodeId,
    pub dest_port: u16,
    pub service: ServiceClass,
    pub key_block_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitState {
    Establishing,
    Active,
    Rerouting,
    Closed,
}

/// Token bucket of depth `sigma_k` refilled at `lambda_k` tokens/s.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    pub rate: f64,
    pub depth: f64,
    pub tokens: f64,
    pub last_update: SimTime,
}

impl TokenBucket {
    /// Starts full.
    pub fn new(rate: f64, depth: f64, now: SimTime) -> TokenBucket {
        TokenBucket { rate, depth, tokens: depth, last_update: now }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conformance {
    Conforming,
    NonConforming,
}

/// Refill to `t`, then take one token if there is one.
pub fn police(bucket: &mut TokenBucket, t: SimTime) -> Conformance {
    let elapsed = t.saturating_sub(bucket.last_update).as_secs_f64();
    bucket.tokens = (bucket.tokens + bucket.rate * elapsed).min(bucket.depth);
    bucket.last_update = bucket.last_update.max(t);
    if bucket.tokens >= 1.0 {
        bucket.tokens -= 1.0;
        Conformance::Conforming
    } else {
        Conformance::NonConforming
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualCircuit {
    pub id: CircuitId,
    pub request: PathRequest,
    pub path: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub state: CircuitState,
    /// Incremented on every move to a new path; frames carry it.
    pub epoch: u32,
    /// bits/s installed on every path link; zero for best effort.
    pub reserved_rate: f64,
    pub bucket: Option<TokenBucket>,
}

impl VirtualCircuit {
    pub fn new(id: CircuitId, request: PathRequest, admission: &Admission, now: SimTime) -> VirtualCircuit {
        let bucket = match request.service {
            ServiceClass::BestEffort { lambda_k, sigma_k } => Some(TokenBucket::new(lambda_k, sigma_k, now)),
            ServiceClass::GuaranteedRate { .. } => None,
        };
        VirtualCircuit {
            id,
            path: admission.route.nodes.clone(),
            links: admission.route.links.clone(),
            request,
            state: CircuitState::Establishing,
            epoch: 0,
            reserved_rate: admission.reserved_rate,
            bucket,
        }
    }

    pub fn label(&self) -> FrameCircuit {
        FrameCircuit::Data { circuit: self.id, epoch: self.epoch }
    }

    pub fn ingress(&self) -> NodeId {
        self.request.ingress
    }

    pub fn egress(&self) -> NodeId {
        self.request.dest_node
    }

    /// Link leaving `node` along the path, if `node` is not the egress.
    pub fn next_link(&self, node: NodeId) -> Option<(LinkId, NodeId)> {
        let pos = self.path.iter().position(|&n| n == node)?;
        Some((*self.links.get(pos)?, self.path[pos + 1]))
    }

    pub fn priority(&self) -> Priority {
        self.request.service.priority()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPacket {
    pub circuit: CircuitId,
    pub sequence: u64,
    pub payload: BitString,
    pub priority: Priority,
}

/// Authoritative per-link admission state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkLoad {
    pub effective_rate: f64,
    pub reserved_rate: f64,
    pub status: LinkStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissionConfig {
    pub admission_factor: f64,
}

impl Default for AdmissionConfig {
    fn default() -> Self {
        AdmissionConfig { admission_factor: DEFAULT_ADMISSION_FACTOR }
    }
}

impl AdmissionConfig {
    fn headroom(&self, load: &LinkLoad) -> f64 {
        match load.status {
            LinkStatus::Up => self.admission_factor * load.effective_rate - load.reserved_rate,
            LinkStatus::Down => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    #[error("destination unreachable")]
    NoPath,
    #[error("insufficient capacity")]
    InsufficientCapacity { best_available: Option<ServiceClass> },
}

impl Rejection {
    pub fn reason(&self) -> &'static str {
        match self {
            Rejection::NoPath => "no_path",
            Rejection::InsufficientCapacity { .. } => "insufficient_capacity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub route: Route,
    /// Reservation to install on every link of the route, bits/s.
    pub reserved_rate: f64,
}

/// Session-key rate a guaranteed contract demands from each hop, including
/// the authentication key spent per frame.
pub fn demanded_rate(request: &PathRequest, q3p: &Q3pConfig) -> f64 {
    request.service.guaranteed_rate() * (1.0 + q3p.auth_overhead_fraction(request.key_block_length))
}

/// Picks the first candidate route that can carry the request.
///
/// `candidates` come from the ingress routing table, cheapest first;
/// `load` reports the live state of each link as negotiated along the path.
pub fn establish_path(
    request: &PathRequest,
    candidates: &[Route],
    load: impl Fn(LinkId) -> LinkLoad,
    admission: &AdmissionConfig,
    q3p: &Q3pConfig,
) -> Result<Admission, Rejection> {
    if request.ingress == request.dest_node {
        let route = Route { cost: Default::default(), nodes: alloc::vec![request.ingress], links: Vec::new() };
        return Ok(Admission { route, reserved_rate: 0.0 });
    }
    let live: Vec<&Route> = candidates
        .iter()
        .filter(|r| r.links.iter().all(|&l| load(l).status == LinkStatus::Up))
        .collect();
    let Some(first) = live.first() else {
        return Err(Rejection::NoPath);
    };
    match request.service {
        ServiceClass::BestEffort { .. } => Ok(Admission { route: (*first).clone(), reserved_rate: 0.0 }),
        ServiceClass::GuaranteedRate { period, .. } => {
            let demand = demanded_rate(request, q3p);
            let min_headroom = |r: &Route| {
                r.links.iter().map(|&l| admission.headroom(&load(l))).fold(f64::INFINITY, f64::min)
            };
            if let Some(r) = live.iter().find(|r| min_headroom(r) >= demand) {
                return Ok(Admission { route: (*r).clone(), reserved_rate: demand });
            }
            let best = live.iter().map(|r| min_headroom(r)).fold(0.0, f64::max);
            let overhead = 1.0 + q3p.auth_overhead_fraction(request.key_block_length);
            let rate = (best / overhead).max(0.0);
            let bits_per_period = libm::floor(rate * period) as u64;
            let best_available =
                (bits_per_period > 0).then_some(ServiceClass::GuaranteedRate { bits_per_period, period });
            Err(Rejection::InsufficientCapacity { best_available })
        }
    }
}

pub fn reserve(loads: &mut [LinkLoad], links: &[LinkId], rate: f64) {
    for l in links {
        loads[l.index()].reserved_rate += rate;
    }
}

pub fn release(loads: &mut [LinkLoad], links: &[LinkId], rate: f64) {
    for l in links {
        let r = &mut loads[l.index()].reserved_rate;
        *r = (*r - rate).max(0.0);
    }
}

/// Links whose reservations exceed what admission would allow today.
pub fn overbooked_links(loads: &[LinkLoad], admission: &AdmissionConfig) -> Vec<LinkId> {
    loads
        .iter()
        .enumerate()
        .filter(|(_, l)| l.status == LinkStatus::Up && l.reserved_rate > admission.admission_factor * l.effective_rate * (1.0 + 1e-12))
        .map(|(i, _)| LinkId(i as u32))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum RerouteOutcome {
    /// The failed link is not on the circuit's path.
    Unchanged,
    /// Moved to a new path; `state` is `Establishing` until signalled.
    Rerouted,
    /// No admissible alternate; the circuit is closed.
    Teardown(Rejection),
}

/// Moves `circuit` off `failed`. Reservations on the old path are released
/// before the new path is admitted.
pub fn reroute(
    circuit: &mut VirtualCircuit,
    failed: LinkId,
    candidates: &[Route],
    loads: &mut [LinkLoad],
    admission: &AdmissionConfig,
    q3p: &Q3pConfig,
) -> RerouteOutcome {
    if !circuit.links.contains(&failed) || circuit.state == CircuitState::Closed {
        return RerouteOutcome::Unchanged;
    }
    circuit.state = CircuitState::Rerouting;
    release(loads, &circuit.links, circuit.reserved_rate);
    circuit.reserved_rate = 0.0;
    let usable: Vec<Route> = candidates.iter().filter(|r| !r.links.contains(&failed)).cloned().collect();
    let snapshot: &[LinkLoad] = loads;
    match establish_path(&circuit.request, &usable, |l| snapshot[l.index()], admission, q3p) {
        Ok(adm) => {
            reserve(loads, &adm.route.links, adm.reserved_rate);
            circuit.path = adm.route.nodes;
            circuit.links = adm.route.links;
            circuit.reserved_rate = adm.reserved_rate;
            circuit.epoch += 1;
            circuit.state = CircuitState::Establishing;
            RerouteOutcome::Rerouted
        }
        Err(rej) => {
            circuit.state = CircuitState::Closed;
            RerouteOutcome::Teardown(rej)
        }
    }
}

/// A packet waiting at a node for its outgoing link.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedPacket {
    pub packet: KeyPacket,
    pub label: FrameCircuit,
    /// Key bits this packet needs on the outgoing hop.
    pub key_cost: u64,
    pub enqueued_at: SimTime,
}

/// Index of the packet to send next: strict priority, FIFO within a class,
/// but a packet the store cannot pay for never blocks one it can.
pub fn schedule(queue: &VecDeque<QueuedPacket>, available_bits: u64) -> Option<usize> {
    [Priority::Guaranteed, Priority::BestEffort].into_iter().find_map(|class| {
        queue
            .iter()
            .position(|q| q.packet.priority == class && q.key_cost <= available_bits)
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelayError {
    #[error(transparent)]
    Link(#[from] Q3pError),
    #[error("frames did not complete a message")]
    Incomplete,
    /// The outgoing store is short; the packet must wait in the node's queue.
    #[error("outgoing store short of key")]
    Queued { packet: KeyPacket, label: FrameCircuit, shortfall: InsufficientKey },
}

/// Re-encrypts a recovered packet for the next hop.
pub fn forward_packet(
    packet: KeyPacket,
    label: FrameCircuit,
    outgoing: &mut Channel,
    out_store: &mut KeyStore,
    cfg: &Q3pConfig,
) -> Result<Vec<Q3pFrame>, RelayError> {
    match q3p::send_message(outgoing, label, packet.sequence, &packet.payload, out_store, cfg) {
        Ok(frames) => Ok(frames),
        Err(shortfall) => Err(RelayError::Queued { packet, label, shortfall }),
    }
}

/// One trusted-relay step: strip the incoming pad (and check the tag), then
/// re-encrypt under fresh key of the outgoing link. The plaintext exists only
/// inside this call unless the outgoing store is short.
pub fn relay_hop(
    frames: &[Q3pFrame],
    priority: Priority,
    incoming: &mut Channel,
    outgoing: &mut Channel,
    out_store: &mut KeyStore,
    cfg: &Q3pConfig,
) -> Result<Vec<Q3pFrame>, RelayError> {
    let mut done = None;
    for f in frames {
        done = incoming.accept(f)?;
    }
    let msg = done.ok_or(RelayError::Incomplete)?;
    let FrameCircuit::Data { circuit, .. } = msg.circuit else {
        return Err(RelayError::Incomplete);
    };
    let packet = KeyPacket { circuit, sequence: msg.sequence, payload: msg.payload, priority };
    forward_packet(packet, msg.circuit, outgoing, out_store, cfg)
}

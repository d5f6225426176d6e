//! Deterministic discrete-event engine.
//!
//! One event queue ordered by `(time, ordinal)` drives key generation,
//! applications, frame delivery, link-state flooding and attacks. All state
//! lives in [`Simulator`]; [`run`] is the one-shot entry point.

mod metrics;
mod trace;

pub use metrics::{
    CircuitMetrics, LinkMetrics, Metrics, NetworkMetrics, RejectionRecord, RerouteRecord, Sample,
};
pub use trace::{RouteEntry, TraceLevel, TraceRecord};

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand_chacha::ChaCha20Rng;
use rand_core::RngCore;

use crate::bits::BitString;
use crate::forwarding::{
    self, establish_path, forward_packet, police, reroute, AdmissionConfig, CircuitState, Conformance,
    KeyPacket, LinkLoad, QueuedPacket, RelayError, RerouteOutcome, ServiceClass, VirtualCircuit,
};
use crate::keystore::KeyStore;
use crate::link_model::{effective_link_rate, LinkProfile};
use crate::q3p::{self, Channel, FrameCircuit, Q3pConfig, Q3pFrame};
use crate::rng;
use crate::routing::{LinkStateRecord, LinkStatus, NetworkView, RoutingState};
use crate::scenario::{
    AttackAction, NodeKind, Resolved, ResolvedAttack, ResolvedDemand, Scenario, SimConfig, TrafficPattern,
    ValidationError,
};
use crate::time::SimTime;
use crate::{CircuitId, LinkId, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub enum AppEvent {
    /// Demand `n` asks for a circuit.
    Establish(usize),
    /// The application on a circuit wants its next key.
    Emit(CircuitId),
    Stop(CircuitId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Flood {
    /// Periodic re-origination of every link record.
    Refresh,
    /// Records reaching the nodes that are not endpoints of the link.
    Deliver(Vec<LinkStateRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    KeyGenTick,
    AppRequest(AppEvent),
    PacketArrival { link: LinkId, dir: usize, frame: Box<Q3pFrame> },
    LinkStateFlood(Flood),
    /// Scenario attack `n`.
    Attack(usize),
    /// Scenario attack `n`, a restore action.
    Restore(usize),
    MetricSample,
    /// Path setup finished for `circuit` at `epoch`.
    CircuitSignal { circuit: CircuitId, epoch: u32 },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: SimTime,
    pub ordinal: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.ordinal) == (other.time, other.ordinal)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed: BinaryHeap is a max-heap and the earliest event must come out first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.ordinal).cmp(&(self.time, self.ordinal))
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub metrics: Metrics,
    pub trace: Vec<TraceRecord>,
}

/// Validates and runs `scenario` to its end.
pub fn run(scenario: &Scenario) -> Result<Outcome, ValidationError> {
    let resolved = scenario.validate()?;
    let mut sim = Simulator::new(resolved);
    sim.run_to_end();
    Ok(sim.finish())
}

/// Incremental 64-bit FNV-1a.
#[derive(Clone, Copy)]
struct Fnv(u64);

impl Fnv {
    fn new() -> Fnv {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn write_bits(&mut self, bits: &BitString) {
        self.write(&(bits.len() as u64).to_le_bytes());
        for w in bits.words() {
            self.write(&w.to_le_bytes());
        }
    }
}

/// Hex digest of a bit string.
pub fn bits_digest(bits: &BitString) -> String {
    let mut h = Fnv::new();
    h.write_bits(bits);
    format!("{:016x}", h.0)
}

struct LinkRt {
    name: String,
    a: NodeId,
    b: NodeId,
    profile: LinkProfile,
    failed: bool,
    store: KeyStore,
    initial_bits: u64,
    /// Fractional bits generated but not yet deposited.
    carry: f64,
    latency: SimTime,
    /// `[a -> b, b -> a]`.
    channels: [Channel; 2],
    queues: [VecDeque<QueuedPacket>; 2],
    /// Control frames owed; paid before any data when key is available.
    control_debt: u64,
    control_seq: u64,
    lsa_seq: u64,
    down_since: Option<SimTime>,
    downtime: SimTime,
    data_key_bits: u64,
    control_key_bits: u64,
    stale_frames: u64,
}

impl LinkRt {
    fn dir_from(&self, node: NodeId) -> usize {
        if node == self.a {
            0
        } else {
            1
        }
    }
}

enum Emission {
    /// Evenly spaced every `interval` seconds from `start`.
    Paced { start: SimTime, interval: f64, index: u64 },
    Poisson { rate: f64, rng: ChaCha20Rng },
    Times { times: Vec<SimTime>, next: usize },
}

struct CircuitRt {
    vc: VirtualCircuit,
    demand: usize,
    requested_at: SimTime,
    established_at: Option<SimTime>,
    closed_at: Option<SimTime>,
    contract_reserved: f64,
    end: SimTime,
    session: ChaCha20Rng,
    emission: Emission,
    next_seq: u64,
    /// Generated at the ingress and not yet confirmed delivered.
    unacked: BTreeMap<u64, BitString>,
    last_delivered: Option<u64>,
    emitted: u64,
    delivered_packets: u64,
    delivered_bits: u64,
    policed_drops: u64,
    abandoned: u64,
    stale_drops: u64,
    duplicate_drops: u64,
    fidelity_violations: u64,
    reroutes: Vec<RerouteRecord>,
    awaiting_resume: bool,
    teardown_reason: Option<String>,
    notifications: Vec<String>,
    digest: Fnv,
}

#[derive(Default)]
struct NetCounters {
    requests: u64,
    admitted: u64,
    rejections: BTreeMap<String, u64>,
    rejected: Vec<RejectionRecord>,
    reroutes: u64,
    teardowns: u64,
    lsa_floods: u64,
    session_bits: u64,
    session_bit_hops: u64,
    events: u64,
    causality_violations: u64,
    reservation_violations: u64,
}

pub struct Simulator {
    cfg: SimConfig,
    q3p: Q3pConfig,
    admission: AdmissionConfig,
    seed: u64,
    duration: SimTime,
    tick: SimTime,
    node_names: Vec<String>,
    demands: Vec<ResolvedDemand>,
    attacks: Vec<ResolvedAttack>,
    links: Vec<LinkRt>,
    loads: Vec<LinkLoad>,
    routing: RoutingState,
    circuits: Vec<CircuitRt>,
    queue: BinaryHeap<Event>,
    now: SimTime,
    ordinal: u64,
    trace_level: TraceLevel,
    trace: Vec<TraceRecord>,
    net: NetCounters,
    samples: Vec<Sample>,
}

fn secs(t: SimTime) -> f64 {
    t.as_secs_f64()
}

fn status_str(s: LinkStatus) -> &'static str {
    match s {
        LinkStatus::Up => "up",
        LinkStatus::Down => "down",
    }
}

fn state_str(s: CircuitState) -> &'static str {
    match s {
        CircuitState::Establishing => "establishing",
        CircuitState::Active => "active",
        CircuitState::Rerouting => "rerouting",
        CircuitState::Closed => "closed",
    }
}

fn label_str(label: FrameCircuit) -> String {
    match label {
        FrameCircuit::Control => "control".to_string(),
        FrameCircuit::Data { circuit, epoch } => format!("{circuit}/e{epoch}"),
    }
}

fn frame_record(now: SimTime, link: &LinkRt, dir: usize, names: &[String], frame: &Q3pFrame) -> TraceRecord {
    let ch = &link.channels[dir];
    TraceRecord::Frame {
        time: secs(now),
        link: link.name.clone(),
        from: names[ch.from.index()].clone(),
        to: names[ch.to.index()].clone(),
        circuit: label_str(frame.circuit),
        sequence: frame.sequence,
        frame_id: frame.frame_id,
        fragment: frame.fragment_index,
        fragments: frame.fragment_count,
        encrypted: frame.encrypted,
        size_bits: frame.ciphertext.len(),
        key_bits: frame.key_bits(),
        block_id: frame.key_block_ref,
        ciphertext_digest: bits_digest(&frame.ciphertext),
    }
}

/// Uniform in [0, 1).
fn unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl Simulator {
    pub fn new(resolved: Resolved) -> Simulator {
        let Resolved { seed, duration, node_names, node_kinds, links: specs, demands, attacks, config, .. } =
            resolved;
        let q3p = config.q3p();
        let mut links = Vec::with_capacity(specs.len());
        let mut loads = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            let id = LinkId(i as u32);
            let mut store = KeyStore::new(id, s.capacity_bits, rng::stream(seed, &format!("key/{}", s.name)));
            store.deposit(s.initial_bits);
            let rate = effective_link_rate(&s.profile);
            let status = if rate > 0.0 { LinkStatus::Up } else { LinkStatus::Down };
            loads.push(LinkLoad { effective_rate: rate, reserved_rate: 0.0, status });
            links.push(LinkRt {
                name: s.name.clone(),
                a: s.a,
                b: s.b,
                profile: s.profile.clone(),
                failed: false,
                store,
                initial_bits: s.initial_bits,
                carry: 0.0,
                latency: s.latency,
                channels: [
                    Channel::new(id, s.a, s.b, s.latency, s.window),
                    Channel::new(id, s.b, s.a, s.latency, s.window),
                ],
                queues: [VecDeque::new(), VecDeque::new()],
                control_debt: 0,
                control_seq: 0,
                lsa_seq: 0,
                down_since: (status == LinkStatus::Down).then_some(SimTime::ZERO),
                downtime: SimTime::ZERO,
                data_key_bits: 0,
                control_key_bits: 0,
                stale_frames: 0,
            });
        }
        let mut view = NetworkView::default();
        for (i, k) in node_kinds.iter().enumerate() {
            view.nodes.insert(NodeId(i as u32));
            if *k == NodeKind::Qan {
                view.stubs.insert(NodeId(i as u32));
            }
        }
        let mut sim = Simulator {
            q3p,
            admission: config.admission(),
            seed,
            duration,
            tick: SimTime::from_secs_f64(config.keygen_tick),
            node_names,
            demands,
            attacks,
            links,
            loads,
            routing: RoutingState::new(NetworkView::default(), config.route_params()),
            circuits: Vec::new(),
            queue: BinaryHeap::new(),
            now: SimTime::ZERO,
            ordinal: 0,
            trace_level: config.trace,
            trace: Vec::new(),
            net: NetCounters::default(),
            samples: Vec::new(),
            cfg: config,
        };
        for l in 0..sim.links.len() {
            let rec = sim.record(LinkId(l as u32));
            view.records.insert(rec.link, rec);
        }
        sim.routing = RoutingState::new(view, sim.cfg.route_params());
        for key in ["insufficient_capacity", "no_path"] {
            sim.net.rejections.insert(key.to_string(), 0);
        }
        for l in 0..sim.links.len() {
            sim.trace_link(LinkId(l as u32), "initial");
        }

        if sim.tick <= duration {
            sim.schedule(sim.tick, EventKind::KeyGenTick);
        }
        for i in 0..sim.demands.len() {
            let t = sim.demands[i].time;
            sim.schedule(t, EventKind::AppRequest(AppEvent::Establish(i)));
        }
        for i in 0..sim.attacks.len() {
            let kind = match sim.attacks[i].action {
                AttackAction::Restore => EventKind::Restore(i),
                _ => EventKind::Attack(i),
            };
            sim.schedule(sim.attacks[i].time, kind);
        }
        if sim.cfg.lsa_interval > 0.0 {
            let t = SimTime::from_secs_f64(sim.cfg.lsa_interval);
            if t > SimTime::ZERO && t <= duration {
                sim.schedule(t, EventKind::LinkStateFlood(Flood::Refresh));
            }
        }
        if sim.cfg.sample_interval.is_some() {
            sim.schedule(SimTime::ZERO, EventKind::MetricSample);
        }
        sim
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Simulator, ValidationError> {
        Ok(Simulator::new(scenario.validate()?))
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn duration(&self) -> SimTime {
        self.duration
    }

    pub fn routing(&self) -> &RoutingState {
        &self.routing
    }

    pub fn store(&self, link: LinkId) -> &KeyStore {
        &self.links[link.index()].store
    }

    pub fn link_load(&self, link: LinkId) -> LinkLoad {
        self.loads[link.index()]
    }

    pub fn circuit(&self, id: CircuitId) -> Option<&VirtualCircuit> {
        self.circuits.get(id.0 as usize).map(|c| &c.vc)
    }

    pub fn circuit_count(&self) -> usize {
        self.circuits.len()
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.node_names.iter().position(|n| n == name).map(|i| NodeId(i as u32))
    }

    pub fn link_id(&self, name: &str) -> Option<LinkId> {
        self.links.iter().position(|l| l.name == name).map(|i| LinkId(i as u32))
    }

    /// True when every node holds the same link-state records.
    pub fn views_converged(&self) -> bool {
        let first = &self.routing.nodes[0].view.records;
        self.routing.nodes.iter().all(|n| &n.view.records == first)
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.time)
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        let time = if time < self.now {
            self.net.causality_violations += 1;
            self.now
        } else {
            time
        };
        self.queue.push(Event { time, ordinal: self.ordinal, kind });
        self.ordinal += 1;
    }

    /// Processes one event. Returns false once nothing is left before the end.
    pub fn step(&mut self) -> bool {
        match self.queue.peek() {
            Some(e) if e.time <= self.duration => {}
            _ => return false,
        }
        let event = self.queue.pop().expect("peeked");
        if event.time < self.now {
            self.net.causality_violations += 1;
        }
        self.now = event.time;
        self.net.events += 1;
        self.dispatch(event.kind);
        if !forwarding::overbooked_links(&self.loads, &self.admission).is_empty() {
            self.net.reservation_violations += 1;
        }
        true
    }

    /// Runs every event with time at or before `t`.
    pub fn run_until(&mut self, t: SimTime) {
        while self.queue.peek().is_some_and(|e| e.time <= t) && self.step() {}
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::KeyGenTick => self.on_tick(),
            EventKind::AppRequest(AppEvent::Establish(i)) => self.establish(i),
            EventKind::AppRequest(AppEvent::Emit(c)) => self.emit(c),
            EventKind::AppRequest(AppEvent::Stop(c)) => self.stop(c),
            EventKind::CircuitSignal { circuit, epoch } => self.activate(circuit, epoch),
            EventKind::PacketArrival { link, dir, frame } => self.arrival(link, dir, &frame),
            EventKind::LinkStateFlood(Flood::Refresh) => {
                let all: Vec<LinkId> = (0..self.links.len()).map(|i| LinkId(i as u32)).collect();
                self.originate(&all);
                let next = self.now + SimTime::from_secs_f64(self.cfg.lsa_interval);
                if next <= self.duration {
                    self.schedule(next, EventKind::LinkStateFlood(Flood::Refresh));
                }
            }
            EventKind::LinkStateFlood(Flood::Deliver(records)) => {
                let all: Vec<NodeId> = (0..self.node_names.len()).map(|i| NodeId(i as u32)).collect();
                for rec in &records {
                    let changed = self.routing.handle_link_event(rec, all.iter().copied());
                    self.after_view_change(&changed, rec);
                }
            }
            EventKind::Attack(i) | EventKind::Restore(i) => self.attack(i),
            EventKind::MetricSample => self.sample(),
        }
    }

    fn on_tick(&mut self) {
        let dt = secs(self.tick);
        for (link, load) in self.links.iter_mut().zip(&self.loads) {
            if load.effective_rate <= 0.0 {
                continue;
            }
            link.carry += load.effective_rate * dt;
            let whole = libm::floor(link.carry);
            link.carry -= whole;
            if whole > 0.0 {
                link.store.deposit(whole as u64);
            }
        }
        for l in 0..self.links.len() {
            self.service(LinkId(l as u32));
        }
        let next = self.now + self.tick;
        if next <= self.duration {
            self.schedule(next, EventKind::KeyGenTick);
        }
    }

    /// Pays control debt, sends whatever queued packets the store can pay
    /// for, and puts frames on the wire up to the window.
    fn service(&mut self, l: LinkId) {
        let Simulator { links, circuits, q3p, trace, trace_level, node_names, now, .. } = self;
        let link = &mut links[l.index()];
        let tag = q3p.auth_tag_key_bits as u64;
        let frames_traced = *trace_level >= TraceLevel::Frame;
        while link.control_debt > 0 && link.store.available_bits() >= tag {
            let seq = link.control_seq;
            link.control_seq += 1;
            let payload = BitString::from_u64(seq, 64);
            let frame = q3p::send_control(&mut link.channels[0], seq, &payload, &mut link.store, q3p)
                .expect("availability checked");
            link.control_debt -= 1;
            link.control_key_bits += tag;
            if frames_traced {
                trace.push(frame_record(*now, link, 0, node_names, &frame));
            }
            link.channels[0].enqueue(vec![frame]);
        }
        loop {
            let available = link.store.available_bits();
            let mut best: Option<(forwarding::Priority, SimTime, usize, usize)> = None;
            for d in 0..2 {
                if let Some(i) = forwarding::schedule(&link.queues[d], available) {
                    let q = &link.queues[d][i];
                    let cand = (q.packet.priority, q.enqueued_at, d, i);
                    if best.is_none_or(|b| (cand.0, cand.1, cand.2) < (b.0, b.1, b.2)) {
                        best = Some(cand);
                    }
                }
            }
            let Some((_, _, d, i)) = best else { break };
            let qp = link.queues[d].remove(i).expect("index from schedule");
            let cr = &mut circuits[qp.packet.circuit.0 as usize];
            if cr.vc.state == CircuitState::Closed || qp.label != cr.vc.label() {
                cr.stale_drops += 1;
                continue;
            }
            match forward_packet(qp.packet, qp.label, &mut link.channels[d], &mut link.store, q3p) {
                Ok(frames) => {
                    for f in &frames {
                        link.data_key_bits += f.key_bits();
                        if frames_traced {
                            trace.push(frame_record(*now, link, d, node_names, f));
                        }
                    }
                    link.channels[d].enqueue(frames);
                }
                Err(RelayError::Queued { packet, label, .. }) => {
                    let key_cost = qp.key_cost;
                    link.queues[d].insert(i, QueuedPacket { packet, label, key_cost, enqueued_at: qp.enqueued_at });
                    break;
                }
                Err(_) => unreachable!("forward_packet only fails for lack of key"),
            }
        }
        self.release_wire(l);
    }

    fn release_wire(&mut self, l: LinkId) {
        let link = &mut self.links[l.index()];
        let at = self.now + link.latency;
        let mut out = Vec::new();
        for d in 0..2 {
            for f in link.channels[d].release() {
                out.push((d, f));
            }
        }
        for (dir, frame) in out {
            self.schedule(at, EventKind::PacketArrival { link: l, dir, frame: Box::new(frame) });
        }
    }

    fn arrival(&mut self, l: LinkId, dir: usize, frame: &Q3pFrame) {
        let link = &mut self.links[l.index()];
        let to = link.channels[dir].to;
        let result = link.channels[dir].accept(frame);
        if let Ok(Some(msg)) = result {
            if let FrameCircuit::Data { circuit, epoch } = msg.circuit {
                self.on_message(l, to, circuit, epoch, msg.sequence, msg.payload);
            }
        }
        self.release_wire(l);
    }

    fn on_message(&mut self, l: LinkId, node: NodeId, c: CircuitId, epoch: u32, seq: u64, payload: BitString) {
        let cr = &mut self.circuits[c.0 as usize];
        if cr.vc.state == CircuitState::Closed || epoch != cr.vc.epoch {
            cr.stale_drops += 1;
            self.links[l.index()].stale_frames += 1;
            return;
        }
        if node == cr.vc.egress() {
            self.deliver(c, seq, payload);
            return;
        }
        let Some((next, _)) = cr.vc.next_link(node) else {
            cr.stale_drops += 1;
            return;
        };
        let packet = KeyPacket { circuit: c, sequence: seq, payload, priority: cr.vc.priority() };
        let label = cr.vc.label();
        self.enqueue(next, node, packet, label);
    }

    fn enqueue(&mut self, l: LinkId, from: NodeId, packet: KeyPacket, label: FrameCircuit) {
        let key_cost = self.q3p.message_key_cost(packet.payload.len());
        let link = &mut self.links[l.index()];
        let d = link.dir_from(from);
        link.queues[d].push_back(QueuedPacket { packet, label, key_cost, enqueued_at: self.now });
        self.service(l);
    }

    fn deliver(&mut self, c: CircuitId, seq: u64, payload: BitString) {
        let now = self.now;
        let cr = &mut self.circuits[c.0 as usize];
        if cr.last_delivered.is_some_and(|last| seq <= last) {
            cr.duplicate_drops += 1;
            return;
        }
        match cr.unacked.remove(&seq) {
            Some(original) if original == payload => {}
            _ => cr.fidelity_violations += 1,
        }
        cr.last_delivered = Some(seq);
        cr.delivered_packets += 1;
        cr.delivered_bits += payload.len() as u64;
        cr.digest.write_bits(&payload);
        if cr.awaiting_resume {
            cr.awaiting_resume = false;
            if let Some(r) = cr.reroutes.last_mut() {
                r.resumed_at = Some(secs(now));
            }
        }
        let hops = cr.vc.links.len() as u64;
        self.net.session_bits += payload.len() as u64;
        self.net.session_bit_hops += payload.len() as u64 * hops;
        if self.trace_level >= TraceLevel::Circuit {
            self.trace.push(TraceRecord::Delivery {
                time: secs(now),
                circuit: c.to_string(),
                sequence: seq,
                bits: payload.len(),
                payload_digest: bits_digest(&payload),
            });
        }
    }

    fn trace_circuit(&mut self, c: CircuitId, event: &str, detail: String) {
        if self.trace_level >= TraceLevel::Circuit {
            self.trace.push(TraceRecord::Circuit {
                time: secs(self.now),
                circuit: c.to_string(),
                event: event.to_string(),
                detail,
            });
        }
    }

    fn trace_link(&mut self, l: LinkId, cause: &str) {
        if self.trace_level >= TraceLevel::Circuit {
            let link = &self.links[l.index()];
            let load = self.loads[l.index()];
            self.trace.push(TraceRecord::Link {
                time: secs(self.now),
                link: link.name.clone(),
                status: status_str(load.status).to_string(),
                effective_rate: load.effective_rate,
                qber: link.profile.qber,
                num_quantum_channels: link.profile.num_quantum_channels,
                cause: cause.to_string(),
            });
        }
    }

    fn path_names(&self, path: &[NodeId]) -> Vec<String> {
        path.iter().map(|n| self.node_names[n.index()].clone()).collect()
    }

    fn setup_delay(&self, links: &[LinkId]) -> SimTime {
        let one_way: u64 = links.iter().map(|l| self.links[l.index()].latency.as_micros()).sum();
        SimTime(2 * one_way)
    }

    fn owe_control(&mut self, links: &[LinkId], frames: u64) {
        for l in links {
            if self.loads[l.index()].status == LinkStatus::Up {
                self.links[l.index()].control_debt += frames;
            }
        }
    }

    fn establish(&mut self, i: usize) {
        self.net.requests += 1;
        let demand = self.demands[i].clone();
        let req = &demand.request;
        let candidates = self.routing.table(req.ingress).candidates(req.dest_node).to_vec();
        let loads = &self.loads;
        let admitted = establish_path(req, &candidates, |l| loads[l.index()], &self.admission, &self.q3p);
        let adm = match admitted {
            Ok(adm) => adm,
            Err(rej) => {
                *self.net.rejections.entry(rej.reason().to_string()).or_default() += 1;
                let best_available = match &rej {
                    forwarding::Rejection::InsufficientCapacity { best_available } => best_available.clone(),
                    forwarding::Rejection::NoPath => None,
                };
                if self.trace_level >= TraceLevel::Circuit {
                    self.trace.push(TraceRecord::Circuit {
                        time: secs(self.now),
                        circuit: format!("demand{i}"),
                        event: "rejected".to_string(),
                        detail: rej.reason().to_string(),
                    });
                }
                self.net.rejected.push(RejectionRecord {
                    demand: i,
                    time: secs(self.now),
                    reason: rej.reason().to_string(),
                    best_available,
                });
                return;
            }
        };
        self.net.admitted += 1;
        forwarding::reserve(&mut self.loads, &adm.route.links, adm.reserved_rate);
        let id = CircuitId(self.circuits.len() as u32);
        let vc = VirtualCircuit::new(id, req.clone(), &adm, self.now);
        let emission = match (&req.service, &demand.pattern) {
            (ServiceClass::GuaranteedRate { bits_per_period, period }, _) => Emission::Paced {
                start: self.now,
                interval: period * req.key_block_length as f64 / *bits_per_period as f64,
                index: 0,
            },
            (_, Some(TrafficPattern::Periodic { rate })) => {
                Emission::Paced { start: self.now, interval: 1.0 / rate, index: 0 }
            }
            (_, Some(TrafficPattern::Poisson { rate })) => {
                Emission::Poisson { rate: *rate, rng: rng::stream(self.seed, &format!("arrivals/{i}")) }
            }
            (_, Some(TrafficPattern::Times { times })) => {
                let mut ts: Vec<SimTime> =
                    times.iter().map(|&t| SimTime::from_secs_f64(t)).filter(|&t| t >= self.now).collect();
                ts.sort();
                Emission::Times { times: ts, next: 0 }
            }
            (ServiceClass::BestEffort { lambda_k, .. }, None) => {
                Emission::Paced { start: self.now, interval: 1.0 / lambda_k, index: 0 }
            }
        };
        let path = self.path_names(&vc.path);
        self.circuits.push(CircuitRt {
            contract_reserved: vc.reserved_rate,
            vc,
            demand: i,
            requested_at: self.now,
            established_at: None,
            closed_at: None,
            end: demand.stop.unwrap_or(self.duration),
            session: rng::stream(self.seed, &format!("session/{i}")),
            emission,
            next_seq: 0,
            unacked: BTreeMap::new(),
            last_delivered: None,
            emitted: 0,
            delivered_packets: 0,
            delivered_bits: 0,
            policed_drops: 0,
            abandoned: 0,
            stale_drops: 0,
            duplicate_drops: 0,
            fidelity_violations: 0,
            reroutes: Vec::new(),
            awaiting_resume: false,
            teardown_reason: None,
            notifications: Vec::new(),
            digest: Fnv::new(),
        });
        self.trace_circuit(id, "admitted", path.join("-"));
        if adm.route.links.is_empty() {
            self.activate(id, 0);
        } else {
            self.owe_control(&adm.route.links, 2);
            let at = self.now + self.setup_delay(&adm.route.links);
            self.schedule(at, EventKind::CircuitSignal { circuit: id, epoch: 0 });
            for &l in &adm.route.links {
                self.service(l);
            }
        }
        self.schedule_emission(id);
        if let Some(stop) = demand.stop {
            self.schedule(stop, EventKind::AppRequest(AppEvent::Stop(id)));
        }
    }

    fn schedule_emission(&mut self, c: CircuitId) {
        let now = self.now;
        let cr = &mut self.circuits[c.0 as usize];
        let next = match &mut cr.emission {
            Emission::Paced { start, interval, index } => {
                *index += 1;
                Some(*start + SimTime::from_secs_f64(*interval * *index as f64))
            }
            Emission::Poisson { rate, rng } => {
                let gap = -libm::log(1.0 - unit(rng)) / *rate;
                Some(now + SimTime::from_secs_f64(gap))
            }
            Emission::Times { times, next } => {
                let t = times.get(*next).copied();
                *next += 1;
                t
            }
        };
        if let Some(t) = next {
            if t <= cr.end {
                self.schedule(t, EventKind::AppRequest(AppEvent::Emit(c)));
            }
        }
    }

    fn emit(&mut self, c: CircuitId) {
        let now = self.now;
        let cr = &mut self.circuits[c.0 as usize];
        if cr.vc.state == CircuitState::Closed {
            return;
        }
        if let Some(bucket) = cr.vc.bucket.as_mut() {
            if police(bucket, now) == Conformance::NonConforming {
                cr.policed_drops += 1;
                self.schedule_emission(c);
                return;
            }
        }
        let payload = BitString::random(cr.vc.request.key_block_length, &mut cr.session);
        let seq = cr.next_seq;
        cr.next_seq += 1;
        cr.emitted += 1;
        cr.unacked.insert(seq, payload.clone());
        if cr.vc.state == CircuitState::Active {
            self.send_from_ingress(c, seq, payload);
        }
        self.schedule_emission(c);
    }

    fn send_from_ingress(&mut self, c: CircuitId, seq: u64, payload: BitString) {
        let vc = &self.circuits[c.0 as usize].vc;
        let ingress = vc.ingress();
        match vc.next_link(ingress) {
            None => self.deliver(c, seq, payload),
            Some((l, _)) => {
                let packet = KeyPacket { circuit: c, sequence: seq, payload, priority: vc.priority() };
                let label = vc.label();
                self.enqueue(l, ingress, packet, label);
            }
        }
    }

    fn activate(&mut self, c: CircuitId, epoch: u32) {
        let now = self.now;
        let cr = &mut self.circuits[c.0 as usize];
        if cr.vc.epoch != epoch || cr.vc.state != CircuitState::Establishing {
            return;
        }
        cr.vc.state = CircuitState::Active;
        if cr.established_at.is_none() {
            cr.established_at = Some(now);
        }
        let pending: Vec<(u64, BitString)> = cr.unacked.iter().map(|(s, p)| (*s, p.clone())).collect();
        self.trace_circuit(c, "active", format!("epoch {epoch}"));
        for (seq, payload) in pending {
            self.send_from_ingress(c, seq, payload);
        }
    }

    fn stop(&mut self, c: CircuitId) {
        let cr = &mut self.circuits[c.0 as usize];
        if cr.vc.state == CircuitState::Closed {
            return;
        }
        let links = cr.vc.links.clone();
        forwarding::release(&mut self.loads, &links, cr.vc.reserved_rate);
        cr.vc.reserved_rate = 0.0;
        self.owe_control(&links, 1);
        self.close(c, "completed", false);
    }

    fn close(&mut self, c: CircuitId, reason: &str, notify: bool) {
        let now = self.now;
        let ingress_name;
        let egress_name;
        {
            let vc = &self.circuits[c.0 as usize].vc;
            ingress_name = format!("{}/{}", self.node_names[vc.ingress().index()], vc.request.source_app);
            egress_name = format!("{}:{}", self.node_names[vc.egress().index()], vc.request.dest_port);
        }
        let cr = &mut self.circuits[c.0 as usize];
        cr.vc.state = CircuitState::Closed;
        cr.vc.reserved_rate = 0.0;
        cr.closed_at = Some(now);
        cr.abandoned += cr.unacked.len() as u64;
        cr.unacked.clear();
        cr.teardown_reason = Some(reason.to_string());
        if notify {
            cr.notifications.push(format!("source {ingress_name}: circuit torn down ({reason})"));
            cr.notifications.push(format!("destination {egress_name}: circuit torn down ({reason})"));
        }
        self.purge(c);
        self.trace_circuit(c, "closed", reason.to_string());
    }

    fn purge(&mut self, c: CircuitId) {
        for link in &mut self.links {
            for q in &mut link.queues {
                q.retain(|p| p.packet.circuit != c);
            }
        }
    }

    fn reroute_circuit(&mut self, c: CircuitId, failed: LinkId) {
        let (ingress, dest, old_links) = {
            let vc = &self.circuits[c.0 as usize].vc;
            (vc.ingress(), vc.egress(), vc.links.clone())
        };
        let candidates = self.routing.table(ingress).candidates(dest).to_vec();
        let outcome = reroute(
            &mut self.circuits[c.0 as usize].vc,
            failed,
            &candidates,
            &mut self.loads,
            &self.admission,
            &self.q3p,
        );
        match outcome {
            RerouteOutcome::Unchanged => {}
            RerouteOutcome::Rerouted => {
                self.net.reroutes += 1;
                self.purge(c);
                self.owe_control(&old_links, 1);
                let (new_links, new_path, epoch) = {
                    let vc = &self.circuits[c.0 as usize].vc;
                    (vc.links.clone(), vc.path.clone(), vc.epoch)
                };
                self.owe_control(&new_links, 2);
                let names = self.path_names(&new_path);
                let failed_name = self.links[failed.index()].name.clone();
                let cr = &mut self.circuits[c.0 as usize];
                cr.reroutes.push(RerouteRecord {
                    time: secs(self.now),
                    failed_link: failed_name.clone(),
                    new_path: names.clone(),
                    resumed_at: None,
                });
                cr.awaiting_resume = true;
                self.trace_circuit(c, "rerouted", format!("off {failed_name} onto {}", names.join("-")));
                let at = self.now + self.setup_delay(&new_links);
                self.schedule(at, EventKind::CircuitSignal { circuit: c, epoch });
                for l in old_links.iter().chain(&new_links) {
                    self.service(*l);
                }
            }
            RerouteOutcome::Teardown(rej) => {
                self.net.teardowns += 1;
                self.owe_control(&old_links, 1);
                self.close(c, rej.reason(), true);
            }
        }
    }

    fn record(&self, l: LinkId) -> LinkStateRecord {
        let link = &self.links[l.index()];
        let load = self.loads[l.index()];
        LinkStateRecord {
            link: l,
            endpoints: (link.a, link.b),
            effective_rate: load.effective_rate,
            fill_fraction: link.store.fill_fraction(),
            reserved_rate: load.reserved_rate,
            status: load.status,
            seq: link.lsa_seq,
        }
    }

    /// Floods fresh records for `links`: endpoints learn now, everyone else
    /// after the propagation delay.
    fn originate(&mut self, links: &[LinkId]) {
        self.net.lsa_floods += 1;
        let mut records = Vec::with_capacity(links.len());
        for &l in links {
            self.links[l.index()].lsa_seq += 1;
            records.push(self.record(l));
        }
        for rec in &records {
            let changed = self.routing.handle_link_event(rec, [rec.endpoints.0, rec.endpoints.1]);
            self.after_view_change(&changed, rec);
        }
        let at = self.now + SimTime::from_secs_f64(self.cfg.propagation_delay);
        self.schedule(at, EventKind::LinkStateFlood(Flood::Deliver(records)));
        let all: Vec<LinkId> = (0..self.links.len()).map(|i| LinkId(i as u32)).collect();
        self.owe_control(&all, 1);
        for l in all {
            self.service(l);
        }
    }

    /// Ingress nodes that now see a path link Down move their circuits.
    fn after_view_change(&mut self, changed: &[NodeId], rec: &LinkStateRecord) {
        if rec.status != LinkStatus::Down {
            return;
        }
        for &node in changed {
            let victims: Vec<CircuitId> = self
                .circuits
                .iter()
                .filter(|c| {
                    c.vc.ingress() == node
                        && matches!(c.vc.state, CircuitState::Active | CircuitState::Establishing)
                        && c.vc.links.contains(&rec.link)
                })
                .map(|c| c.vc.id)
                .collect();
            for c in victims {
                self.reroute_circuit(c, rec.link);
            }
        }
    }

    fn attack(&mut self, i: usize) {
        let ResolvedAttack { link: l, action, .. } = self.attacks[i].clone();
        let link = &mut self.links[l.index()];
        let cause = match action {
            AttackAction::Qber { value } => {
                link.profile.qber = value;
                format!("qber {value}")
            }
            AttackAction::Fail => {
                link.failed = true;
                "fail".to_string()
            }
            AttackAction::Channels { value } => {
                link.profile.num_quantum_channels = value;
                format!("channels {value}")
            }
            AttackAction::Restore => {
                link.profile.qber = 0.0;
                link.failed = false;
                "restore".to_string()
            }
        };
        self.refresh_link(l, &cause);
    }

    fn refresh_link(&mut self, l: LinkId, cause: &str) {
        let now = self.now;
        let link = &mut self.links[l.index()];
        let rate = if link.failed { 0.0 } else { effective_link_rate(&link.profile) };
        let status = if rate > 0.0 { LinkStatus::Up } else { LinkStatus::Down };
        if rate <= 0.0 {
            link.carry = 0.0;
        }
        let before = self.loads[l.index()];
        match (before.status, status) {
            (LinkStatus::Up, LinkStatus::Down) => link.down_since = Some(now),
            (LinkStatus::Down, LinkStatus::Up) => {
                if let Some(since) = link.down_since.take() {
                    link.downtime = link.downtime + (now - since);
                }
            }
            _ => {}
        }
        self.loads[l.index()].effective_rate = rate;
        self.loads[l.index()].status = status;
        self.trace_link(l, cause);
        if rate != before.effective_rate || status != before.status {
            self.originate(&[l]);
            if status == LinkStatus::Up {
                self.revalidate(l);
            }
        }
    }

    /// Moves the newest guaranteed circuits off `l` until its reservations fit.
    fn revalidate(&mut self, l: LinkId) {
        loop {
            let load = self.loads[l.index()];
            if load.reserved_rate <= self.admission.admission_factor * load.effective_rate * (1.0 + 1e-12) {
                return;
            }
            let victim = self
                .circuits
                .iter()
                .rev()
                .find(|c| c.vc.state != CircuitState::Closed && c.vc.reserved_rate > 0.0 && c.vc.links.contains(&l))
                .map(|c| c.vc.id);
            match victim {
                Some(c) => self.reroute_circuit(c, l),
                None => return,
            }
        }
    }

    fn sample(&mut self) {
        self.samples.push(Sample {
            time: secs(self.now),
            available_bits: self.links.iter().map(|l| l.store.available_bits()).collect(),
            fill_fraction: self.links.iter().map(|l| l.store.fill_fraction()).collect(),
        });
        if self.trace_level >= TraceLevel::Circuit {
            for (n, node) in self.routing.nodes.iter().enumerate() {
                let routes = node
                    .table
                    .routes
                    .iter()
                    .filter_map(|(dest, cands)| {
                        let best = cands.first()?;
                        Some(RouteEntry {
                            dest: self.node_names[dest.index()].clone(),
                            cost: best.cost.as_f64(),
                            path: best.nodes.iter().map(|x| self.node_names[x.index()].clone()).collect(),
                            next_hops: cands.iter().map(|r| self.node_names[r.next_hop().index()].clone()).collect(),
                        })
                    })
                    .collect();
                self.trace.push(TraceRecord::Routes {
                    time: secs(self.now),
                    node: self.node_names[n].clone(),
                    routes,
                });
            }
        }
        if let Some(interval) = self.cfg.sample_interval {
            let next = self.now + SimTime::from_secs_f64(interval);
            if next <= self.duration {
                self.schedule(next, EventKind::MetricSample);
            }
        }
    }

    /// Closes the books at the end of the run.
    pub fn finish(self) -> Outcome {
        let end = self.duration;
        let total = secs(end);
        let links: Vec<LinkMetrics> = self
            .links
            .iter()
            .zip(&self.loads)
            .map(|(l, load)| {
                let ledger = l.store.ledger();
                let stats = |d: usize| &l.channels[d].stats;
                let downtime = l.downtime + l.down_since.map_or(SimTime::ZERO, |s| end.saturating_sub(s));
                let generated = ledger.deposited - l.initial_bits;
                LinkMetrics {
                    id: l.name.clone(),
                    a: self.node_names[l.a.index()].clone(),
                    b: self.node_names[l.b.index()].clone(),
                    capacity_bits: l.store.capacity_bits(),
                    initial_bits: l.initial_bits,
                    key_generated: generated,
                    key_deposited: ledger.deposited,
                    key_discarded: ledger.discarded,
                    key_consumed: ledger.consumed,
                    key_available: l.store.available_bits(),
                    mean_generation_rate: generated as f64 / total,
                    blocks_issued: ledger.blocks_issued,
                    data_frames: stats(0).data_frames + stats(1).data_frames,
                    control_frames: stats(0).control_frames + stats(1).control_frames,
                    otp_bits: stats(0).otp_bits + stats(1).otp_bits,
                    data_key_bits: l.data_key_bits,
                    control_key_bits: l.control_key_bits,
                    control_backlog: l.control_debt,
                    auth_failures: stats(0).auth_failures + stats(1).auth_failures,
                    stale_frames: l.stale_frames,
                    downtime: secs(downtime),
                    final_status: status_str(load.status).to_string(),
                    final_effective_rate: load.effective_rate,
                    final_reserved_rate: load.reserved_rate,
                    final_qber: l.profile.qber,
                }
            })
            .collect();
        let circuits = self
            .circuits
            .iter()
            .map(|c| {
                let vc = &c.vc;
                let up_from = c.established_at.unwrap_or(c.requested_at);
                let up_to = c.closed_at.unwrap_or(end);
                let span = secs(up_to.saturating_sub(up_from));
                CircuitMetrics {
                    id: vc.id.to_string(),
                    demand: c.demand,
                    ingress: self.node_names[vc.ingress().index()].clone(),
                    egress: self.node_names[vc.egress().index()].clone(),
                    source_app: vc.request.source_app.clone(),
                    dest_port: vc.request.dest_port,
                    service: vc.request.service.clone(),
                    final_state: state_str(vc.state).to_string(),
                    requested_at: secs(c.requested_at),
                    established_at: c.established_at.map(secs),
                    establishment_latency: c.established_at.map(|t| secs(t - c.requested_at)),
                    path: self.path_names(&vc.path),
                    hops: vc.links.len(),
                    contracted_rate: vc.request.service.guaranteed_rate(),
                    reserved_rate: c.contract_reserved,
                    emitted_packets: c.emitted,
                    delivered_packets: c.delivered_packets,
                    delivered_bits: c.delivered_bits,
                    delivered_rate: if span > 0.0 { c.delivered_bits as f64 / span } else { 0.0 },
                    drops: c.policed_drops + c.abandoned,
                    policed_drops: c.policed_drops,
                    abandoned_packets: c.abandoned,
                    stale_drops: c.stale_drops,
                    duplicate_drops: c.duplicate_drops,
                    fidelity_violations: c.fidelity_violations,
                    in_flight_at_end: c.unacked.len() as u64,
                    reroute_count: c.reroutes.len(),
                    reroutes: c.reroutes.clone(),
                    closed_at: c.closed_at.map(secs),
                    teardown_reason: c.teardown_reason.clone(),
                    notifications: c.notifications.clone(),
                    delivered_digest: format!("{:016x}", c.digest.0),
                }
            })
            .collect();
        let control_frames = links.iter().map(|l| l.control_frames).sum();
        let control_key_bits = links.iter().map(|l| l.control_key_bits).sum();
        let otp_payload_bits = links.iter().map(|l| l.otp_bits).sum();
        let n = self.net;
        Outcome {
            metrics: Metrics {
                seed: self.seed,
                duration: total,
                links,
                circuits,
                network: NetworkMetrics {
                    requests: n.requests,
                    admitted: n.admitted,
                    rejections: n.rejections,
                    rejected: n.rejected,
                    reroutes: n.reroutes,
                    teardowns: n.teardowns,
                    lsa_floods: n.lsa_floods,
                    control_frames,
                    control_key_bits,
                    session_bits_delivered: n.session_bits,
                    session_bit_hops: n.session_bit_hops,
                    otp_payload_bits,
                    events_processed: n.events,
                    causality_violations: n.causality_violations,
                    reservation_violations: n.reservation_violations,
                },
                samples: self.samples,
            },
            trace: self.trace,
        }
    }
}

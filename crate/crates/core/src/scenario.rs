//! Declarative simulation input and its validation.
//!
//! Units are fixed by the schema: rates in bits/s, lengths in km, times in
//! seconds, key amounts in bits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::forwarding::{AdmissionConfig, PathRequest, ServiceClass, DEFAULT_ADMISSION_FACTOR};
use crate::keystore::DEFAULT_CAPACITY_BITS;
use crate::link_model::{LinkProfile, DEFAULT_QBER_THRESHOLD};
use crate::q3p::{Q3pConfig, DEFAULT_AUTH_TAG_KEY_BITS, DEFAULT_MAX_FRAME_PAYLOAD_BITS, DEFAULT_WINDOW};
use crate::routing::{CostWeights, RouteParams};
use crate::sim::TraceLevel;
use crate::time::SimTime;
use crate::{LinkId, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub duration: f64,
    pub topology: Topology,
    #[serde(default)]
    pub demands: Vec<Demand>,
    #[serde(default)]
    pub attacks: Vec<AttackEvent>,
    #[serde(default)]
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    #[default]
    Qbb,
    /// Access node: exactly one link, never relays.
    Qan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub kind: NodeKind,
}

fn one() -> u32 {
    1
}

fn default_threshold() -> f64 {
    DEFAULT_QBER_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub a: String,
    pub b: String,
    pub length: f64,
    pub r0: f64,
    pub lambda_qkd: f64,
    pub d_max: f64,
    #[serde(default = "one")]
    pub num_quantum_channels: u32,
    #[serde(default)]
    pub qber: f64,
    #[serde(default = "default_threshold")]
    pub qber_threshold: f64,
    /// Falls back to `config.default_capacity_bits`.
    #[serde(default)]
    pub capacity_bits: Option<u64>,
    /// Key already in the store at t=0.
    #[serde(default)]
    pub initial_bits: u64,
    /// One-way classical-channel delay, s. Falls back to `config.default_latency`.
    #[serde(default)]
    pub latency: Option<f64>,
    #[serde(default)]
    pub window: Option<u32>,
}

impl LinkSpec {
    pub fn profile(&self) -> LinkProfile {
        LinkProfile {
            r0: self.r0,
            lambda_qkd: self.lambda_qkd,
            d_max: self.d_max,
            length: self.length,
            num_quantum_channels: self.num_quantum_channels,
            qber: self.qber,
            qber_threshold: self.qber_threshold,
        }
    }
}

fn default_app() -> String {
    "app".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demand {
    /// Request arrival time, s.
    pub time: f64,
    pub ingress: String,
    #[serde(default = "default_app")]
    pub source_app: String,
    pub dest_node: String,
    #[serde(default)]
    pub dest_port: u16,
    pub key_block_length: usize,
    pub service: ServiceClass,
    /// Key-request arrivals for best-effort demands; defaults to periodic at `lambda_k`.
    #[serde(default)]
    pub pattern: Option<TrafficPattern>,
    /// Circuit is released at this time; otherwise it lives to the end.
    #[serde(default)]
    pub stop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficPattern {
    /// One request every `1 / rate` seconds.
    Periodic { rate: f64 },
    /// Exponential inter-arrival times with mean `1 / rate`.
    Poisson { rate: f64 },
    /// Explicit absolute request times.
    Times { times: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEvent {
    pub time: f64,
    pub link: String,
    pub action: AttackAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackAction {
    /// Eavesdropper sets the link's QBER.
    Qber { value: f64 },
    /// Physical cut of the quantum channels.
    Fail,
    /// Changes the number of working quantum channels.
    Channels { value: u32 },
    /// QBER back to 0 and any cut repaired.
    Restore,
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $val:expr;)*) => {
        $(fn $name() -> $ty { $val })*
    };
}

defaults! {
    d_tag: usize = DEFAULT_AUTH_TAG_KEY_BITS;
    d_frame: usize = DEFAULT_MAX_FRAME_PAYLOAD_BITS;
    d_factor: f64 = DEFAULT_ADMISSION_FACTOR;
    d_w: f64 = 1.0;
    d_rref: f64 = 1.0e4;
    d_k: usize = 2;
    d_prop: f64 = 0.05;
    d_lsa: f64 = 1.0;
    d_tick: f64 = 0.01;
    d_cap: u64 = DEFAULT_CAPACITY_BITS;
    d_latency: f64 = 0.001;
    d_window: u32 = DEFAULT_WINDOW;
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "d_tag")]
    pub auth_tag_key_bits: usize,
    #[serde(default = "d_frame")]
    pub max_frame_payload_bits: usize,
    #[serde(default = "d_factor")]
    pub admission_factor: f64,
    #[serde(default = "d_w")]
    pub w_load: f64,
    #[serde(default = "d_w")]
    pub w_cap: f64,
    #[serde(default = "d_rref")]
    pub r_ref: f64,
    #[serde(default = "d_k")]
    pub k_paths: usize,
    /// Link-state flooding delay, s.
    #[serde(default = "d_prop")]
    pub propagation_delay: f64,
    /// Periodic link-state refresh, s; 0 disables refreshes.
    #[serde(default = "d_lsa")]
    pub lsa_interval: f64,
    /// Key generation granularity, s.
    #[serde(default = "d_tick")]
    pub keygen_tick: f64,
    #[serde(default = "d_cap")]
    pub default_capacity_bits: u64,
    #[serde(default = "d_latency")]
    pub default_latency: f64,
    #[serde(default = "d_window")]
    pub default_window: u32,
    /// Key-store fill samples (and routing snapshots in the trace), s.
    #[serde(default)]
    pub sample_interval: Option<f64>,
    #[serde(default)]
    pub trace: TraceLevel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            auth_tag_key_bits: d_tag(),
            max_frame_payload_bits: d_frame(),
            admission_factor: d_factor(),
            w_load: d_w(),
            w_cap: d_w(),
            r_ref: d_rref(),
            k_paths: d_k(),
            propagation_delay: d_prop(),
            lsa_interval: d_lsa(),
            keygen_tick: d_tick(),
            default_capacity_bits: d_cap(),
            default_latency: d_latency(),
            default_window: d_window(),
            sample_interval: None,
            trace: TraceLevel::None,
        }
    }
}

impl SimConfig {
    pub fn q3p(&self) -> Q3pConfig {
        Q3pConfig { max_frame_payload_bits: self.max_frame_payload_bits, auth_tag_key_bits: self.auth_tag_key_bits }
    }

    pub fn admission(&self) -> AdmissionConfig {
        AdmissionConfig { admission_factor: self.admission_factor }
    }

    pub fn route_params(&self) -> RouteParams {
        RouteParams {
            weights: CostWeights { w_load: self.w_load, w_cap: self.w_cap, r_ref: self.r_ref },
            k_paths: self.k_paths,
        }
    }
}

/// A malformed scenario, located by the path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl ValidationError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> ValidationError {
        ValidationError { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl core::error::Error for ValidationError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ResolvedLink {
    pub name: String,
    pub a: NodeId,
    pub b: NodeId,
    pub profile: LinkProfile,
    pub capacity_bits: u64,
    pub initial_bits: u64,
    pub latency: SimTime,
    pub window: u32,
}

#[derive(Debug, Clone)]
pub struct ResolvedDemand {
    pub time: SimTime,
    pub request: PathRequest,
    pub pattern: Option<TrafficPattern>,
    pub stop: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct ResolvedAttack {
    pub time: SimTime,
    pub link: LinkId,
    pub action: AttackAction,
}

/// A validated scenario with names replaced by dense ids.
///
/// Node ids follow ascending node name so that comparing id sequences is
/// comparing name sequences.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub duration: SimTime,
    pub node_names: Vec<String>,
    pub node_kinds: Vec<NodeKind>,
    pub links: Vec<ResolvedLink>,
    pub demands: Vec<ResolvedDemand>,
    pub attacks: Vec<ResolvedAttack>,
    pub config: SimConfig,
    pub warnings: Vec<Warning>,
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn finite_pos(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn check_config(c: &SimConfig) -> Result<(), ValidationError> {
    let p = |f: &str| format!("config.{f}");
    if c.auth_tag_key_bits == 0 {
        return Err(ValidationError::new(p("auth_tag_key_bits"), "must be positive"));
    }
    if c.max_frame_payload_bits == 0 {
        return Err(ValidationError::new(p("max_frame_payload_bits"), "must be positive"));
    }
    if !(c.admission_factor > 0.0 && c.admission_factor <= 1.0) {
        return Err(ValidationError::new(p("admission_factor"), "must lie in (0, 1]"));
    }
    for (name, v) in [("w_load", c.w_load), ("w_cap", c.w_cap)] {
        if !finite_nonneg(v) {
            return Err(ValidationError::new(p(name), "must be a non-negative number"));
        }
    }
    if !finite_pos(c.r_ref) {
        return Err(ValidationError::new(p("r_ref"), "must be positive"));
    }
    if c.k_paths == 0 {
        return Err(ValidationError::new(p("k_paths"), "must be at least 1"));
    }
    if !finite_nonneg(c.propagation_delay) {
        return Err(ValidationError::new(p("propagation_delay"), "must be non-negative"));
    }
    if !finite_nonneg(c.lsa_interval) {
        return Err(ValidationError::new(p("lsa_interval"), "must be non-negative"));
    }
    if !finite_pos(c.keygen_tick) || SimTime::from_secs_f64(c.keygen_tick) == SimTime::ZERO {
        return Err(ValidationError::new(p("keygen_tick"), "must be at least one microsecond"));
    }
    if !finite_nonneg(c.default_latency) {
        return Err(ValidationError::new(p("default_latency"), "must be non-negative"));
    }
    if c.default_window == 0 {
        return Err(ValidationError::new(p("default_window"), "must be at least 1"));
    }
    if let Some(s) = c.sample_interval {
        if !finite_pos(s) || SimTime::from_secs_f64(s) == SimTime::ZERO {
            return Err(ValidationError::new(p("sample_interval"), "must be at least one microsecond"));
        }
    }
    Ok(())
}

impl Scenario {
    /// Full schema and referential-integrity check.
    pub fn validate(&self) -> Result<Resolved, ValidationError> {
        if !finite_pos(self.duration) {
            return Err(ValidationError::new("duration", "must be a positive number of seconds"));
        }
        let duration = SimTime::from_secs_f64(self.duration);
        check_config(&self.config)?;
        let in_run = |path: String, t: f64| -> Result<SimTime, ValidationError> {
            if !finite_nonneg(t) || t > self.duration {
                return Err(ValidationError::new(path, format!("time {t} outside [0, {}]", self.duration)));
            }
            Ok(SimTime::from_secs_f64(t))
        };

        if self.topology.nodes.is_empty() {
            return Err(ValidationError::new("topology.nodes", "at least one node is required"));
        }
        let mut seen = BTreeMap::new();
        for (i, n) in self.topology.nodes.iter().enumerate() {
            if n.id.is_empty() {
                return Err(ValidationError::new(format!("topology.nodes[{i}].id"), "must not be empty"));
            }
            if seen.insert(n.id.as_str(), i).is_some() {
                return Err(ValidationError::new(
                    format!("topology.nodes[{i}].id"),
                    format!("duplicate node id {:?}", n.id),
                ));
            }
        }
        // BTreeMap iteration is name order.
        let names: Vec<String> = seen.keys().map(|s| s.to_string()).collect();
        let index: BTreeMap<&str, NodeId> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), NodeId(i as u32))).collect();
        let kinds: Vec<NodeKind> = names.iter().map(|n| self.topology.nodes[seen[n.as_str()]].kind).collect();

        let mut warnings = Vec::new();
        let mut link_ids = BTreeMap::new();
        let mut pairs = BTreeSet::new();
        let mut degree = alloc::vec![0usize; names.len()];
        let mut links = Vec::with_capacity(self.topology.links.len());
        for (i, l) in self.topology.links.iter().enumerate() {
            let path = |f: &str| format!("topology.links[{i}].{f}");
            if l.id.is_empty() {
                return Err(ValidationError::new(path("id"), "must not be empty"));
            }
            if link_ids.insert(l.id.as_str(), LinkId(i as u32)).is_some() {
                return Err(ValidationError::new(path("id"), format!("duplicate link id {:?}", l.id)));
            }
            let a = *index
                .get(l.a.as_str())
                .ok_or_else(|| ValidationError::new(path("a"), format!("unknown node {:?}", l.a)))?;
            let b = *index
                .get(l.b.as_str())
                .ok_or_else(|| ValidationError::new(path("b"), format!("unknown node {:?}", l.b)))?;
            if a == b {
                return Err(ValidationError::new(path("b"), "self-loop links are not allowed"));
            }
            if !pairs.insert((a.min(b), a.max(b))) {
                return Err(ValidationError::new(
                    path("b"),
                    format!("second link between {:?} and {:?}; use num_quantum_channels", l.a, l.b),
                ));
            }
            degree[a.index()] += 1;
            degree[b.index()] += 1;
            let profile = l.profile();
            if let Err(e) = profile.validate() {
                use crate::link_model::ProfileError as P;
                let field = match e {
                    P::R0(_) => "r0",
                    P::Lambda(_) => "lambda_qkd",
                    P::DMax(_) => "d_max",
                    P::Length(_) => "length",
                    P::Channels => "num_quantum_channels",
                    P::Qber(_) => "qber",
                    P::Threshold(_) => "qber_threshold",
                };
                return Err(ValidationError::new(path(field), e.to_string()));
            }
            if profile.beyond_reach() {
                warnings.push(Warning {
                    path: path("length"),
                    message: format!(
                        "link {:?} length {} km exceeds d_max {} km; it generates zero key",
                        l.id, l.length, l.d_max
                    ),
                });
            }
            if profile.qber_exceeded() {
                warnings.push(Warning {
                    path: path("qber"),
                    message: format!("link {:?} starts at or above its QBER threshold; it generates zero key", l.id),
                });
            }
            let capacity_bits = l.capacity_bits.unwrap_or(self.config.default_capacity_bits);
            if l.initial_bits > capacity_bits {
                return Err(ValidationError::new(path("initial_bits"), "exceeds capacity_bits"));
            }
            let latency = l.latency.unwrap_or(self.config.default_latency);
            if !finite_nonneg(latency) {
                return Err(ValidationError::new(path("latency"), "must be non-negative"));
            }
            let window = l.window.unwrap_or(self.config.default_window);
            if window == 0 {
                return Err(ValidationError::new(path("window"), "must be at least 1"));
            }
            links.push(ResolvedLink {
                name: l.id.clone(),
                a,
                b,
                profile,
                capacity_bits,
                initial_bits: l.initial_bits,
                latency: SimTime::from_secs_f64(latency),
                window,
            });
        }
        for (i, kind) in kinds.iter().enumerate() {
            if *kind == NodeKind::Qan && degree[i] != 1 {
                return Err(ValidationError::new(
                    format!("topology.nodes[{}].kind", seen[names[i].as_str()]),
                    format!("access node {:?} must have exactly one link, has {}", names[i], degree[i]),
                ));
            }
        }

        let mut demands = Vec::with_capacity(self.demands.len());
        for (i, d) in self.demands.iter().enumerate() {
            let path = |f: &str| format!("demands[{i}].{f}");
            let time = in_run(path("time"), d.time)?;
            let ingress = *index
                .get(d.ingress.as_str())
                .ok_or_else(|| ValidationError::new(path("ingress"), format!("unknown node {:?}", d.ingress)))?;
            let dest = *index
                .get(d.dest_node.as_str())
                .ok_or_else(|| ValidationError::new(path("dest_node"), format!("unknown node {:?}", d.dest_node)))?;
            if d.key_block_length == 0 {
                return Err(ValidationError::new(path("key_block_length"), "must be positive"));
            }
            d.service.validate().map_err(|e| ValidationError::new(path("service"), e.to_string()))?;
            if let Some(p) = &d.pattern {
                match p {
                    TrafficPattern::Periodic { rate } | TrafficPattern::Poisson { rate } => {
                        if !finite_pos(*rate) {
                            return Err(ValidationError::new(path("pattern.rate"), "must be positive"));
                        }
                    }
                    TrafficPattern::Times { times } => {
                        for (j, t) in times.iter().enumerate() {
                            in_run(format!("demands[{i}].pattern.times[{j}]"), *t)?;
                        }
                    }
                }
                if matches!(d.service, ServiceClass::GuaranteedRate { .. }) {
                    return Err(ValidationError::new(
                        path("pattern"),
                        "guaranteed-rate demands are paced by their contract",
                    ));
                }
            }
            let stop = match d.stop {
                Some(s) => {
                    let s = in_run(path("stop"), s)?;
                    if s < time {
                        return Err(ValidationError::new(path("stop"), "precedes the request time"));
                    }
                    Some(s)
                }
                None => None,
            };
            demands.push(ResolvedDemand {
                time,
                request: PathRequest {
                    source_app: d.source_app.clone(),
                    ingress,
                    dest_node: dest,
                    dest_port: d.dest_port,
                    service: d.service.clone(),
                    key_block_length: d.key_block_length,
                },
                pattern: d.pattern.clone(),
                stop,
            });
        }

        let mut attacks = Vec::with_capacity(self.attacks.len());
        for (i, a) in self.attacks.iter().enumerate() {
            let path = |f: &str| format!("attacks[{i}].{f}");
            let time = in_run(path("time"), a.time)?;
            let link = *link_ids
                .get(a.link.as_str())
                .ok_or_else(|| ValidationError::new(path("link"), format!("unknown link {:?}", a.link)))?;
            match a.action {
                AttackAction::Qber { value } if !(0.0..=0.5).contains(&value) => {
                    return Err(ValidationError::new(path("action.value"), "qber must lie in [0, 0.5]"));
                }
                AttackAction::Channels { value: 0 } => {
                    return Err(ValidationError::new(path("action.value"), "use fail to remove every channel"));
                }
                _ => {}
            }
            attacks.push(ResolvedAttack { time, link, action: a.action.clone() });
        }

        Ok(Resolved {
            seed: self.seed,
            duration,
            node_names: names,
            node_kinds: kinds,
            links,
            demands,
            attacks,
            config: self.config.clone(),
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn link(id: &str, a: &str, b: &str) -> LinkSpec {
        LinkSpec {
            id: id.into(),
            a: a.into(),
            b: b.into(),
            length: 10.0,
            r0: 1e5,
            lambda_qkd: 15.0,
            d_max: 120.0,
            num_quantum_channels: 1,
            qber: 0.0,
            qber_threshold: 0.11,
            capacity_bits: None,
            initial_bits: 0,
            latency: None,
            window: None,
        }
    }

    fn node(id: &str) -> NodeSpec {
        NodeSpec { id: id.into(), kind: NodeKind::Qbb }
    }

    fn base() -> Scenario {
        Scenario {
            seed: 1,
            duration: 10.0,
            topology: Topology { nodes: vec![node("B"), node("A"), node("C")], links: vec![link("AB", "A", "B")] },
            demands: vec![],
            attacks: vec![],
            config: SimConfig::default(),
        }
    }

    #[test]
    fn ids_follow_name_order() {
        let r = base().validate().unwrap();
        assert_eq!(r.node_names, vec!["A", "B", "C"]);
        assert_eq!(r.links[0].a, NodeId(0));
        assert_eq!(r.links[0].b, NodeId(1));
        assert_eq!(r.links[0].capacity_bits, DEFAULT_CAPACITY_BITS);
        assert_eq!(r.links[0].latency, SimTime(1000));
    }

    #[test]
    fn duplicate_node_rejected() {
        let mut s = base();
        s.topology.nodes.push(node("A"));
        assert_eq!(s.validate().unwrap_err().path, "topology.nodes[3].id");
    }

    #[test]
    fn unknown_endpoint_names_field() {
        let mut s = base();
        s.topology.links.push(link("AX", "A", "X"));
        let e = s.validate().unwrap_err();
        assert_eq!(e.path, "topology.links[1].b");
    }

    #[test]
    fn too_long_link_is_a_warning() {
        let mut s = base();
        s.topology.links[0].length = 150.0;
        let r = s.validate().unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].path, "topology.links[0].length");
    }

    #[test]
    fn parallel_links_rejected() {
        let mut s = base();
        s.topology.links.push(link("BA", "B", "A"));
        assert_eq!(s.validate().unwrap_err().path, "topology.links[1].b");
    }

    #[test]
    fn access_node_degree() {
        let mut s = base();
        s.topology.nodes[2].kind = NodeKind::Qan;
        assert_eq!(s.validate().unwrap_err().path, "topology.nodes[2].kind");
        s.topology.links.push(link("BC", "B", "C"));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn event_times_within_run() {
        let mut s = base();
        s.attacks.push(AttackEvent { time: 11.0, link: "AB".into(), action: AttackAction::Fail });
        assert_eq!(s.validate().unwrap_err().path, "attacks[0].time");
        s.attacks[0].time = 5.0;
        s.attacks[0].link = "ZZ".into();
        assert_eq!(s.validate().unwrap_err().path, "attacks[0].link");
    }

    #[test]
    fn bad_profile_field_reported() {
        let mut s = base();
        s.topology.links[0].lambda_qkd = 0.0;
        assert_eq!(s.validate().unwrap_err().path, "topology.links[0].lambda_qkd");
    }

    #[test]
    fn demand_checks() {
        let mut s = base();
        s.demands.push(Demand {
            time: 1.0,
            ingress: "A".into(),
            source_app: "app".into(),
            dest_node: "B".into(),
            dest_port: 1,
            key_block_length: 0,
            service: ServiceClass::GuaranteedRate { bits_per_period: 1, period: 1.0 },
            pattern: None,
            stop: None,
        });
        assert_eq!(s.validate().unwrap_err().path, "demands[0].key_block_length");
        s.demands[0].key_block_length = 8;
        s.demands[0].stop = Some(0.5);
        assert_eq!(s.validate().unwrap_err().path, "demands[0].stop");
        s.demands[0].stop = None;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn zero_duration_rejected() {
        let mut s = base();
        s.duration = 0.0;
        assert_eq!(s.validate().unwrap_err().path, "duration");
    }
}

//! Link-state routing over the QBB graph.
//!
//! Every node holds a view of all link records and derives its routing table
//! from it. Link cost penalises depleted key stores and little residual
//! capacity, which pushes paths away from busy links even when that means
//! more hops. Costs are quantised to integer micro-units before summing so
//! path comparisons and tie-breaks are exact.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::{LinkId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkStatus {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStateRecord {
    pub link: LinkId,
    pub endpoints: (NodeId, NodeId),
    /// bits/s.
    pub effective_rate: f64,
    pub fill_fraction: f64,
    /// bits/s committed to guaranteed-rate circuits.
    pub reserved_rate: f64,
    pub status: LinkStatus,
    /// Origination counter; a view only accepts strictly newer records.
    pub seq: u64,
}

impl LinkStateRecord {
    pub fn other_end(&self, node: NodeId) -> Option<NodeId> {
        match self.endpoints {
            (a, b) if a == node => Some(b),
            (a, b) if b == node => Some(a),
            _ => None,
        }
    }

    pub fn residual_rate(&self) -> f64 {
        match self.status {
            LinkStatus::Up => self.effective_rate - self.reserved_rate,
            LinkStatus::Down => 0.0,
        }
    }

    fn same_content(&self, other: &LinkStateRecord) -> bool {
        self.link == other.link
            && self.endpoints == other.endpoints
            && self.effective_rate == other.effective_rate
            && self.fill_fraction == other.fill_fraction
            && self.reserved_rate == other.reserved_rate
            && self.status == other.status
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_load: f64,
    pub w_cap: f64,
    /// bits/s.
    pub r_ref: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { w_load: 1.0, w_cap: 1.0, r_ref: 1.0e4 }
    }
}

/// `1 + w_load (1 - fill) + w_cap r_ref / residual`, or `None` when the link
/// is down or has no residual capacity.
pub fn link_cost(record: &LinkStateRecord, weights: &CostWeights) -> Option<f64> {
    if record.status == LinkStatus::Down {
        return None;
    }
    let residual = record.residual_rate();
    if !(residual > 0.0) {
        return None;
    }
    Some(1.0 + weights.w_load * (1.0 - record.fill_fraction) + weights.w_cap * (weights.r_ref / residual))
}

/// Path cost in millionths of a cost unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct PathCost(pub u64);

pub const COST_SCALE: f64 = 1.0e6;

impl PathCost {
    pub fn quantize(cost: f64) -> PathCost {
        PathCost(libm::round(cost * COST_SCALE) as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / COST_SCALE
    }
}

/// An undirected graph with integer edge costs.
#[derive(Debug, Clone, Default)]
pub struct CostGraph {
    adjacency: BTreeMap<NodeId, Vec<(NodeId, LinkId, PathCost)>>,
    /// Nodes that may originate or terminate paths but never relay them.
    stubs: BTreeSet<NodeId>,
}

impl CostGraph {
    pub fn new() -> CostGraph {
        CostGraph::default()
    }

    pub fn add_node(&mut self, node: NodeId) {
        self.adjacency.entry(node).or_default();
    }

    pub fn add_edge(&mut self, link: LinkId, a: NodeId, b: NodeId, cost: PathCost) {
        assert!(cost.0 > 0, "edge costs must be positive");
        self.adjacency.entry(a).or_default().push((b, link, cost));
        self.adjacency.entry(b).or_default().push((a, link, cost));
    }

    pub fn set_stub(&mut self, node: NodeId) {
        self.stubs.insert(node);
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, LinkId, PathCost)] {
        self.adjacency.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn is_stub(&self, node: NodeId) -> bool {
        self.stubs.contains(&node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Route {
    pub cost: PathCost,
    /// Full node sequence, source first.
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
}

impl Route {
    pub fn next_hop(&self) -> NodeId {
        self.nodes[1]
    }

    pub fn first_link(&self) -> LinkId {
        self.links[0]
    }
}

/// Minimum-cost paths from `source` to every reachable node, skipping
/// `excluded` links. Ties go to the lexicographically smallest node sequence.
pub fn shortest_paths(
    graph: &CostGraph,
    source: NodeId,
    excluded: &BTreeSet<LinkId>,
) -> BTreeMap<NodeId, Route> {
    let mut best: BTreeMap<NodeId, Route> = BTreeMap::new();
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    let start = Route { cost: PathCost(0), nodes: vec![source], links: Vec::new() };
    best.insert(source, start.clone());
    heap.push(Reverse((start.cost, start.nodes.clone(), start.links)));

    while let Some(Reverse((cost, nodes, links))) = heap.pop() {
        let here = *nodes.last().expect("paths are nonempty");
        if !settled.insert(here) {
            continue;
        }
        if here != source && graph.is_stub(here) {
            continue;
        }
        for &(next, link, w) in graph.neighbors(here) {
            if settled.contains(&next) || excluded.contains(&link) {
                continue;
            }
            let mut cand_nodes = nodes.clone();
            cand_nodes.push(next);
            let cand_cost = PathCost(cost.0 + w.0);
            let better = match best.get(&next) {
                None => true,
                Some(cur) => (cand_cost, &cand_nodes) < (cur.cost, &cur.nodes),
            };
            if better {
                let mut cand_links = links.clone();
                cand_links.push(link);
                best.insert(next, Route { cost: cand_cost, nodes: cand_nodes.clone(), links: cand_links.clone() });
                heap.push(Reverse((cand_cost, cand_nodes, cand_links)));
            }
        }
    }
    best.remove(&source);
    best
}

/// Up to `k` link-disjoint routes to `dest`, cheapest first, found by
/// repeatedly removing the links of the previous pick.
pub fn disjoint_routes(graph: &CostGraph, source: NodeId, dest: NodeId, k: usize) -> Vec<Route> {
    let mut excluded = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < k {
        let Some(route) = shortest_paths(graph, source, &excluded).remove(&dest) else {
            break;
        };
        excluded.extend(route.links.iter().copied());
        out.push(route);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteParams {
    pub weights: CostWeights,
    pub k_paths: usize,
}

impl Default for RouteParams {
    fn default() -> Self {
        RouteParams { weights: CostWeights::default(), k_paths: 2 }
    }
}

/// A node's picture of the network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkView {
    pub nodes: BTreeSet<NodeId>,
    pub stubs: BTreeSet<NodeId>,
    pub records: BTreeMap<LinkId, LinkStateRecord>,
}

impl NetworkView {
    pub fn cost_graph(&self, weights: &CostWeights) -> CostGraph {
        let mut g = CostGraph::new();
        for &n in &self.nodes {
            g.add_node(n);
        }
        for &s in &self.stubs {
            g.set_stub(s);
        }
        for rec in self.records.values() {
            if let Some(c) = link_cost(rec, weights) {
                let q = PathCost::quantize(c).max(PathCost(1));
                g.add_edge(rec.link, rec.endpoints.0, rec.endpoints.1, q);
            }
        }
        g
    }

    /// Installs `record` if it is newer than what the view holds. Returns
    /// true when the view's content (not just the sequence number) changed.
    pub fn apply(&mut self, record: &LinkStateRecord) -> bool {
        match self.records.get_mut(&record.link) {
            Some(held) if held.seq >= record.seq => false,
            Some(held) => {
                let changed = !held.same_content(record);
                *held = record.clone();
                changed
            }
            None => {
                self.records.insert(record.link, record.clone());
                true
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub source: NodeId,
    /// Candidate routes per destination, cheapest first.
    pub routes: BTreeMap<NodeId, Vec<Route>>,
}

impl RoutingTable {
    pub fn candidates(&self, dest: NodeId) -> &[Route] {
        self.routes.get(&dest).map_or(&[], Vec::as_slice)
    }

    pub fn best_cost(&self, dest: NodeId) -> Option<PathCost> {
        self.candidates(dest).first().map(|r| r.cost)
    }

    pub fn next_hops(&self, dest: NodeId) -> Vec<NodeId> {
        self.candidates(dest).iter().map(Route::next_hop).collect()
    }

    pub fn uses_link(&self, link: LinkId) -> bool {
        self.routes.values().flatten().any(|r| r.links.contains(&link))
    }
}

pub fn compute_routes(view: &NetworkView, source: NodeId, params: &RouteParams) -> RoutingTable {
    let graph = view.cost_graph(&params.weights);
    let mut routes = BTreeMap::new();
    if params.k_paths == 0 {
        return RoutingTable { source, routes };
    }
    let reachable = shortest_paths(&graph, source, &BTreeSet::new());
    for dest in reachable.keys() {
        let cands = disjoint_routes(&graph, source, *dest, params.k_paths);
        routes.insert(*dest, cands);
    }
    RoutingTable { source, routes }
}

/// Per-node views and tables.
#[derive(Debug, Clone)]
pub struct NodeRouting {
    pub view: NetworkView,
    pub table: RoutingTable,
    /// Bumped every time the table is recomputed.
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct RoutingState {
    pub params: RouteParams,
    pub nodes: Vec<NodeRouting>,
}

impl RoutingState {
    /// Every node starts from the same full view.
    pub fn new(initial: NetworkView, params: RouteParams) -> RoutingState {
        let nodes = initial
            .nodes
            .iter()
            .map(|&n| NodeRouting {
                table: compute_routes(&initial, n, &params),
                view: initial.clone(),
                version: 0,
            })
            .collect();
        RoutingState { params, nodes }
    }

    pub fn table(&self, node: NodeId) -> &RoutingTable {
        &self.nodes[node.index()].table
    }

    pub fn view(&self, node: NodeId) -> &NetworkView {
        &self.nodes[node.index()].view
    }

    /// Delivers `record` to `targets`; returns the nodes whose tables were
    /// recomputed because their view changed.
    pub fn handle_link_event(
        &mut self,
        record: &LinkStateRecord,
        targets: impl IntoIterator<Item = NodeId>,
    ) -> Vec<NodeId> {
        let mut changed = Vec::new();
        for node in targets {
            let state = &mut self.nodes[node.index()];
            if state.view.apply(record) {
                state.table = compute_routes(&state.view, node, &self.params);
                state.version += 1;
                changed.push(node);
            }
        }
        changed
    }
}

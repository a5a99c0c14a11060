//! Physical infrastructure model: nodes, conduits, fiber links, circuits.
//!
//! The graph tracks per-link bandwidth and wavelength counters and keeps
//! per-conduit annotations (max/available bandwidth, total/free strands)
//! derived from member links. All mutations go through `allocate`,
//! `release` and `reroute_link`, which re-derive the annotations they touch.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::Bps;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(NodeId);
string_id!(ConduitId);
string_id!(LinkId);
string_id!(SiteId);

/// Identifier of one logical circuit (a wavelength on a link).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircuitId(pub u64);

impl fmt::Display for CircuitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Identifier of one end-to-end allocation (a set of circuits backing a lease).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocationId(pub u64);

impl fmt::Display for AllocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Identifier of a lease, assigned by global control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeaseId(pub u64);

impl fmt::Display for LeaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lease{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("dangling reference: {kind} `{from}` -> `{to}`")]
    DanglingReference { kind: &'static str, from: String, to: String },
    #[error("duplicate wavelength {wavelength} declared on link `{link}`")]
    DuplicateWavelength { link: LinkId, wavelength: u32 },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown link `{0}`")]
    UnknownLink(LinkId),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("resources on link `{link}` consumed between check and allocate")]
    ConcurrentDepletion { link: LinkId },
    #[error("no free wavelength on link `{link}`")]
    WavelengthExhausted { link: LinkId },
    #[error("allocation {0} is not live")]
    DoubleRelease(AllocationId),
    #[error("seller `{seller}` does not own link `{link}`")]
    SellerConflict { seller: String, link: LinkId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkStatus {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub site: SiteId,
    pub geo: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conduit {
    pub id: ConduitId,
    pub endpoints: (NodeId, NodeId),
    pub links: Vec<LinkId>,
}

impl Conduit {
    pub fn joins(&self, a: &NodeId, b: &NodeId) -> bool {
        (&self.endpoints.0 == a && &self.endpoints.1 == b)
            || (&self.endpoints.0 == b && &self.endpoints.1 == a)
    }

    /// The far end when entering from `node`, if this conduit touches it.
    pub fn other_end(&self, node: &NodeId) -> Option<&NodeId> {
        if &self.endpoints.0 == node {
            Some(&self.endpoints.1)
        } else if &self.endpoints.1 == node {
            Some(&self.endpoints.0)
        } else {
            None
        }
    }
}

/// A single strand of fiber inside a conduit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberLink {
    pub id: LinkId,
    pub conduit: ConduitId,
    pub seller: String,
    pub max_bandwidth_bps: Bps,
    pub available_bandwidth_bps: Bps,
    pub wavelength_capacity: u32,
    pub wavelengths_in_use: BTreeSet<u32>,
    pub status: LinkStatus,
}

impl FiberLink {
    pub fn free_wavelengths(&self) -> u32 {
        self.wavelength_capacity - self.wavelengths_in_use.len() as u32
    }

    pub fn is_up(&self) -> bool {
        self.status == LinkStatus::Up
    }

    fn lowest_free_wavelength(&self, taken: &BTreeSet<u32>) -> Option<u32> {
        (0..self.wavelength_capacity)
            .find(|w| !self.wavelengths_in_use.contains(w) && !taken.contains(w))
    }
}

/// One logical connection occupying a unique wavelength on a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub id: CircuitId,
    pub link: LinkId,
    pub wavelength: u32,
    pub bandwidth_bps: Bps,
    pub lease: LeaseId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    Sequential,
    Parallel,
}

/// An end-to-end path stitched from fiber links.
///
/// `Parallel` paths take several strands of one conduit; `Sequential` paths
/// chain one link per conduit from source to destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub endpoints: (NodeId, NodeId),
    pub segments: Vec<LinkId>,
    pub composition: Composition,
}

impl Path {
    /// Distinct conduits traversed, in segment order.
    pub fn conduit_route(&self, graph: &TopologyGraph) -> Vec<ConduitId> {
        let mut route = Vec::new();
        for seg in &self.segments {
            if let Some(link) = graph.links.get(seg) {
                if route.last() != Some(&link.conduit) {
                    route.push(link.conduit.clone());
                }
            }
        }
        route
    }

    pub fn hop_count(&self, graph: &TopologyGraph) -> usize {
        self.conduit_route(graph).len()
    }
}

/// The circuits granted for one lease, with enough recorded state to
/// restore every counter exactly on release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitAllocation {
    pub id: AllocationId,
    pub lease: LeaseId,
    pub path: Path,
    pub strands: u32,
    pub capacity_bps: Bps,
    pub circuits: Vec<CircuitId>,
}

/// Derived per-conduit aggregates of the member links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConduitAnnotation {
    pub max_bandwidth_bps: Bps,
    pub available_bandwidth_bps: Bps,
    pub total_strands: u32,
    pub available_strands: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmissibilityResult {
    Admissible(Vec<Path>),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    NoRoute,
    InsufficientStrands,
    InsufficientBandwidth,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::NoRoute => f.write_str("no route between endpoints"),
            RejectReason::InsufficientStrands => f.write_str("insufficient free strands"),
            RejectReason::InsufficientBandwidth => f.write_str("insufficient available bandwidth"),
        }
    }
}

/// The resource side of a buyer request: what the graph is asked for.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceDemand {
    pub endpoint_a: NodeId,
    pub endpoint_b: NodeId,
    pub strands: u32,
    pub capacity_bps: Bps,
}

/// Counter state used for before/after comparisons. Link status is
/// deliberately excluded: failures do not disturb the accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountersSnapshot {
    links: BTreeMap<LinkId, (Bps, BTreeSet<u32>)>,
    live_circuits: usize,
    live_allocations: usize,
}

// ---------------------------------------------------------------------------
// Topology document (external file schema)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub nodes: Vec<NodeDoc>,
    pub conduits: Vec<ConduitDoc>,
    pub links: Vec<LinkDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub site: String,
    pub geo: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConduitDoc {
    pub id: String,
    pub endpoints: [String; 2],
    pub links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub id: String,
    pub conduit: String,
    pub seller: String,
    pub max_bandwidth_bps: Bps,
    pub wavelength_capacity: u32,
    /// Wavelength indices pre-lit by the seller and unavailable for circuits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wavelengths_in_use: Vec<u32>,
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct TopologyGraph {
    nodes: BTreeMap<NodeId, Node>,
    conduits: BTreeMap<ConduitId, Conduit>,
    links: BTreeMap<LinkId, FiberLink>,
    circuits: BTreeMap<CircuitId, Circuit>,
    allocations: BTreeMap<AllocationId, CircuitAllocation>,
    annotations: BTreeMap<ConduitId, ConduitAnnotation>,
    next_circuit: u64,
    next_allocation: u64,
}

/// Parse and validate a topology file.
pub fn load_topology(document: &str) -> Result<TopologyGraph, TopologyError> {
    let doc: TopologyDocument = serde_json::from_str(document)
        .map_err(|e| TopologyError::SchemaViolation(e.to_string()))?;
    TopologyGraph::from_document(&doc)
}

impl TopologyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_document(doc: &TopologyDocument) -> Result<Self, TopologyError> {
        let mut graph = TopologyGraph::new();
        graph.merge_document(doc)?;
        Ok(graph)
    }

    /// Merge a seller's topology fragment. Validates first and mutates only
    /// when the whole fragment is acceptable, so rejection leaves the graph
    /// unchanged. An existing link owned by the same seller is updated in
    /// place; a link id claimed by a different seller is a conflict.
    pub fn merge_document(&mut self, doc: &TopologyDocument) -> Result<(), TopologyError> {
        let staged = self.validate_fragment(doc)?;
        self.apply_fragment(staged);
        Ok(())
    }

    fn validate_fragment(&self, doc: &TopologyDocument) -> Result<StagedFragment, TopologyError> {
        let mut staged = StagedFragment::default();

        let mut seen = BTreeSet::new();
        for n in &doc.nodes {
            if !seen.insert(n.id.clone()) {
                return Err(TopologyError::DuplicateId(n.id.clone()));
            }
            let node = Node {
                id: NodeId::new(&n.id),
                site: SiteId::new(&n.site),
                geo: n.geo,
            };
            if let Some(existing) = self.nodes.get(&node.id) {
                if existing.site != node.site {
                    return Err(TopologyError::DuplicateId(n.id.clone()));
                }
            }
            staged.nodes.push(node);
        }

        let mut seen = BTreeSet::new();
        for c in &doc.conduits {
            if !seen.insert(c.id.clone()) || self.conduits.contains_key(&ConduitId::new(&c.id)) {
                return Err(TopologyError::DuplicateId(c.id.clone()));
            }
            if c.endpoints[0] == c.endpoints[1] {
                return Err(TopologyError::SchemaViolation(format!(
                    "conduit `{}` endpoints must be distinct",
                    c.id
                )));
            }
            if c.links.is_empty() {
                return Err(TopologyError::SchemaViolation(format!(
                    "conduit `{}` lists no links",
                    c.id
                )));
            }
            for ep in &c.endpoints {
                let id = NodeId::new(ep);
                if !self.nodes.contains_key(&id) && !staged.nodes.iter().any(|n| n.id == id) {
                    return Err(TopologyError::DanglingReference {
                        kind: "conduit endpoint",
                        from: c.id.clone(),
                        to: ep.clone(),
                    });
                }
            }
            staged.conduits.push(Conduit {
                id: ConduitId::new(&c.id),
                endpoints: (NodeId::new(&c.endpoints[0]), NodeId::new(&c.endpoints[1])),
                links: c.links.iter().map(LinkId::new).collect(),
            });
        }

        let mut seen = BTreeSet::new();
        for l in &doc.links {
            if !seen.insert(l.id.clone()) {
                return Err(TopologyError::DuplicateId(l.id.clone()));
            }
            let id = LinkId::new(&l.id);
            let conduit = ConduitId::new(&l.conduit);
            let conduit_known = self.conduits.contains_key(&conduit)
                || staged.conduits.iter().any(|c| c.id == conduit);
            if !conduit_known {
                return Err(TopologyError::DanglingReference {
                    kind: "link conduit",
                    from: l.id.clone(),
                    to: l.conduit.clone(),
                });
            }
            let mut in_use = BTreeSet::new();
            for &w in &l.wavelengths_in_use {
                if !in_use.insert(w) {
                    return Err(TopologyError::DuplicateWavelength { link: id.clone(), wavelength: w });
                }
            }
            if in_use.len() as u32 > l.wavelength_capacity
                || in_use.iter().any(|&w| w >= l.wavelength_capacity)
            {
                return Err(TopologyError::SchemaViolation(format!(
                    "link `{}` declares wavelengths beyond its capacity",
                    l.id
                )));
            }
            if let Some(existing) = self.links.get(&id) {
                if existing.seller != l.seller {
                    return Err(TopologyError::SellerConflict {
                        seller: l.seller.clone(),
                        link: id,
                    });
                }
                let used = existing.max_bandwidth_bps - existing.available_bandwidth_bps;
                if l.max_bandwidth_bps < used {
                    return Err(TopologyError::InvalidRequest(format!(
                        "link `{}` cannot shrink below committed bandwidth",
                        l.id
                    )));
                }
                staged.updates.push((id, l.max_bandwidth_bps));
            } else {
                staged.links.push(FiberLink {
                    id,
                    conduit,
                    seller: l.seller.clone(),
                    max_bandwidth_bps: l.max_bandwidth_bps,
                    available_bandwidth_bps: l.max_bandwidth_bps,
                    wavelength_capacity: l.wavelength_capacity,
                    wavelengths_in_use: in_use,
                    status: LinkStatus::Up,
                });
            }
        }

        // Conduit membership must close: every listed link exists (here or
        // already in the graph) and points back at the conduit.
        for c in &staged.conduits {
            for lid in &c.links {
                let back = staged
                    .links
                    .iter()
                    .find(|l| &l.id == lid)
                    .map(|l| l.conduit.clone())
                    .or_else(|| self.links.get(lid).map(|l| l.conduit.clone()));
                match back {
                    Some(ref conduit) if conduit == &c.id => {}
                    _ => {
                        return Err(TopologyError::DanglingReference {
                            kind: "conduit member",
                            from: c.id.0.clone(),
                            to: lid.0.clone(),
                        })
                    }
                }
            }
        }
        for l in &staged.links {
            let member = staged
                .conduits
                .iter()
                .find(|c| c.id == l.conduit)
                .map(|c| c.links.contains(&l.id))
                .or_else(|| self.conduits.get(&l.conduit).map(|c| c.links.contains(&l.id)));
            if member != Some(true) {
                return Err(TopologyError::DanglingReference {
                    kind: "link conduit",
                    from: l.id.0.clone(),
                    to: l.conduit.0.clone(),
                });
            }
        }

        Ok(staged)
    }

    fn apply_fragment(&mut self, staged: StagedFragment) {
        for n in staged.nodes {
            self.nodes.insert(n.id.clone(), n);
        }
        let mut touched: BTreeSet<ConduitId> = BTreeSet::new();
        for c in staged.conduits {
            touched.insert(c.id.clone());
            self.conduits.insert(c.id.clone(), c);
        }
        for l in staged.links {
            touched.insert(l.conduit.clone());
            self.links.insert(l.id.clone(), l);
        }
        for (id, new_max) in staged.updates {
            let link = self.links.get_mut(&id).expect("validated");
            let used = link.max_bandwidth_bps - link.available_bandwidth_bps;
            link.max_bandwidth_bps = new_max;
            link.available_bandwidth_bps = new_max - used;
            touched.insert(link.conduit.clone());
        }
        for c in touched {
            self.refresh_annotation(&c);
        }
    }

    // -- accessors ----------------------------------------------------------

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn conduit(&self, id: &ConduitId) -> Option<&Conduit> {
        self.conduits.get(id)
    }

    pub fn conduits(&self) -> impl Iterator<Item = &Conduit> {
        self.conduits.values()
    }

    pub fn link(&self, id: &LinkId) -> Option<&FiberLink> {
        self.links.get(id)
    }

    pub fn links(&self) -> impl Iterator<Item = &FiberLink> {
        self.links.values()
    }

    pub fn circuit(&self, id: &CircuitId) -> Option<&Circuit> {
        self.circuits.get(id)
    }

    pub fn circuits(&self) -> impl Iterator<Item = &Circuit> {
        self.circuits.values()
    }

    pub fn allocation(&self, id: &AllocationId) -> Option<&CircuitAllocation> {
        self.allocations.get(id)
    }

    pub fn allocations(&self) -> impl Iterator<Item = &CircuitAllocation> {
        self.allocations.values()
    }

    pub fn annotation(&self, id: &ConduitId) -> Option<&ConduitAnnotation> {
        self.annotations.get(id)
    }

    /// Site hosting a node's local control.
    pub fn site_of(&self, node: &NodeId) -> Option<&SiteId> {
        self.nodes.get(node).map(|n| &n.site)
    }

    pub fn set_link_status(&mut self, id: &LinkId, status: LinkStatus) -> Result<(), TopologyError> {
        let conduit = {
            let link = self.links.get_mut(id).ok_or_else(|| TopologyError::UnknownLink(id.clone()))?;
            link.status = status;
            link.conduit.clone()
        };
        self.refresh_annotation(&conduit);
        Ok(())
    }

    // -- admissibility and path search ---------------------------------------

    pub fn check_admissibility(
        &self,
        demand: &ResourceDemand,
    ) -> Result<AdmissibilityResult, TopologyError> {
        let paths = self.find_candidate_paths(
            &demand.endpoint_a,
            &demand.endpoint_b,
            demand.strands,
            demand.capacity_bps,
        )?;
        if !paths.is_empty() {
            return Ok(AdmissibilityResult::Admissible(paths));
        }
        // Pin down the binding constraint by relaxing one dimension at a time.
        let single_strand =
            self.candidate_paths_impl(&demand.endpoint_a, &demand.endpoint_b, 1, demand.capacity_bps);
        if !single_strand.is_empty() {
            return Ok(AdmissibilityResult::Rejected(RejectReason::InsufficientStrands));
        }
        let any_capacity =
            self.candidate_paths_impl(&demand.endpoint_a, &demand.endpoint_b, demand.strands, 0);
        if !any_capacity.is_empty() {
            return Ok(AdmissibilityResult::Rejected(RejectReason::InsufficientBandwidth));
        }
        if !self.conduit_routes(&demand.endpoint_a, &demand.endpoint_b).is_empty() {
            return Ok(AdmissibilityResult::Rejected(RejectReason::InsufficientStrands));
        }
        Ok(AdmissibilityResult::Rejected(RejectReason::NoRoute))
    }

    /// Enumerate candidate paths satisfying the strand and capacity demand.
    ///
    /// One candidate per conduit route. A direct conduit yields a `Parallel`
    /// path over `strands` of its fully-free links (a buyer's strand is a
    /// dedicated fiber), falling back to stacking the strands as wavelengths
    /// on one shared link when the conduit has too few free strands. Longer
    /// routes pick one link per conduit and stack `strands` wavelengths on
    /// each. Ordering is fewest conduits first, then largest minimum free
    /// bandwidth, then lexicographic conduit and link ids.
    pub fn find_candidate_paths(
        &self,
        src: &NodeId,
        dst: &NodeId,
        strands: u32,
        capacity_bps: Bps,
    ) -> Result<Vec<Path>, TopologyError> {
        if !self.nodes.contains_key(src) {
            return Err(TopologyError::UnknownNode(src.clone()));
        }
        if !self.nodes.contains_key(dst) {
            return Err(TopologyError::UnknownNode(dst.clone()));
        }
        if src == dst {
            return Err(TopologyError::InvalidRequest("endpoints must be distinct".into()));
        }
        if strands == 0 {
            return Err(TopologyError::InvalidRequest("strands must be >= 1".into()));
        }
        if capacity_bps == 0 {
            return Err(TopologyError::InvalidRequest("capacity must be > 0".into()));
        }
        Ok(self.candidate_paths_impl(src, dst, strands, capacity_bps))
    }

    /// Path enumeration; `capacity_bps` of zero means unconstrained (used to
    /// pin down which constraint made a demand inadmissible).
    fn candidate_paths_impl(
        &self,
        src: &NodeId,
        dst: &NodeId,
        strands: u32,
        capacity_bps: Bps,
    ) -> Vec<Path> {
        let mut candidates = Vec::new();
        for route in self.conduit_routes(src, dst) {
            if route.len() == 1 {
                let conduit = &self.conduits[&route[0]];
                let free: Vec<&FiberLink> = conduit
                    .links
                    .iter()
                    .filter_map(|l| self.links.get(l))
                    .filter(|l| {
                        l.is_up()
                            && l.available_bandwidth_bps >= capacity_bps
                            && l.wavelengths_in_use.is_empty()
                            && l.wavelength_capacity >= 1
                    })
                    .collect();
                if free.len() as u32 >= strands {
                    candidates.push(Path {
                        endpoints: (src.clone(), dst.clone()),
                        segments: free.iter().take(strands as usize).map(|l| l.id.clone()).collect(),
                        composition: Composition::Parallel,
                    });
                    continue;
                }
            }
            // Sequential: one link per conduit, carrying `strands` wavelengths.
            let mut segments = Vec::with_capacity(route.len());
            let mut feasible = true;
            for cid in &route {
                let conduit = &self.conduits[cid];
                let link = conduit
                    .links
                    .iter()
                    .filter_map(|l| self.links.get(l))
                    .find(|l| {
                        l.is_up()
                            && l.available_bandwidth_bps >= capacity_bps
                            && l.free_wavelengths() >= strands
                    });
                match link {
                    Some(l) => segments.push(l.id.clone()),
                    None => {
                        feasible = false;
                        break;
                    }
                }
            }
            if feasible {
                candidates.push(Path {
                    endpoints: (src.clone(), dst.clone()),
                    segments,
                    composition: Composition::Sequential,
                });
            }
        }

        candidates.sort_by(|a, b| {
            let key = |p: &Path| {
                let min_free = p
                    .segments
                    .iter()
                    .filter_map(|l| self.links.get(l))
                    .map(|l| l.available_bandwidth_bps)
                    .min()
                    .unwrap_or(0);
                (p.hop_count(self), std::cmp::Reverse(min_free), p.conduit_route(self), p.segments.clone())
            };
            key(a).cmp(&key(b))
        });
        candidates
    }

    /// All simple conduit-level routes between two nodes, in deterministic
    /// (depth-first, conduit-id ordered) enumeration order.
    fn conduit_routes(&self, src: &NodeId, dst: &NodeId) -> Vec<Vec<ConduitId>> {
        let mut adjacency: BTreeMap<&NodeId, Vec<(&ConduitId, &NodeId)>> = BTreeMap::new();
        for c in self.conduits.values() {
            adjacency.entry(&c.endpoints.0).or_default().push((&c.id, &c.endpoints.1));
            adjacency.entry(&c.endpoints.1).or_default().push((&c.id, &c.endpoints.0));
        }
        for edges in adjacency.values_mut() {
            edges.sort();
        }

        let mut routes = Vec::new();
        let mut stack: Vec<ConduitId> = Vec::new();
        let mut visited: BTreeSet<&NodeId> = BTreeSet::new();
        visited.insert(src);
        self.dfs_routes(&adjacency, src, dst, &mut visited, &mut stack, &mut routes);
        routes
    }

    fn dfs_routes<'a>(
        &'a self,
        adjacency: &BTreeMap<&'a NodeId, Vec<(&'a ConduitId, &'a NodeId)>>,
        at: &'a NodeId,
        dst: &NodeId,
        visited: &mut BTreeSet<&'a NodeId>,
        stack: &mut Vec<ConduitId>,
        routes: &mut Vec<Vec<ConduitId>>,
    ) {
        let Some(edges) = adjacency.get(at) else { return };
        for (conduit, next) in edges {
            if *next == dst {
                let mut route = stack.clone();
                route.push((*conduit).clone());
                routes.push(route);
                continue;
            }
            if visited.contains(next) {
                continue;
            }
            visited.insert(next);
            stack.push((*conduit).clone());
            self.dfs_routes(adjacency, next, dst, visited, stack, routes);
            stack.pop();
            visited.remove(*next);
        }
    }

    // -- allocation ----------------------------------------------------------

    /// Wavelength indices that an allocation of this path would take, lowest
    /// free index per link. Pure; used to pre-name wavelengths in site
    /// configurations before counters are committed.
    pub fn plan_wavelengths(
        &self,
        path: &Path,
        strands: u32,
    ) -> Result<BTreeMap<LinkId, Vec<u32>>, TopologyError> {
        let per_link = self.circuits_per_link(path, strands)?;
        let mut plan = BTreeMap::new();
        for (lid, count) in per_link {
            let link = self.links.get(&lid).ok_or_else(|| TopologyError::UnknownLink(lid.clone()))?;
            let mut taken = BTreeSet::new();
            let mut indices = Vec::with_capacity(count as usize);
            for _ in 0..count {
                match link.lowest_free_wavelength(&taken) {
                    Some(w) => {
                        taken.insert(w);
                        indices.push(w);
                    }
                    None => return Err(TopologyError::WavelengthExhausted { link: lid.clone() }),
                }
            }
            plan.insert(lid, indices);
        }
        Ok(plan)
    }

    fn circuits_per_link(
        &self,
        path: &Path,
        strands: u32,
    ) -> Result<Vec<(LinkId, u32)>, TopologyError> {
        if path.segments.is_empty() {
            return Err(TopologyError::InvalidRequest("path has no segments".into()));
        }
        let mut distinct = BTreeSet::new();
        for seg in &path.segments {
            if !self.links.contains_key(seg) {
                return Err(TopologyError::UnknownLink(seg.clone()));
            }
            if !distinct.insert(seg.clone()) {
                return Err(TopologyError::InvalidRequest(format!(
                    "link `{seg}` appears twice in path"
                )));
            }
        }
        match path.composition {
            Composition::Parallel => {
                if path.segments.len() as u32 != strands {
                    return Err(TopologyError::InvalidRequest(
                        "parallel path must carry exactly one link per strand".into(),
                    ));
                }
                Ok(path.segments.iter().map(|l| (l.clone(), 1)).collect())
            }
            Composition::Sequential => {
                Ok(path.segments.iter().map(|l| (l.clone(), strands)).collect())
            }
        }
    }

    /// Commit circuits for a path. Validates every touched link first so a
    /// failure leaves no counter changed.
    pub fn allocate(
        &mut self,
        path: &Path,
        strands: u32,
        capacity_bps: Bps,
        lease: LeaseId,
    ) -> Result<AllocationId, TopologyError> {
        if capacity_bps == 0 || strands == 0 {
            return Err(TopologyError::InvalidRequest("zero-sized allocation".into()));
        }
        let per_link = self.circuits_per_link(path, strands)?;
        for (lid, count) in &per_link {
            let link = &self.links[lid];
            if !link.is_up() || link.available_bandwidth_bps < capacity_bps {
                return Err(TopologyError::ConcurrentDepletion { link: lid.clone() });
            }
            if link.free_wavelengths() < *count {
                return Err(TopologyError::WavelengthExhausted { link: lid.clone() });
            }
        }

        let alloc_id = AllocationId(self.next_allocation);
        self.next_allocation += 1;
        let mut circuit_ids = Vec::new();
        let mut touched = BTreeSet::new();
        for (lid, count) in &per_link {
            let bandwidths = split_bandwidth(capacity_bps, *count);
            let link = self.links.get_mut(lid).expect("validated");
            link.available_bandwidth_bps -= capacity_bps;
            touched.insert(link.conduit.clone());
            for bw in bandwidths {
                let w = link
                    .lowest_free_wavelength(&BTreeSet::new())
                    .expect("validated free wavelength");
                link.wavelengths_in_use.insert(w);
                let cid = CircuitId(self.next_circuit);
                self.next_circuit += 1;
                self.circuits.insert(
                    cid,
                    Circuit { id: cid, link: lid.clone(), wavelength: w, bandwidth_bps: bw, lease },
                );
                circuit_ids.push(cid);
            }
        }
        self.allocations.insert(
            alloc_id,
            CircuitAllocation {
                id: alloc_id,
                lease,
                path: path.clone(),
                strands,
                capacity_bps,
                circuits: circuit_ids,
            },
        );
        for c in touched {
            self.refresh_annotation(&c);
        }
        Ok(alloc_id)
    }

    /// Revoke an allocation's circuits and restore every counter exactly.
    pub fn release(&mut self, allocation: AllocationId) -> Result<(), TopologyError> {
        let alloc = self
            .allocations
            .remove(&allocation)
            .ok_or(TopologyError::DoubleRelease(allocation))?;
        let mut touched = BTreeSet::new();
        for cid in &alloc.circuits {
            let circuit = self.circuits.remove(cid).expect("allocation circuits are live");
            let link = self.links.get_mut(&circuit.link).expect("circuit link exists");
            link.wavelengths_in_use.remove(&circuit.wavelength);
            link.available_bandwidth_bps += circuit.bandwidth_bps;
            touched.insert(link.conduit.clone());
        }
        for c in touched {
            self.refresh_annotation(&c);
        }
        Ok(())
    }

    /// Move an allocation's circuits off `from` onto `to` within the same
    /// conduit, assigning fresh circuit ids and wavelengths. Backup
    /// provisioning after a link failure routes through here.
    pub fn reroute_link(
        &mut self,
        allocation: AllocationId,
        from: &LinkId,
        to: &LinkId,
    ) -> Result<Vec<CircuitId>, TopologyError> {
        let alloc = self
            .allocations
            .get(&allocation)
            .ok_or(TopologyError::DoubleRelease(allocation))?
            .clone();
        if !alloc.path.segments.contains(from) {
            return Err(TopologyError::InvalidRequest(format!(
                "allocation {allocation} has no segment on `{from}`"
            )));
        }
        let moved: Vec<Circuit> = alloc
            .circuits
            .iter()
            .filter_map(|c| self.circuits.get(c))
            .filter(|c| &c.link == from)
            .cloned()
            .collect();
        if moved.is_empty() {
            return Err(TopologyError::InvalidRequest(format!(
                "allocation {allocation} has no circuits on `{from}`"
            )));
        }
        let total_bw: Bps = moved.iter().map(|c| c.bandwidth_bps).sum();
        {
            let from_link =
                self.links.get(from).ok_or_else(|| TopologyError::UnknownLink(from.clone()))?;
            let to_link =
                self.links.get(to).ok_or_else(|| TopologyError::UnknownLink(to.clone()))?;
            if to_link.conduit != from_link.conduit {
                return Err(TopologyError::InvalidRequest(
                    "backup link must share the failed link's conduit".into(),
                ));
            }
            if !to_link.is_up() || to_link.available_bandwidth_bps < total_bw {
                return Err(TopologyError::ConcurrentDepletion { link: to.clone() });
            }
            if to_link.free_wavelengths() < moved.len() as u32 {
                return Err(TopologyError::WavelengthExhausted { link: to.clone() });
            }
        }

        let conduit = self.links[from].conduit.clone();
        let mut new_ids = Vec::with_capacity(moved.len());
        for circuit in &moved {
            self.circuits.remove(&circuit.id);
            let from_link = self.links.get_mut(from).expect("checked");
            from_link.wavelengths_in_use.remove(&circuit.wavelength);
            from_link.available_bandwidth_bps += circuit.bandwidth_bps;

            let to_link = self.links.get_mut(to).expect("checked");
            let w = to_link.lowest_free_wavelength(&BTreeSet::new()).expect("checked");
            to_link.wavelengths_in_use.insert(w);
            to_link.available_bandwidth_bps -= circuit.bandwidth_bps;
            let cid = CircuitId(self.next_circuit);
            self.next_circuit += 1;
            self.circuits.insert(
                cid,
                Circuit {
                    id: cid,
                    link: to.clone(),
                    wavelength: w,
                    bandwidth_bps: circuit.bandwidth_bps,
                    lease: circuit.lease,
                },
            );
            new_ids.push(cid);
        }
        let alloc = self.allocations.get_mut(&allocation).expect("checked");
        alloc.circuits.retain(|c| !moved.iter().any(|m| &m.id == c));
        alloc.circuits.extend(new_ids.iter().copied());
        for seg in alloc.path.segments.iter_mut() {
            if seg == from {
                *seg = to.clone();
            }
        }
        self.refresh_annotation(&conduit);
        Ok(new_ids)
    }

    // -- derived data and integrity -------------------------------------------

    fn refresh_annotation(&mut self, conduit: &ConduitId) {
        if let Some(ann) = self.compute_annotation(conduit) {
            self.annotations.insert(conduit.clone(), ann);
        }
    }

    fn compute_annotation(&self, conduit: &ConduitId) -> Option<ConduitAnnotation> {
        let c = self.conduits.get(conduit)?;
        let members: Vec<&FiberLink> = c.links.iter().filter_map(|l| self.links.get(l)).collect();
        Some(ConduitAnnotation {
            max_bandwidth_bps: members.iter().map(|l| l.max_bandwidth_bps).sum(),
            available_bandwidth_bps: members.iter().map(|l| l.available_bandwidth_bps).sum(),
            total_strands: members.len() as u32,
            available_strands: members
                .iter()
                .filter(|l| l.is_up() && l.wavelengths_in_use.is_empty())
                .count() as u32,
        })
    }

    pub fn counters_snapshot(&self) -> CountersSnapshot {
        CountersSnapshot {
            links: self
                .links
                .iter()
                .map(|(id, l)| {
                    (id.clone(), (l.available_bandwidth_bps, l.wavelengths_in_use.clone()))
                })
                .collect(),
            live_circuits: self.circuits.len(),
            live_allocations: self.allocations.len(),
        }
    }

    /// Recompute every derived quantity from first principles and compare.
    pub fn verify(&self) -> Result<(), String> {
        let mut per_link_bw: BTreeMap<&LinkId, Bps> = BTreeMap::new();
        let mut per_link_wavelengths: BTreeMap<&LinkId, BTreeSet<u32>> = BTreeMap::new();
        for c in self.circuits.values() {
            if c.bandwidth_bps == 0 {
                return Err(format!("circuit {} has zero bandwidth", c.id));
            }
            *per_link_bw.entry(&c.link).or_default() += c.bandwidth_bps;
            if !per_link_wavelengths.entry(&c.link).or_default().insert(c.wavelength) {
                return Err(format!(
                    "wavelength collision on link `{}` at index {}",
                    c.link, c.wavelength
                ));
            }
        }
        for (id, link) in &self.links {
            let used = per_link_bw.get(id).copied().unwrap_or(0);
            if link.available_bandwidth_bps + used != link.max_bandwidth_bps {
                return Err(format!(
                    "link `{id}` counter drift: available {} + used {} != max {}",
                    link.available_bandwidth_bps, used, link.max_bandwidth_bps
                ));
            }
            if link.wavelengths_in_use.len() as u32 > link.wavelength_capacity {
                return Err(format!("link `{id}` exceeds wavelength capacity"));
            }
            if let Some(ws) = per_link_wavelengths.get(id) {
                if !ws.is_subset(&link.wavelengths_in_use) {
                    return Err(format!("link `{id}` in-use set misses live circuit wavelengths"));
                }
            }
        }
        for (id, _) in &self.conduits {
            let expected = self.compute_annotation(id).expect("conduit exists");
            match self.annotations.get(id) {
                Some(actual) if *actual == expected => {}
                other => {
                    return Err(format!(
                        "conduit `{id}` annotation drift: {other:?} vs {expected:?}"
                    ))
                }
            }
        }
        for alloc in self.allocations.values() {
            for cid in &alloc.circuits {
                if !self.circuits.contains_key(cid) {
                    return Err(format!("allocation {} references dead circuit {cid}", alloc.id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct StagedFragment {
    nodes: Vec<Node>,
    conduits: Vec<Conduit>,
    links: Vec<FiberLink>,
    updates: Vec<(LinkId, Bps)>,
}

/// Split an end-to-end capacity across `count` circuits so the parts sum
/// exactly to the whole.
fn split_bandwidth(capacity: Bps, count: u32) -> Vec<Bps> {
    let count = count as u64;
    let base = capacity / count;
    let remainder = capacity % count;
    (0..count).map(|i| if i < remainder { base + 1 } else { base }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dumbbell(links: u32, bandwidth: Bps, wavelengths: u32) -> TopologyGraph {
        let link_docs: Vec<String> = (1..=links)
            .map(|i| {
                format!(
                    r#"{{"id":"l{i}","conduit":"c1","seller":"s1","max_bandwidth_bps":{bandwidth},"wavelength_capacity":{wavelengths}}}"#
                )
            })
            .collect();
        let link_ids: Vec<String> = (1..=links).map(|i| format!("\"l{i}\"")).collect();
        let doc = format!(
            r#"{{
              "nodes": [
                {{"id":"A","site":"site-a","geo":{{"lat":43.07,"lon":-89.4}}}},
                {{"id":"B","site":"site-b","geo":{{"lat":44.05,"lon":-123.09}}}}
              ],
              "conduits": [{{"id":"c1","endpoints":["A","B"],"links":[{}]}}],
              "links": [{}]
            }}"#,
            link_ids.join(","),
            link_docs.join(",")
        );
        load_topology(&doc).expect("valid dumbbell")
    }

    fn chain(conduits: usize, links_per: usize) -> TopologyGraph {
        // Nodes n0..n{conduits}, conduit ci joins n{i},n{i+1}.
        let mut nodes = Vec::new();
        for i in 0..=conduits {
            nodes.push(format!(
                r#"{{"id":"n{i}","site":"site-{i}","geo":{{"lat":0.0,"lon":{i}.0}}}}"#
            ));
        }
        let mut conduit_docs = Vec::new();
        let mut link_docs = Vec::new();
        for i in 0..conduits {
            let ids: Vec<String> =
                (0..links_per).map(|j| format!("\"c{i}-l{j}\"")).collect();
            conduit_docs.push(format!(
                r#"{{"id":"c{i}","endpoints":["n{i}","n{}"],"links":[{}]}}"#,
                i + 1,
                ids.join(",")
            ));
            for j in 0..links_per {
                link_docs.push(format!(
                    r#"{{"id":"c{i}-l{j}","conduit":"c{i}","seller":"s1","max_bandwidth_bps":20000000,"wavelength_capacity":8}}"#
                ));
            }
        }
        let doc = format!(
            r#"{{"nodes":[{}],"conduits":[{}],"links":[{}]}}"#,
            nodes.join(","),
            conduit_docs.join(","),
            link_docs.join(",")
        );
        load_topology(&doc).expect("valid chain")
    }

    fn demand(a: &str, b: &str, strands: u32, capacity: Bps) -> ResourceDemand {
        ResourceDemand {
            endpoint_a: NodeId::new(a),
            endpoint_b: NodeId::new(b),
            strands,
            capacity_bps: capacity,
        }
    }

    #[test]
    fn fresh_load_has_available_equal_max() {
        let g = dumbbell(1, 20_000_000, 8);
        let ann = g.annotation(&ConduitId::new("c1")).unwrap();
        assert_eq!(ann.max_bandwidth_bps, 20_000_000);
        assert_eq!(ann.available_bandwidth_bps, 20_000_000);
        assert_eq!(ann.total_strands, 1);
        assert_eq!(ann.available_strands, 1);
        g.verify().unwrap();
    }

    #[test]
    fn duplicate_link_id_is_rejected() {
        let doc = r#"{
          "nodes": [
            {"id":"A","site":"sa","geo":{"lat":0.0,"lon":0.0}},
            {"id":"B","site":"sb","geo":{"lat":0.0,"lon":1.0}}
          ],
          "conduits": [{"id":"c1","endpoints":["A","B"],"links":["l1","l1"]}],
          "links": [
            {"id":"l1","conduit":"c1","seller":"s1","max_bandwidth_bps":10,"wavelength_capacity":1},
            {"id":"l1","conduit":"c1","seller":"s1","max_bandwidth_bps":10,"wavelength_capacity":1}
          ]
        }"#;
        assert_eq!(load_topology(doc).unwrap_err(), TopologyError::DuplicateId("l1".into()));
    }

    #[test]
    fn dangling_conduit_reference_is_rejected() {
        let doc = r#"{
          "nodes": [
            {"id":"A","site":"sa","geo":{"lat":0.0,"lon":0.0}},
            {"id":"B","site":"sb","geo":{"lat":0.0,"lon":1.0}}
          ],
          "conduits": [{"id":"c1","endpoints":["A","B"],"links":["l1"]}],
          "links": [{"id":"l1","conduit":"nope","seller":"s1","max_bandwidth_bps":10,"wavelength_capacity":1}]
        }"#;
        assert!(matches!(
            load_topology(doc),
            Err(TopologyError::DanglingReference { kind: "link conduit", .. })
        ));
    }

    #[test]
    fn duplicate_wavelength_declaration_is_rejected() {
        let doc = r#"{
          "nodes": [
            {"id":"A","site":"sa","geo":{"lat":0.0,"lon":0.0}},
            {"id":"B","site":"sb","geo":{"lat":0.0,"lon":1.0}}
          ],
          "conduits": [{"id":"c1","endpoints":["A","B"],"links":["l1"]}],
          "links": [{"id":"l1","conduit":"c1","seller":"s1","max_bandwidth_bps":10,"wavelength_capacity":4,"wavelengths_in_use":[2,2]}]
        }"#;
        assert_eq!(
            load_topology(doc).unwrap_err(),
            TopologyError::DuplicateWavelength { link: LinkId::new("l1"), wavelength: 2 }
        );
    }

    #[test]
    fn chain_yields_sequential_paths_matching_brute_force() {
        let g = chain(3, 2);
        let paths = g
            .find_candidate_paths(&NodeId::new("n0"), &NodeId::new("n3"), 1, 1_000_000)
            .unwrap();
        assert!(!paths.is_empty());
        for p in &paths {
            assert_eq!(p.composition, Composition::Sequential);
            assert_eq!(p.segments.len(), 3);
        }
        // Brute-force oracle: enumerate simple conduit routes by hand. The
        // chain has exactly one, so exactly one candidate path.
        assert_eq!(paths.len(), 1);
        assert_eq!(
            paths[0].conduit_route(&g),
            vec![ConduitId::new("c0"), ConduitId::new("c1"), ConduitId::new("c2")]
        );
    }

    #[test]
    fn admissibility_counts_free_strands() {
        let mut g = dumbbell(10, 20_000_000, 8);
        // Consume two strands so 8 of 10 are free.
        let paths = g
            .find_candidate_paths(&NodeId::new("A"), &NodeId::new("B"), 2, 5_000_000)
            .unwrap();
        g.allocate(&paths[0], 2, 5_000_000, LeaseId(1)).unwrap();
        let free: u32 = g.annotation(&ConduitId::new("c1")).unwrap().available_strands;
        assert_eq!(free, 8);

        match g.check_admissibility(&demand("A", "B", 3, 5_000_000)).unwrap() {
            AdmissibilityResult::Admissible(paths) => {
                assert_eq!(paths[0].segments.len(), 3);
            }
            other => panic!("expected admissible, got {other:?}"),
        }
        // Nine strands cannot fit in eight free ones.
        assert_eq!(
            g.check_admissibility(&demand("A", "B", 9, 5_000_000)).unwrap(),
            AdmissibilityResult::Rejected(RejectReason::InsufficientStrands)
        );
        g.verify().unwrap();
    }

    #[test]
    fn self_request_is_invalid() {
        let g = dumbbell(1, 20_000_000, 8);
        assert!(matches!(
            g.check_admissibility(&demand("A", "A", 1, 1)),
            Err(TopologyError::InvalidRequest(_))
        ));
        assert!(matches!(
            g.check_admissibility(&demand("A", "B", 0, 1)),
            Err(TopologyError::InvalidRequest(_))
        ));
        assert!(matches!(
            g.check_admissibility(&demand("A", "B", 1, 0)),
            Err(TopologyError::InvalidRequest(_))
        ));
    }

    #[test]
    fn unknown_endpoint_is_an_error() {
        let g = dumbbell(1, 20_000_000, 8);
        assert_eq!(
            g.check_admissibility(&demand("A", "Z", 1, 1)),
            Err(TopologyError::UnknownNode(NodeId::new("Z")))
        );
    }

    #[test]
    fn dumbbell_five_strands_is_one_parallel_path() {
        let g = dumbbell(5, 20_000_000, 8);
        let paths = g
            .find_candidate_paths(&NodeId::new("A"), &NodeId::new("B"), 5, 20_000_000)
            .unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].composition, Composition::Parallel);
        assert_eq!(paths[0].segments.len(), 5);
    }

    #[test]
    fn diamond_paths_tie_break_on_conduit_ids() {
        let doc = r#"{
          "nodes": [
            {"id":"A","site":"sa","geo":{"lat":0.0,"lon":0.0}},
            {"id":"B","site":"sb","geo":{"lat":1.0,"lon":0.0}},
            {"id":"C","site":"sc","geo":{"lat":-1.0,"lon":0.0}},
            {"id":"D","site":"sd","geo":{"lat":0.0,"lon":1.0}}
          ],
          "conduits": [
            {"id":"c-ab","endpoints":["A","B"],"links":["ab-1"]},
            {"id":"c-ac","endpoints":["A","C"],"links":["ac-1"]},
            {"id":"c-bd","endpoints":["B","D"],"links":["bd-1"]},
            {"id":"c-cd","endpoints":["C","D"],"links":["cd-1"]}
          ],
          "links": [
            {"id":"ab-1","conduit":"c-ab","seller":"s1","max_bandwidth_bps":20000000,"wavelength_capacity":8},
            {"id":"ac-1","conduit":"c-ac","seller":"s1","max_bandwidth_bps":20000000,"wavelength_capacity":8},
            {"id":"bd-1","conduit":"c-bd","seller":"s1","max_bandwidth_bps":20000000,"wavelength_capacity":8},
            {"id":"cd-1","conduit":"c-cd","seller":"s1","max_bandwidth_bps":20000000,"wavelength_capacity":8}
          ]
        }"#;
        let g = load_topology(doc).unwrap();
        let paths =
            g.find_candidate_paths(&NodeId::new("A"), &NodeId::new("D"), 1, 1_000_000).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].conduit_route(&g), vec![ConduitId::new("c-ab"), ConduitId::new("c-bd")]);
        assert_eq!(paths[1].conduit_route(&g), vec![ConduitId::new("c-ac"), ConduitId::new("c-cd")]);
        // Determinism: the same query yields the same ordered list.
        let again =
            g.find_candidate_paths(&NodeId::new("A"), &NodeId::new("D"), 1, 1_000_000).unwrap();
        assert_eq!(paths, again);
    }

    #[test]
    fn successive_allocations_take_distinct_wavelengths() {
        let mut g = dumbbell(1, 20_000_000, 8);
        let path = Path {
            endpoints: (NodeId::new("A"), NodeId::new("B")),
            segments: vec![LinkId::new("l1")],
            composition: Composition::Parallel,
        };
        let a1 = g.allocate(&path, 1, 5_000_000, LeaseId(1)).unwrap();
        let a2 = g.allocate(&path, 1, 5_000_000, LeaseId(2)).unwrap();
        let w1 = g.circuit(&g.allocation(&a1).unwrap().circuits[0]).unwrap().wavelength;
        let w2 = g.circuit(&g.allocation(&a2).unwrap().circuits[0]).unwrap().wavelength;
        assert_ne!(w1, w2);
        assert_eq!((w1, w2), (0, 1));
        g.verify().unwrap();
    }

    #[test]
    fn ninth_wavelength_is_exhausted() {
        let mut g = dumbbell(1, 200_000_000, 8);
        let path = Path {
            endpoints: (NodeId::new("A"), NodeId::new("B")),
            segments: vec![LinkId::new("l1")],
            composition: Composition::Parallel,
        };
        for i in 0..8 {
            g.allocate(&path, 1, 1_000_000, LeaseId(i)).unwrap();
        }
        assert_eq!(
            g.allocate(&path, 1, 1_000_000, LeaseId(9)),
            Err(TopologyError::WavelengthExhausted { link: LinkId::new("l1") })
        );
        g.verify().unwrap();
    }

    #[test]
    fn allocate_release_restores_counters_exactly() {
        let mut g = chain(3, 2);
        let before = g.counters_snapshot();
        let paths = g
            .find_candidate_paths(&NodeId::new("n0"), &NodeId::new("n3"), 3, 7_000_001)
            .unwrap();
        let alloc = g.allocate(&paths[0], 3, 7_000_001, LeaseId(1)).unwrap();
        assert_ne!(g.counters_snapshot(), before);
        g.verify().unwrap();
        g.release(alloc).unwrap();
        assert_eq!(g.counters_snapshot(), before);
        g.verify().unwrap();
    }

    #[test]
    fn double_release_is_an_error() {
        let mut g = dumbbell(1, 20_000_000, 8);
        let path = Path {
            endpoints: (NodeId::new("A"), NodeId::new("B")),
            segments: vec![LinkId::new("l1")],
            composition: Composition::Parallel,
        };
        let alloc = g.allocate(&path, 1, 5_000_000, LeaseId(1)).unwrap();
        g.release(alloc).unwrap();
        assert_eq!(g.release(alloc), Err(TopologyError::DoubleRelease(alloc)));
    }

    #[test]
    fn release_after_failure_restores_counters_but_not_status() {
        let mut g = dumbbell(1, 20_000_000, 8);
        let before = g.counters_snapshot();
        let path = Path {
            endpoints: (NodeId::new("A"), NodeId::new("B")),
            segments: vec![LinkId::new("l1")],
            composition: Composition::Parallel,
        };
        let alloc = g.allocate(&path, 1, 5_000_000, LeaseId(1)).unwrap();
        g.set_link_status(&LinkId::new("l1"), LinkStatus::Down).unwrap();
        g.release(alloc).unwrap();
        assert_eq!(g.counters_snapshot(), before);
        assert_eq!(g.link(&LinkId::new("l1")).unwrap().status, LinkStatus::Down);
        g.verify().unwrap();
    }

    #[test]
    fn allocation_after_depletion_is_concurrent_depletion() {
        let mut g = dumbbell(1, 20_000_000, 8);
        let path = Path {
            endpoints: (NodeId::new("A"), NodeId::new("B")),
            segments: vec![LinkId::new("l1")],
            composition: Composition::Parallel,
        };
        g.allocate(&path, 1, 20_000_000, LeaseId(1)).unwrap();
        assert_eq!(
            g.allocate(&path, 1, 20_000_000, LeaseId(2)),
            Err(TopologyError::ConcurrentDepletion { link: LinkId::new("l1") })
        );
    }

    #[test]
    fn plan_matches_commit() {
        let mut g = chain(2, 1);
        let paths = g
            .find_candidate_paths(&NodeId::new("n0"), &NodeId::new("n2"), 2, 1_000_000)
            .unwrap();
        let plan = g.plan_wavelengths(&paths[0], 2).unwrap();
        let alloc = g.allocate(&paths[0], 2, 1_000_000, LeaseId(1)).unwrap();
        for cid in &g.allocation(&alloc).unwrap().circuits.clone() {
            let c = g.circuit(cid).unwrap();
            assert!(plan[&c.link].contains(&c.wavelength));
        }
    }

    #[test]
    fn reroute_moves_circuits_within_conduit() {
        let mut g = dumbbell(2, 20_000_000, 8);
        let path = Path {
            endpoints: (NodeId::new("A"), NodeId::new("B")),
            segments: vec![LinkId::new("l1")],
            composition: Composition::Parallel,
        };
        let alloc = g.allocate(&path, 1, 20_000_000, LeaseId(1)).unwrap();
        g.set_link_status(&LinkId::new("l1"), LinkStatus::Down).unwrap();
        let moved = g.reroute_link(alloc, &LinkId::new("l1"), &LinkId::new("l2")).unwrap();
        assert_eq!(moved.len(), 1);
        assert_eq!(g.circuit(&moved[0]).unwrap().link, LinkId::new("l2"));
        assert_eq!(g.link(&LinkId::new("l1")).unwrap().available_bandwidth_bps, 20_000_000);
        assert_eq!(g.link(&LinkId::new("l2")).unwrap().available_bandwidth_bps, 0);
        assert_eq!(g.allocation(&alloc).unwrap().path.segments, vec![LinkId::new("l2")]);
        g.verify().unwrap();
    }

    #[test]
    fn seller_update_adjusts_annotations() {
        let mut g = dumbbell(1, 20_000_000, 8);
        let update: TopologyDocument = serde_json::from_str(
            r#"{"nodes":[],"conduits":[],
                "links":[{"id":"l1","conduit":"c1","seller":"s1","max_bandwidth_bps":50000000,"wavelength_capacity":8}]}"#,
        )
        .unwrap();
        g.merge_document(&update).unwrap();
        let ann = g.annotation(&ConduitId::new("c1")).unwrap();
        assert_eq!(ann.max_bandwidth_bps, 50_000_000);
        assert_eq!(ann.available_bandwidth_bps, 50_000_000);
        g.verify().unwrap();
    }

    #[test]
    fn conflicting_seller_leaves_graph_unchanged() {
        let mut g = dumbbell(1, 20_000_000, 8);
        let before = g.counters_snapshot();
        let update: TopologyDocument = serde_json::from_str(
            r#"{"nodes":[],"conduits":[],
                "links":[{"id":"l1","conduit":"c1","seller":"rival","max_bandwidth_bps":1,"wavelength_capacity":8}]}"#,
        )
        .unwrap();
        assert!(matches!(
            g.merge_document(&update),
            Err(TopologyError::SellerConflict { .. })
        ));
        assert_eq!(g.counters_snapshot(), before);
    }

    #[test]
    fn split_bandwidth_sums_exactly() {
        for capacity in [1, 7, 20_000_000, 20_000_001] {
            for count in 1..=5 {
                let parts = split_bandwidth(capacity, count);
                assert_eq!(parts.len(), count as usize);
                assert_eq!(parts.iter().sum::<Bps>(), capacity);
            }
        }
    }
}

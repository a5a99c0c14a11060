//! Global control: registration, request classification, the end-to-end
//! provisioning pipeline, lease lifecycle, and teardown on expiry.
//!
//! The pipeline runs the stages in order: accept bid, auction, winner
//! report, graph query, admissibility, configuration generation, config
//! push, circuit setup, counter update, buyer notification. Every stage
//! appends a timestamped record to the event log. Virtual durations for the
//! exchange and configuration-generation stages are calibration constants;
//! wall-clock durations of the same work are measured separately and never
//! enter the deterministic log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventLog, Stage, StageRecord};
use crate::exchange::{AuctionOutcome, Bid, Exchange, ExchangeError, Mechanism, OfferingId};
use crate::glsc::{LeaseWindow, SiteConfig};
use crate::substrate::{provision_latency, LatencyProfile, SubstrateError};
use crate::topology::{
    AdmissibilityResult, AllocationId, CircuitId, LeaseId, LinkId, NodeId, Path, RejectReason,
    ResourceDemand, SiteId, TopologyDocument, TopologyError, TopologyGraph,
};
use crate::units::{Bps, Money, SimDuration, SimTime};

#[derive(Debug, Error)]
pub enum GgcError {
    #[error("buyer `{0}` is already registered")]
    DuplicateBuyer(String),
    #[error("buyer `{0}` is not registered")]
    UnregisteredBuyer(String),
    #[error("unknown lease {0}")]
    UnknownLease(LeaseId),
    #[error("no pending activation for request `{0}`")]
    UnknownPending(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
}

// ---------------------------------------------------------------------------
// Requests and classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestWindow {
    pub start: SimTime,
    pub duration_s: SimDuration,
}

/// A buyer's connectivity demand, the external request tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRequest {
    pub endpoint_a: NodeId,
    pub endpoint_b: NodeId,
    pub strands_needed: u32,
    pub bid_amount: Money,
    pub time: RequestWindow,
    pub capacity_needed_bps: Bps,
    pub client_name: String,
    /// Private valuation for payoff accounting; defaults to the bid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Money>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backup_required: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub elastic: bool,
}

impl ResourceRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint_a == self.endpoint_b {
            return Err("endpoints must be distinct".into());
        }
        if self.time.duration_s.is_zero() {
            return Err("duration must be positive".into());
        }
        if self.strands_needed == 0 {
            return Err("strands_needed must be >= 1".into());
        }
        if self.capacity_needed_bps == 0 {
            return Err("capacity_needed_bps must be > 0".into());
        }
        if self.bid_amount.is_negative() {
            return Err("bids must be non-negative".into());
        }
        Ok(())
    }

    pub fn demand(&self) -> ResourceDemand {
        ResourceDemand {
            endpoint_a: self.endpoint_a.clone(),
            endpoint_b: self.endpoint_b.clone(),
            strands: self.strands_needed,
            capacity_bps: self.capacity_needed_bps,
        }
    }

    pub fn bid_value(&self) -> Money {
        self.value.unwrap_or(self.bid_amount)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Immediacy {
    Realtime,
    NonRealtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timescale {
    Small,
    Medium,
    Large,
    ExtraLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionClass {
    pub immediacy: Immediacy,
    pub timescale: Timescale,
    pub backup_required: bool,
    pub elastic: bool,
}

const HOUR_S: u64 = 3_600;
const DAY_S: u64 = 86_400;
const YEAR_S: u64 = 365 * DAY_S;

/// Classify a request: realtime iff its window has started, timescale from
/// the duration (small under an hour, medium under a day, large under a
/// year, extra-large beyond).
pub fn classify_request(request: &ResourceRequest, now: SimTime) -> ProvisionClass {
    let immediacy =
        if request.time.start <= now { Immediacy::Realtime } else { Immediacy::NonRealtime };
    let secs = request.time.duration_s.as_millis() / 1000;
    let timescale = if secs < HOUR_S {
        Timescale::Small
    } else if secs < DAY_S {
        Timescale::Medium
    } else if secs < YEAR_S {
        Timescale::Large
    } else {
        Timescale::ExtraLarge
    };
    ProvisionClass {
        immediacy,
        timescale,
        backup_required: request.backup_required,
        elastic: request.elastic,
    }
}

// ---------------------------------------------------------------------------
// Leases and outcomes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaseState {
    Pending,
    Active,
    Expired,
    TornDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub id: LeaseId,
    pub buyer: String,
    pub request_id: String,
    pub path: Path,
    pub strands: u32,
    pub capacity_bps: Bps,
    pub allocation: Option<AllocationId>,
    pub price: Money,
    pub start: SimTime,
    pub expiry: SimTime,
    pub state: LeaseState,
}

/// What the buyer needs to use the circuit: the path, its circuits, and the
/// wavelength each link carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityInfo {
    pub path: Path,
    pub circuits: Vec<CircuitId>,
    pub wavelengths: BTreeMap<LinkId, Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RejectionCause {
    InvalidRequest(String),
    UnregisteredBuyer,
    UnknownEndpoint(String),
    NoRoute,
    InsufficientStrands,
    InsufficientBandwidth,
    NotListed(String),
    BelowReserve,
    Depleted(String),
    WavelengthExhausted(String),
}

impl fmt::Display for RejectionCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectionCause::InvalidRequest(m) => write!(f, "invalid request: {m}"),
            RejectionCause::UnregisteredBuyer => f.write_str("buyer not registered"),
            RejectionCause::UnknownEndpoint(n) => write!(f, "unknown endpoint `{n}`"),
            RejectionCause::NoRoute => f.write_str("no route between endpoints"),
            RejectionCause::InsufficientStrands => f.write_str("insufficient free strands"),
            RejectionCause::InsufficientBandwidth => f.write_str("insufficient bandwidth"),
            RejectionCause::NotListed(l) => write!(f, "link `{l}` has no live offering"),
            RejectionCause::BelowReserve => f.write_str("no bid met the reserve"),
            RejectionCause::Depleted(l) => write!(f, "resources on `{l}` depleted"),
            RejectionCause::WavelengthExhausted(l) => write!(f, "no free wavelength on `{l}`"),
        }
    }
}

impl From<RejectReason> for RejectionCause {
    fn from(r: RejectReason) -> Self {
        match r {
            RejectReason::NoRoute => RejectionCause::NoRoute,
            RejectReason::InsufficientStrands => RejectionCause::InsufficientStrands,
            RejectReason::InsufficientBandwidth => RejectionCause::InsufficientBandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LeaseOutcome {
    Granted { lease: LeaseId, price: Money, connectivity: ConnectivityInfo },
    Rejected { cause: RejectionCause },
    Outbid,
}

/// Non-buyer-facing details the driver needs to enact a grant.
#[derive(Debug, Clone, PartialEq)]
pub struct GrantDetails {
    pub lease: LeaseId,
    pub allocation: AllocationId,
    pub configs: Vec<SiteConfig>,
    pub circuits_live_at: SimTime,
    pub expiry: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Disposition {
    Resolved { outcome: LeaseOutcome, grant: Option<GrantDetails> },
    /// Non-realtime request: auction won at admission, pipeline resumes at
    /// the window start.
    Scheduled { at: SimTime },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmitResult {
    pub request_id: String,
    pub client_name: String,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeardownAction {
    pub lease: LeaseId,
    pub buyer: String,
    pub sites: Vec<SiteId>,
    pub released: bool,
}

// ---------------------------------------------------------------------------
// Pipeline settings and wall-clock measurement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineSettings {
    pub mechanism: Mechanism,
    pub profile: LatencyProfile,
    /// Calibrated virtual duration of the exchange stage.
    pub exchange_latency: SimDuration,
    /// Calibrated virtual duration of configuration generation.
    pub config_generation_latency: SimDuration,
    /// Virtual cost of one protocol hop (zero in-process).
    pub protocol_latency: SimDuration,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            mechanism: Mechanism::Gsp,
            profile: LatencyProfile::Ideal,
            exchange_latency: SimDuration::from_millis(177),
            config_generation_latency: SimDuration::from_millis(124),
            protocol_latency: SimDuration::ZERO,
        }
    }
}

/// Measured wall-clock cost of the control plane's own work per request.
/// Kept apart from the event log so deterministic outputs stay byte-stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WallTimings {
    pub per_request: BTreeMap<String, WallBreakdown>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WallBreakdown {
    pub exchange_s: f64,
    pub config_generation_s: f64,
    pub internal_total_s: f64,
}

// ---------------------------------------------------------------------------
// Global control
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct Ggc {
    pub topology: TopologyGraph,
    pub exchange: Exchange,
    pub log: EventLog,
    pub wall: WallTimings,
    settings: PipelineSettings,
    buyers: BTreeSet<String>,
    leases: BTreeMap<LeaseId, Lease>,
    pending: BTreeMap<String, PendingActivation>,
    next_lease: u64,
    next_request: u64,
}

#[derive(Debug, Clone)]
struct PendingActivation {
    request: ResourceRequest,
    price: Money,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SellerRegistration {
    pub offerings: Vec<OfferingId>,
    pub sites: Vec<SiteId>,
}

impl Ggc {
    pub fn new(topology: TopologyGraph, settings: PipelineSettings) -> Self {
        let mut exchange = Exchange::new();
        for link in topology.links() {
            exchange.register_link(link.id.clone());
        }
        Ggc {
            topology,
            exchange,
            log: EventLog::new(),
            wall: WallTimings::default(),
            settings,
            buyers: BTreeSet::new(),
            leases: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_lease: 0,
            next_request: 0,
        }
    }

    pub fn settings(&self) -> PipelineSettings {
        self.settings
    }

    pub fn lease(&self, id: LeaseId) -> Option<&Lease> {
        self.leases.get(&id)
    }

    pub fn leases(&self) -> impl Iterator<Item = &Lease> {
        self.leases.values()
    }

    /// Merge a seller's topology fragment, list its links on the exchange,
    /// and report which sites need the news. Conflicts reject the whole
    /// registration with the graph unchanged.
    pub fn register_seller(
        &mut self,
        doc: &TopologyDocument,
        reserves: &BTreeMap<LinkId, Money>,
        now: SimTime,
    ) -> Result<SellerRegistration, GgcError> {
        // Offering conflicts are detected before the merge so a rejection
        // leaves no side of the registration applied.
        for link in &doc.links {
            let id = LinkId::new(&link.id);
            let reserve = reserves.get(&id).copied().unwrap_or(Money::ZERO);
            if let Some(existing) = self.exchange.offering_for_link(&id) {
                if existing.seller != link.seller || existing.reserve != reserve {
                    return Err(ExchangeError::DuplicateOffering(id).into());
                }
            }
        }
        self.topology.merge_document(doc)?;
        let mut offerings = Vec::new();
        let mut sites = BTreeSet::new();
        for link in &doc.links {
            let id = LinkId::new(&link.id);
            self.exchange.register_link(id.clone());
            let reserve = reserves.get(&id).copied().unwrap_or(Money::ZERO);
            offerings.push(self.exchange.register_offering(&link.seller, id.clone(), reserve, now)?);
            let conduit = self.topology.link(&id).expect("merged").conduit.clone();
            let conduit = self.topology.conduit(&conduit).expect("merged");
            for node in [&conduit.endpoints.0, &conduit.endpoints.1] {
                if let Some(site) = self.topology.site_of(node) {
                    sites.insert(site.clone());
                }
            }
        }
        Ok(SellerRegistration { offerings, sites: sites.into_iter().collect() })
    }

    pub fn register_buyer(&mut self, client_name: &str) -> Result<String, GgcError> {
        if self.buyers.contains(client_name) {
            return Err(GgcError::DuplicateBuyer(client_name.to_string()));
        }
        self.exchange.register_buyer(client_name)?;
        self.buyers.insert(client_name.to_string());
        Ok(format!("buyer-token:{client_name}"))
    }

    pub fn is_registered_buyer(&self, client_name: &str) -> bool {
        self.buyers.contains(client_name)
    }

    fn next_request_id(&mut self) -> String {
        let id = format!("r{:04}", self.next_request);
        self.next_request += 1;
        id
    }

    fn record(&mut self, request_id: &str, stage: Stage, t_start: SimTime, t_end: SimTime) {
        self.log.append(StageRecord {
            request_id: request_id.to_string(),
            stage,
            t_start,
            t_end,
        });
    }

    /// The offerings a request bids on: the links of its current best
    /// candidate path. The auction precedes the authoritative graph query,
    /// so this is a target, not a reservation.
    fn bidding_target(&self, request: &ResourceRequest) -> Result<Vec<OfferingId>, RejectionCause> {
        let admissibility = self
            .topology
            .check_admissibility(&request.demand())
            .map_err(|e| match e {
                TopologyError::UnknownNode(n) => RejectionCause::UnknownEndpoint(n.0),
                other => RejectionCause::InvalidRequest(other.to_string()),
            })?;
        let paths = match admissibility {
            AdmissibilityResult::Admissible(paths) => paths,
            AdmissibilityResult::Rejected(reason) => return Err(reason.into()),
        };
        let path = &paths[0];
        let mut offerings = Vec::with_capacity(path.segments.len());
        for link in &path.segments {
            match self.exchange.offering_for_link(link) {
                Some(o) => offerings.push(o.id),
                None => return Err(RejectionCause::NotListed(link.0.clone())),
            }
        }
        Ok(offerings)
    }

    /// Admit a batch of simultaneous requests. Requests targeting the same
    /// link set compete in one sealed round; each round has one compound
    /// slot, so multi-link paths are won all-or-nothing.
    pub fn admit_requests(&mut self, batch: &[ResourceRequest], now: SimTime) -> Vec<AdmitResult> {
        struct Admitted {
            index: usize,
            request_id: String,
            offerings: Vec<OfferingId>,
        }

        let mut results: BTreeMap<usize, AdmitResult> = BTreeMap::new();
        let mut admitted: Vec<Admitted> = Vec::new();

        for (index, request) in batch.iter().enumerate() {
            let request_id = self.next_request_id();
            self.record(&request_id, Stage::AcceptBid, now, now);
            let reject = |cause: RejectionCause| AdmitResult {
                request_id: request_id.clone(),
                client_name: request.client_name.clone(),
                disposition: Disposition::Resolved {
                    outcome: LeaseOutcome::Rejected { cause },
                    grant: None,
                },
            };
            if let Err(msg) = request.validate() {
                results.insert(index, reject(RejectionCause::InvalidRequest(msg)));
                continue;
            }
            if !self.buyers.contains(&request.client_name) {
                results.insert(index, reject(RejectionCause::UnregisteredBuyer));
                continue;
            }
            // Pick the bidding target: the current best candidate path. The
            // authoritative admissibility check re-runs after the auction.
            let target = match self.bidding_target(request) {
                Ok(offerings) => offerings,
                Err(cause) => {
                    results.insert(index, reject(cause));
                    continue;
                }
            };
            admitted.push(Admitted { index, request_id, offerings: target });
        }

        // Group same-target requests into one round, first-seen order.
        let mut groups: Vec<(Vec<OfferingId>, Vec<usize>)> = Vec::new();
        for (pos, adm) in admitted.iter().enumerate() {
            let key: BTreeSet<OfferingId> = adm.offerings.iter().copied().collect();
            match groups
                .iter_mut()
                .find(|(offs, _)| offs.iter().copied().collect::<BTreeSet<_>>() == key)
            {
                Some((_, members)) => members.push(pos),
                None => groups.push((adm.offerings.clone(), vec![pos])),
            }
        }

        let auction_end = now + self.settings.exchange_latency;
        for (offerings, members) in groups {
            let wall_start = Instant::now();
            let round = self
                .exchange
                .open_round(&offerings, 1)
                .expect("offerings validated and rounds serialized");
            let mut members = members;
            members.retain(|&pos| {
                let adm = &admitted[pos];
                let request = &batch[adm.index];
                let submitted = self.exchange.submit_bid(Bid {
                    bidder: request.client_name.clone(),
                    offering: offerings[0],
                    amount: request.bid_amount,
                    value: request.bid_value(),
                    submitted_at: now,
                });
                match submitted {
                    Ok(_) => true,
                    // One bid per bidder per round: a second same-client
                    // request in the batch is turned away.
                    Err(e) => {
                        results.insert(
                            adm.index,
                            AdmitResult {
                                request_id: adm.request_id.clone(),
                                client_name: request.client_name.clone(),
                                disposition: Disposition::Resolved {
                                    outcome: LeaseOutcome::Rejected {
                                        cause: RejectionCause::InvalidRequest(e.to_string()),
                                    },
                                    grant: None,
                                },
                            },
                        );
                        false
                    }
                }
            });
            if members.is_empty() {
                let _ = self.exchange.run_auction(round, self.settings.mechanism);
                continue;
            }
            let auction = self.exchange.run_auction(round, self.settings.mechanism);
            let auction_wall = wall_start.elapsed().as_secs_f64();
            for &pos in &members {
                let request_id = admitted[pos].request_id.clone();
                self.record(&request_id, Stage::Auction, now, auction_end);
                let wall = self.wall.per_request.entry(request_id).or_default();
                wall.exchange_s += auction_wall;
                wall.internal_total_s += auction_wall;
            }

            match auction {
                Err(ExchangeError::EmptyRound) => {
                    for &pos in &members {
                        let adm = &admitted[pos];
                        results.insert(
                            adm.index,
                            AdmitResult {
                                request_id: adm.request_id.clone(),
                                client_name: batch[adm.index].client_name.clone(),
                                disposition: Disposition::Resolved {
                                    outcome: LeaseOutcome::Rejected {
                                        cause: RejectionCause::BelowReserve,
                                    },
                                    grant: None,
                                },
                            },
                        );
                    }
                }
                Err(e) => unreachable!("auction on a fresh round cannot fail otherwise: {e}"),
                Ok(outcome) => {
                    for &pos in &members {
                        let adm = &admitted[pos];
                        let request = &batch[adm.index];
                        if outcome.winner(&request.client_name).is_none() {
                            results.insert(
                                adm.index,
                                AdmitResult {
                                    request_id: adm.request_id.clone(),
                                    client_name: request.client_name.clone(),
                                    disposition: Disposition::Resolved {
                                        outcome: LeaseOutcome::Outbid,
                                        grant: None,
                                    },
                                },
                            );
                        }
                    }
                    let winner = &outcome.winners[0];
                    let pos = members
                        .iter()
                        .copied()
                        .find(|&p| batch[admitted[p].index].client_name == winner.bidder)
                        .expect("winner came from this round");
                    let adm = &admitted[pos];
                    let request = &batch[adm.index];
                    let request_id = adm.request_id.clone();
                    let price = winner.payment;
                    let disposition = if classify_request(request, now).immediacy
                        == Immediacy::Realtime
                    {
                        let (outcome, grant) =
                            self.run_grant_stages(&request_id, request, price, now, auction_end);
                        Disposition::Resolved { outcome, grant }
                    } else {
                        self.pending.insert(
                            request_id.clone(),
                            PendingActivation { request: request.clone(), price },
                        );
                        Disposition::Scheduled { at: request.time.start }
                    };
                    results.insert(
                        adm.index,
                        AdmitResult {
                            request_id,
                            client_name: request.client_name.clone(),
                            disposition,
                        },
                    );
                }
            }
        }

        results.into_values().collect()
    }

    /// Resume a scheduled (non-realtime) request at its window start,
    /// running the post-auction pipeline stages.
    pub fn activate_scheduled(&mut self, request_id: &str, now: SimTime) -> Result<AdmitResult, GgcError> {
        let pending = self
            .pending
            .remove(request_id)
            .ok_or_else(|| GgcError::UnknownPending(request_id.to_string()))?;
        let (outcome, grant) =
            self.run_grant_stages(request_id, &pending.request, pending.price, now, now);
        Ok(AdmitResult {
            request_id: request_id.to_string(),
            client_name: pending.request.client_name.clone(),
            disposition: Disposition::Resolved { outcome, grant },
        })
    }

    pub fn pending_activations(&self) -> impl Iterator<Item = &str> {
        self.pending.keys().map(|s| s.as_str())
    }

    /// Stages 10 through 17: graph query, admissibility, configuration
    /// generation and push, circuit setup, counter update, notification.
    /// `admitted_at` anchors the lease window; `t` is the virtual stage
    /// cursor, already past the auction.
    fn run_grant_stages(
        &mut self,
        request_id: &str,
        request: &ResourceRequest,
        price: Money,
        admitted_at: SimTime,
        t: SimTime,
    ) -> (LeaseOutcome, Option<GrantDetails>) {
        let wall_start = Instant::now();
        let proto = self.settings.protocol_latency;
        self.record(request_id, Stage::WinnerReport, t, t + proto);
        let t = t + proto;

        self.record(request_id, Stage::GraphQuery, t, t);
        let admissibility = self.topology.check_admissibility(&request.demand());
        let reject = |this: &mut Self, cause: RejectionCause| {
            // Payment obligation is cancelled on abort: no lease, no charge.
            this.record(request_id, Stage::Admissibility, t, t);
            let wall = this.wall.per_request.entry(request_id.to_string()).or_default();
            wall.internal_total_s += wall_start.elapsed().as_secs_f64();
            (LeaseOutcome::Rejected { cause }, None)
        };
        let path = match admissibility {
            Err(TopologyError::UnknownNode(n)) => {
                return reject(self, RejectionCause::UnknownEndpoint(n.0))
            }
            Err(e) => return reject(self, RejectionCause::InvalidRequest(e.to_string())),
            Ok(AdmissibilityResult::Rejected(reason)) => return reject(self, reason.into()),
            Ok(AdmissibilityResult::Admissible(paths)) => paths.into_iter().next().expect("non-empty"),
        };
        self.record(request_id, Stage::Admissibility, t, t);

        let lease_id = LeaseId(self.next_lease);
        self.next_lease += 1;
        let start = request.time.start.max(admitted_at);
        let expiry = start + request.time.duration_s;
        let mut lease = Lease {
            id: lease_id,
            buyer: request.client_name.clone(),
            request_id: request_id.to_string(),
            path: path.clone(),
            strands: request.strands_needed,
            capacity_bps: request.capacity_needed_bps,
            allocation: None,
            price,
            start,
            expiry,
            state: LeaseState::Pending,
        };

        let cfg_wall = Instant::now();
        let configs = self.generate_configuration(&path, &lease);
        let cfg_elapsed = cfg_wall.elapsed().as_secs_f64();
        let cfg_end = t + self.settings.config_generation_latency;
        self.record(request_id, Stage::ConfigGeneration, t, cfg_end);
        let t = cfg_end;
        let configs = match configs {
            Ok(c) => c,
            Err(e) => {
                let wall = self.wall.per_request.entry(request_id.to_string()).or_default();
                wall.config_generation_s += cfg_elapsed;
                wall.internal_total_s += wall_start.elapsed().as_secs_f64();
                return (
                    LeaseOutcome::Rejected { cause: RejectionCause::InvalidRequest(e.to_string()) },
                    None,
                );
            }
        };

        self.record(request_id, Stage::ConfigPush, t, t + proto);
        let t = t + proto;

        let setup_latency = provision_latency(self.settings.profile, path.segments.len() as u32)
            .expect("paths have at least one segment");
        let setup_end = t + setup_latency;
        self.record(request_id, Stage::CircuitSetup, t, setup_end);
        let t = setup_end;

        self.record(request_id, Stage::CounterUpdate, t, t);
        let allocation = match self.topology.allocate(
            &path,
            request.strands_needed,
            request.capacity_needed_bps,
            lease_id,
        ) {
            Ok(a) => a,
            Err(e) => {
                self.record(request_id, Stage::Notify, t, t);
                let cause = match e {
                    TopologyError::ConcurrentDepletion { link } => {
                        RejectionCause::Depleted(link.0)
                    }
                    TopologyError::WavelengthExhausted { link } => {
                        RejectionCause::WavelengthExhausted(link.0)
                    }
                    other => RejectionCause::InvalidRequest(other.to_string()),
                };
                let wall = self.wall.per_request.entry(request_id.to_string()).or_default();
                wall.config_generation_s += cfg_elapsed;
                wall.internal_total_s += wall_start.elapsed().as_secs_f64();
                return (LeaseOutcome::Rejected { cause }, None);
            }
        };
        lease.allocation = Some(allocation);

        let alloc = self.topology.allocation(&allocation).expect("just allocated");
        let mut wavelengths: BTreeMap<LinkId, Vec<u32>> = BTreeMap::new();
        for cid in &alloc.circuits {
            let c = self.topology.circuit(cid).expect("allocated circuit");
            wavelengths.entry(c.link.clone()).or_default().push(c.wavelength);
        }
        let connectivity =
            ConnectivityInfo { path: path.clone(), circuits: alloc.circuits.clone(), wavelengths };

        self.record(request_id, Stage::Notify, t, t);
        self.leases.insert(lease_id, lease);

        let wall = self.wall.per_request.entry(request_id.to_string()).or_default();
        wall.config_generation_s += cfg_elapsed;
        wall.internal_total_s += wall_start.elapsed().as_secs_f64();

        (
            LeaseOutcome::Granted { lease: lease_id, price, connectivity },
            Some(GrantDetails {
                lease: lease_id,
                allocation,
                configs,
                circuits_live_at: setup_end,
                expiry,
            }),
        )
    }

    /// One config per distinct site on the path, naming its local links,
    /// their planned wavelengths, and the lease window. Pure data.
    pub fn generate_configuration(
        &self,
        path: &Path,
        lease: &Lease,
    ) -> Result<Vec<SiteConfig>, GgcError> {
        site_configs(&self.topology, path, lease)
    }

    /// Flip a pending lease live once its circuits are up.
    pub fn activate_lease(&mut self, lease: LeaseId) -> Result<(), GgcError> {
        let l = self.leases.get_mut(&lease).ok_or(GgcError::UnknownLease(lease))?;
        if l.state == LeaseState::Pending {
            l.state = LeaseState::Active;
        }
        Ok(())
    }

    /// Expire every lease whose window has closed, releasing its circuits.
    /// Idempotent; a lease expiring exactly at `now` is torn down.
    pub fn expire_leases(&mut self, now: SimTime) -> Vec<TeardownAction> {
        let due: Vec<LeaseId> = self
            .leases
            .values()
            .filter(|l| {
                matches!(l.state, LeaseState::Pending | LeaseState::Active) && l.expiry <= now
            })
            .map(|l| l.id)
            .collect();
        let mut actions = Vec::new();
        for id in due {
            let (allocation, buyer, path) = {
                let lease = self.leases.get_mut(&id).expect("collected above");
                lease.state = LeaseState::Expired;
                (lease.allocation, lease.buyer.clone(), lease.path.clone())
            };
            let released = match allocation {
                Some(a) => self.topology.release(a).is_ok(),
                None => false,
            };
            let sites = self.path_sites(&path);
            actions.push(TeardownAction { lease: id, buyer, sites, released });
        }
        actions
    }

    /// Plan a replacement path for a lease whose local backup options are
    /// exhausted: the best candidate for its original demand, if any.
    pub fn plan_global_reroute(&self, lease: LeaseId) -> Option<Path> {
        let l = self.leases.get(&lease)?;
        let demand = ResourceDemand {
            endpoint_a: l.path.endpoints.0.clone(),
            endpoint_b: l.path.endpoints.1.clone(),
            strands: l.strands,
            capacity_bps: l.capacity_bps,
        };
        match self.topology.check_admissibility(&demand) {
            Ok(AdmissibilityResult::Admissible(paths)) => paths.into_iter().next(),
            _ => None,
        }
    }

    /// Release a lease's current allocation ahead of a global reroute;
    /// the lease runs degraded until a new allocation attaches.
    pub fn detach_allocation(&mut self, lease: LeaseId) -> Result<(), GgcError> {
        let l = self.leases.get_mut(&lease).ok_or(GgcError::UnknownLease(lease))?;
        if let Some(a) = l.allocation.take() {
            let _ = self.topology.release(a);
        }
        Ok(())
    }

    /// Attach a fresh allocation on `path`, if the lease is still live.
    /// Returns whether circuits were committed.
    pub fn attach_allocation(&mut self, lease: LeaseId, path: &Path) -> Result<bool, GgcError> {
        let (strands, capacity, live) = {
            let l = self.leases.get(&lease).ok_or(GgcError::UnknownLease(lease))?;
            (
                l.strands,
                l.capacity_bps,
                matches!(l.state, LeaseState::Pending | LeaseState::Active),
            )
        };
        if !live {
            return Ok(false);
        }
        match self.topology.allocate(path, strands, capacity, lease) {
            Ok(allocation) => {
                let l = self.leases.get_mut(&lease).expect("checked");
                l.allocation = Some(allocation);
                l.path = path.clone();
                Ok(true)
            }
            Err(
                TopologyError::ConcurrentDepletion { .. } | TopologyError::WavelengthExhausted { .. },
            ) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path_sites(&self, path: &Path) -> Vec<SiteId> {
        let mut sites = BTreeSet::new();
        for seg in &path.segments {
            if let Some(link) = self.topology.link(seg) {
                if let Some(conduit) = self.topology.conduit(&link.conduit) {
                    for node in [&conduit.endpoints.0, &conduit.endpoints.1] {
                        if let Some(site) = self.topology.site_of(node) {
                            sites.insert(site.clone());
                        }
                    }
                }
            }
        }
        sites.into_iter().collect()
    }

    /// Record the auction result message (step 9 analog) for service mode.
    pub fn outcome_for_round(&self, round: crate::exchange::RoundId) -> Option<&AuctionOutcome> {
        self.exchange.outcome(round)
    }
}

/// One config per distinct site on a path: its local links, their planned
/// wavelengths, and the lease window.
pub fn site_configs(
    topology: &TopologyGraph,
    path: &Path,
    lease: &Lease,
) -> Result<Vec<SiteConfig>, GgcError> {
    let plan = topology.plan_wavelengths(path, lease.strands)?;
    let mut path_nodes: BTreeSet<NodeId> = BTreeSet::new();
    for seg in &path.segments {
        let link = topology.link(seg).ok_or_else(|| TopologyError::UnknownLink(seg.clone()))?;
        let conduit = topology.conduit(&link.conduit).expect("validated path conduits");
        path_nodes.insert(conduit.endpoints.0.clone());
        path_nodes.insert(conduit.endpoints.1.clone());
    }
    let mut configs: BTreeMap<SiteId, SiteConfig> = BTreeMap::new();
    for node in &path_nodes {
        let site = topology
            .site_of(node)
            .ok_or_else(|| TopologyError::UnknownNode(node.clone()))?
            .clone();
        configs.entry(site.clone()).or_insert_with(|| SiteConfig {
            site,
            lease: lease.id,
            request_id: lease.request_id.clone(),
            links: BTreeMap::new(),
            window: LeaseWindow { start: lease.start, expiry: lease.expiry },
        });
    }
    for (link_id, wavelengths) in &plan {
        let link = topology.link(link_id).expect("planned link");
        let conduit = topology.conduit(&link.conduit).expect("validated");
        for node in [&conduit.endpoints.0, &conduit.endpoints.1] {
            let site = topology.site_of(node).expect("validated").clone();
            if let Some(config) = configs.get_mut(&site) {
                config.links.insert(link_id.clone(), wavelengths.clone());
            }
        }
    }
    Ok(configs.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dumbbell_doc(links: u32, bandwidth: Bps) -> TopologyDocument {
        let link_ids: Vec<String> = (1..=links).map(|i| format!("\"l{i}\"")).collect();
        let link_docs: Vec<String> = (1..=links)
            .map(|i| {
                format!(
                    r#"{{"id":"l{i}","conduit":"c1","seller":"fiberco","max_bandwidth_bps":{bandwidth},"wavelength_capacity":8}}"#
                )
            })
            .collect();
        serde_json::from_str(&format!(
            r#"{{
              "nodes": [
                {{"id":"A","site":"site-a","geo":{{"lat":0.0,"lon":0.0}}}},
                {{"id":"B","site":"site-b","geo":{{"lat":0.0,"lon":1.0}}}}
              ],
              "conduits": [{{"id":"c1","endpoints":["A","B"],"links":[{}]}}],
              "links": [{}]
            }}"#,
            link_ids.join(","),
            link_docs.join(",")
        ))
        .unwrap()
    }

    fn ggc_with_dumbbell(links: u32) -> Ggc {
        let mut ggc = Ggc::new(TopologyGraph::new(), PipelineSettings::default());
        let doc = dumbbell_doc(links, 20_000_000);
        ggc.register_seller(&doc, &BTreeMap::new(), SimTime::ZERO).unwrap();
        ggc
    }

    fn request(client: &str, bid: i64, start: f64, duration: f64) -> ResourceRequest {
        ResourceRequest {
            endpoint_a: NodeId::new("A"),
            endpoint_b: NodeId::new("B"),
            strands_needed: 1,
            bid_amount: Money(bid),
            time: RequestWindow {
                start: SimTime::from_secs_f64(start),
                duration_s: SimDuration::from_secs_f64(duration),
            },
            capacity_needed_bps: 20_000_000,
            client_name: client.to_string(),
            value: None,
            backup_required: false,
            elastic: false,
        }
    }

    #[test]
    fn request_tuple_field_names_round_trip() {
        let json = r#"{
            "endpoint_a": "A", "endpoint_b": "B",
            "strands_needed": 2, "bid_amount": 10000000,
            "time": {"start": 0.0, "duration_s": 90.0},
            "capacity_needed_bps": 20000000,
            "client_name": "tenant-1"
        }"#;
        let r: ResourceRequest = serde_json::from_str(json).unwrap();
        assert_eq!(r.strands_needed, 2);
        assert_eq!(r.time.duration_s, SimDuration::from_secs_f64(90.0));
        let out = serde_json::to_value(&r).unwrap();
        for field in
            ["endpoint_a", "endpoint_b", "strands_needed", "bid_amount", "time", "capacity_needed_bps", "client_name"]
        {
            assert!(out.get(field).is_some(), "missing `{field}`");
        }
    }

    #[test]
    fn classification_follows_duration_and_start() {
        let now = SimTime::from_secs_f64(100.0);
        let r = request("c", 1, 100.0, 45.0);
        let class = classify_request(&r, now);
        assert_eq!(class.immediacy, Immediacy::Realtime);
        assert_eq!(class.timescale, Timescale::Small);

        let r = request("c", 1, 100.0 + 7200.0, 6.0 * 3600.0);
        let class = classify_request(&r, now);
        assert_eq!(class.immediacy, Immediacy::NonRealtime);
        assert_eq!(class.timescale, Timescale::Medium);

        let r = request("c", 1, 0.0, 2.0 * 365.0 * 86400.0);
        assert_eq!(classify_request(&r, now).timescale, Timescale::ExtraLarge);

        let r = request("c", 1, 0.0, 3.0 * 86400.0);
        assert_eq!(classify_request(&r, now).timescale, Timescale::Large);
    }

    #[test]
    fn buyer_registration_is_unique() {
        let mut ggc = ggc_with_dumbbell(1);
        ggc.register_buyer("tenant").unwrap();
        assert!(matches!(
            ggc.register_buyer("tenant"),
            Err(GgcError::DuplicateBuyer(_))
        ));
    }

    #[test]
    fn unregistered_buyer_is_rejected_at_accept() {
        let mut ggc = ggc_with_dumbbell(1);
        let results = ggc.admit_requests(&[request("ghost", 10, 0.0, 60.0)], SimTime::ZERO);
        match &results[0].disposition {
            Disposition::Resolved { outcome: LeaseOutcome::Rejected { cause }, .. } => {
                assert_eq!(*cause, RejectionCause::UnregisteredBuyer);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn single_bidder_grant_runs_every_stage_in_order() {
        let mut ggc = ggc_with_dumbbell(1);
        ggc.register_buyer("tenant").unwrap();
        let results = ggc.admit_requests(&[request("tenant", 10_000_000, 0.0, 60.0)], SimTime::ZERO);
        let Disposition::Resolved { outcome, grant } = &results[0].disposition else {
            panic!("expected resolved");
        };
        let LeaseOutcome::Granted { lease, price, connectivity } = outcome else {
            panic!("expected grant, got {outcome:?}");
        };
        assert_eq!(*price, Money::ZERO); // sole bidder pays the (zero) reserve
        assert_eq!(connectivity.circuits.len(), 1);
        let grant = grant.as_ref().unwrap();
        assert_eq!(grant.configs.len(), 2); // one per dumbbell site

        let records: Vec<_> = ggc.log.records_for(&results[0].request_id).collect();
        let stages: Vec<Stage> = records.iter().map(|r| r.stage).collect();
        assert_eq!(stages, Stage::GRANTED_SEQUENCE.to_vec());
        // Monotone non-decreasing timestamps along the pipeline.
        for pair in records.windows(2) {
            assert!(pair[0].t_start <= pair[0].t_end);
            assert!(pair[0].t_end <= pair[1].t_start);
        }
        // Internal virtual overhead is the two calibrated stages.
        let auction = records.iter().find(|r| r.stage == Stage::Auction).unwrap();
        assert_eq!(auction.t_end - auction.t_start, SimDuration::from_millis(177));

        assert_eq!(ggc.lease(*lease).unwrap().state, LeaseState::Pending);
        assert_eq!(ggc.lease(*lease).unwrap().price, *price);
        ggc.topology.verify().unwrap();
    }

    #[test]
    fn lower_bidder_is_outbid() {
        let mut ggc = ggc_with_dumbbell(1);
        ggc.register_buyer("alice").unwrap();
        ggc.register_buyer("bob").unwrap();
        let results = ggc.admit_requests(
            &[request("alice", 10_000_000, 0.0, 60.0), request("bob", 8_000_000, 0.0, 60.0)],
            SimTime::ZERO,
        );
        let outcomes: BTreeMap<&str, &Disposition> = results
            .iter()
            .map(|r| (r.client_name.as_str(), &r.disposition))
            .collect();
        match outcomes["alice"] {
            Disposition::Resolved { outcome: LeaseOutcome::Granted { price, .. }, .. } => {
                assert_eq!(*price, Money(8_000_000)); // second price
            }
            other => panic!("expected grant, got {other:?}"),
        }
        assert!(matches!(
            outcomes["bob"],
            Disposition::Resolved { outcome: LeaseOutcome::Outbid, .. }
        ));
    }

    #[test]
    fn admissibility_failure_aborts_without_counters() {
        // One strand, one wavelength: the first grant exhausts it.
        let doc: TopologyDocument = serde_json::from_str(
            r#"{
              "nodes": [
                {"id":"A","site":"site-a","geo":{"lat":0.0,"lon":0.0}},
                {"id":"B","site":"site-b","geo":{"lat":0.0,"lon":1.0}}
              ],
              "conduits": [{"id":"c1","endpoints":["A","B"],"links":["l1"]}],
              "links": [{"id":"l1","conduit":"c1","seller":"fiberco","max_bandwidth_bps":20000000,"wavelength_capacity":1}]
            }"#,
        )
        .unwrap();
        let mut ggc = Ggc::new(TopologyGraph::new(), PipelineSettings::default());
        ggc.register_seller(&doc, &BTreeMap::new(), SimTime::ZERO).unwrap();
        ggc.register_buyer("a").unwrap();
        ggc.register_buyer("b").unwrap();
        let snapshot_after_first = {
            let results =
                ggc.admit_requests(&[request("a", 10_000_000, 0.0, 600.0)], SimTime::ZERO);
            assert!(matches!(
                results[0].disposition,
                Disposition::Resolved { outcome: LeaseOutcome::Granted { .. }, .. }
            ));
            ggc.topology.counters_snapshot()
        };
        // The only strand is taken: the next request is turned away with no
        // counter change.
        let results =
            ggc.admit_requests(&[request("b", 9_000_000, 1.0, 60.0)], SimTime::from_secs_f64(1.0));
        match &results[0].disposition {
            Disposition::Resolved { outcome: LeaseOutcome::Rejected { cause }, grant } => {
                assert_eq!(*cause, RejectionCause::InsufficientStrands);
                assert!(grant.is_none());
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        assert_eq!(ggc.topology.counters_snapshot(), snapshot_after_first);
    }

    #[test]
    fn depletion_between_auction_and_activation_aborts_at_admissibility() {
        let mut ggc = ggc_with_dumbbell(1);
        ggc.register_buyer("early").unwrap();
        ggc.register_buyer("late").unwrap();

        // A scheduled request wins its auction at admission...
        let scheduled =
            ggc.admit_requests(&[request("early", 10_000_000, 100.0, 60.0)], SimTime::ZERO);
        assert!(matches!(scheduled[0].disposition, Disposition::Scheduled { .. }));

        // ...then a realtime request consumes the strand before activation.
        let interloper =
            ggc.admit_requests(&[request("late", 9_000_000, 1.0, 600.0)], SimTime::from_secs_f64(1.0));
        assert!(matches!(
            interloper[0].disposition,
            Disposition::Resolved { outcome: LeaseOutcome::Granted { .. }, .. }
        ));
        let counters = ggc.topology.counters_snapshot();

        // Activation aborts at the admissibility stage; nothing changes.
        let activated = ggc
            .activate_scheduled(&scheduled[0].request_id, SimTime::from_secs_f64(100.0))
            .unwrap();
        match &activated.disposition {
            Disposition::Resolved { outcome: LeaseOutcome::Rejected { cause }, grant } => {
                assert_eq!(*cause, RejectionCause::InsufficientBandwidth);
                assert!(grant.is_none());
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        assert_eq!(ggc.topology.counters_snapshot(), counters);
        let stages: Vec<Stage> =
            ggc.log.records_for(&scheduled[0].request_id).map(|r| r.stage).collect();
        assert_eq!(
            stages,
            vec![
                Stage::AcceptBid,
                Stage::Auction,
                Stage::WinnerReport,
                Stage::GraphQuery,
                Stage::Admissibility
            ]
        );
    }

    #[test]
    fn below_reserve_bids_empty_the_round() {
        let mut ggc = Ggc::new(TopologyGraph::new(), PipelineSettings::default());
        let doc = dumbbell_doc(1, 20_000_000);
        let reserves = BTreeMap::from([(LinkId::new("l1"), Money(4_000_000))]);
        ggc.register_seller(&doc, &reserves, SimTime::ZERO).unwrap();
        ggc.register_buyer("a").unwrap();
        let results = ggc.admit_requests(&[request("a", 3_000_000, 0.0, 60.0)], SimTime::ZERO);
        assert!(matches!(
            &results[0].disposition,
            Disposition::Resolved {
                outcome: LeaseOutcome::Rejected { cause: RejectionCause::BelowReserve },
                ..
            }
        ));
    }

    #[test]
    fn nonrealtime_requests_schedule_activation() {
        let mut ggc = ggc_with_dumbbell(1);
        ggc.register_buyer("tenant").unwrap();
        let results =
            ggc.admit_requests(&[request("tenant", 10_000_000, 50.0, 60.0)], SimTime::ZERO);
        let Disposition::Scheduled { at } = results[0].disposition else {
            panic!("expected scheduled activation");
        };
        assert_eq!(at, SimTime::from_secs_f64(50.0));

        let activated = ggc
            .activate_scheduled(&results[0].request_id, SimTime::from_secs_f64(50.0))
            .unwrap();
        let Disposition::Resolved { outcome: LeaseOutcome::Granted { lease, .. }, .. } =
            activated.disposition
        else {
            panic!("expected grant at activation");
        };
        let lease = ggc.lease(lease).unwrap();
        assert_eq!(lease.start, SimTime::from_secs_f64(50.0));
        assert_eq!(lease.expiry, SimTime::from_secs_f64(110.0));
    }

    #[test]
    fn sequential_path_generates_one_config_per_site() {
        // Four nodes at four sites joined by three conduits.
        let doc: TopologyDocument = serde_json::from_str(
            r#"{
              "nodes": [
                {"id":"n0","site":"s0","geo":{"lat":0.0,"lon":0.0}},
                {"id":"n1","site":"s1","geo":{"lat":0.0,"lon":1.0}},
                {"id":"n2","site":"s2","geo":{"lat":0.0,"lon":2.0}},
                {"id":"n3","site":"s3","geo":{"lat":0.0,"lon":3.0}}
              ],
              "conduits": [
                {"id":"c0","endpoints":["n0","n1"],"links":["c0-l0"]},
                {"id":"c1","endpoints":["n1","n2"],"links":["c1-l0"]},
                {"id":"c2","endpoints":["n2","n3"],"links":["c2-l0"]}
              ],
              "links": [
                {"id":"c0-l0","conduit":"c0","seller":"s","max_bandwidth_bps":20000000,"wavelength_capacity":8},
                {"id":"c1-l0","conduit":"c1","seller":"s","max_bandwidth_bps":20000000,"wavelength_capacity":8},
                {"id":"c2-l0","conduit":"c2","seller":"s","max_bandwidth_bps":20000000,"wavelength_capacity":8}
              ]
            }"#,
        )
        .unwrap();
        let mut ggc = Ggc::new(TopologyGraph::new(), PipelineSettings::default());
        ggc.register_seller(&doc, &BTreeMap::new(), SimTime::ZERO).unwrap();
        ggc.register_buyer("tenant").unwrap();
        let mut req = request("tenant", 10_000_000, 0.0, 60.0);
        req.endpoint_a = NodeId::new("n0");
        req.endpoint_b = NodeId::new("n3");
        let results = ggc.admit_requests(&[req], SimTime::ZERO);
        let Disposition::Resolved { grant: Some(grant), .. } = &results[0].disposition else {
            panic!("expected grant");
        };
        assert_eq!(grant.configs.len(), 4);
        // Ends see one link, middles two.
        let links_per_site: Vec<usize> = grant.configs.iter().map(|c| c.links.len()).collect();
        assert_eq!(links_per_site.iter().sum::<usize>(), 6);
    }

    #[test]
    fn expiry_restores_counters_and_is_idempotent() {
        let mut ggc = ggc_with_dumbbell(1);
        let initial = ggc.topology.counters_snapshot();
        ggc.register_buyer("tenant").unwrap();
        let results = ggc.admit_requests(&[request("tenant", 1, 0.0, 60.0)], SimTime::ZERO);
        let Disposition::Resolved { grant: Some(grant), .. } = &results[0].disposition else {
            panic!("expected grant");
        };
        ggc.activate_lease(grant.lease).unwrap();

        // Not due yet.
        assert!(ggc.expire_leases(SimTime::from_secs_f64(59.9)).is_empty());
        // Due exactly at the boundary.
        let actions = ggc.expire_leases(SimTime::from_secs_f64(60.0));
        assert_eq!(actions.len(), 1);
        assert!(actions[0].released);
        assert_eq!(ggc.lease(grant.lease).unwrap().state, LeaseState::Expired);
        assert_eq!(ggc.topology.counters_snapshot(), initial);
        // Idempotent.
        assert!(ggc.expire_leases(SimTime::from_secs_f64(61.0)).is_empty());
    }

    #[test]
    fn seller_conflict_rejects_whole_registration() {
        let mut ggc = ggc_with_dumbbell(1);
        let before = ggc.topology.counters_snapshot();
        let mut doc = dumbbell_doc(1, 20_000_000);
        doc.links[0].seller = "rival".into();
        assert!(ggc.register_seller(&doc, &BTreeMap::new(), SimTime::ZERO).is_err());
        assert_eq!(ggc.topology.counters_snapshot(), before);
    }

    #[test]
    fn seller_fanout_reaches_both_sites() {
        let mut ggc = Ggc::new(TopologyGraph::new(), PipelineSettings::default());
        let reg = ggc
            .register_seller(&dumbbell_doc(2, 20_000_000), &BTreeMap::new(), SimTime::ZERO)
            .unwrap();
        assert_eq!(reg.offerings.len(), 2);
        assert_eq!(reg.sites, vec![SiteId::new("site-a"), SiteId::new("site-b")]);
    }
}

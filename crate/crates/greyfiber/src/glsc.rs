//! Local site control: apply and tear down circuit configurations, monitor
//! provisioned links at a tunable interval, and pick the next available
//! resource when a link fails.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::substrate::{provision_latency, LatencyProfile, SubstrateError};
use crate::topology::{
    AllocationId, CircuitAllocation, LeaseId, LinkId, SiteId, TopologyGraph,
};
use crate::units::{SimDuration, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum GlscError {
    #[error("link `{0}` is down")]
    LinkDown(LinkId),
    #[error("no free wavelength on link `{0}`")]
    WavelengthExhausted(LinkId),
    #[error("unknown circuit handle {0}")]
    UnknownHandle(u64),
    #[error("link `{0}` is not local to this site")]
    NotLocal(LinkId),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
}

/// Lease window as pushed to sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaseWindow {
    pub start: SimTime,
    pub expiry: SimTime,
}

/// Per-site slice of a lease's configuration: which local links carry which
/// wavelengths for which window. Configurations are generated before the
/// counters commit, so they reference the lease, not the allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site: SiteId,
    pub lease: LeaseId,
    pub request_id: String,
    pub links: BTreeMap<LinkId, Vec<u32>>,
    pub window: LeaseWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub link: LinkId,
    pub ts: SimTime,
    pub rtt_s: f64,
    pub loss: f64,
    pub utilization: f64,
    pub stability: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorPolicy {
    pub interval: SimDuration,
    pub probe_rtt_s: f64,
}

impl Default for MonitorPolicy {
    fn default() -> Self {
        MonitorPolicy { interval: SimDuration::from_millis(1000), probe_rtt_s: 0.001 }
    }
}

impl MonitorPolicy {
    pub fn validate(&self) -> Result<(), GlscError> {
        if self.interval.is_zero() {
            return Err(GlscError::Substrate(SubstrateError::BadParams(
                "monitor interval must be positive".into(),
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircuitHandle(pub u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub site: SiteId,
    pub link: LinkId,
    pub detected_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorOutput {
    Status(StatusReport),
    Failure(FailureEvent),
}

/// What the site decided to do about a failed link.
#[derive(Debug, Clone, PartialEq)]
pub enum BackupAction {
    /// Move the allocation's circuits onto a spare strand of the same
    /// conduit; the circuits come up after the substrate's provisioning time.
    ProvisionLocal {
        allocation: AllocationId,
        lease: LeaseId,
        failed_link: LinkId,
        backup_link: LinkId,
        ready_at: SimTime,
    },
    /// No local resource: hand the failure to global control.
    Escalate { allocation: AllocationId, lease: LeaseId, failed_link: LinkId },
}

#[derive(Debug, Clone)]
struct LiveCircuitEntry {
    lease: LeaseId,
    links: BTreeSet<LinkId>,
}

/// One site's local controller state.
#[derive(Debug, Clone)]
pub struct Glsc {
    site: SiteId,
    policy: MonitorPolicy,
    circuits: BTreeMap<CircuitHandle, LiveCircuitEntry>,
    stability: BTreeMap<LinkId, u64>,
    reported_down: BTreeSet<LinkId>,
    next_handle: u64,
}

impl Glsc {
    pub fn new(site: SiteId, policy: MonitorPolicy) -> Self {
        Glsc {
            site,
            policy,
            circuits: BTreeMap::new(),
            stability: BTreeMap::new(),
            reported_down: BTreeSet::new(),
            next_handle: 0,
        }
    }

    pub fn site(&self) -> &SiteId {
        &self.site
    }

    pub fn policy(&self) -> MonitorPolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: MonitorPolicy) {
        self.policy = policy;
    }

    /// Is a link attached to this site (either end of its conduit)?
    pub fn is_local(&self, link: &LinkId, graph: &TopologyGraph) -> bool {
        let Some(link) = graph.link(link) else { return false };
        let Some(conduit) = graph.conduit(&link.conduit) else { return false };
        [&conduit.endpoints.0, &conduit.endpoints.1]
            .iter()
            .any(|n| graph.site_of(n) == Some(&self.site))
    }

    /// Failure handling is deduplicated across the two sites that see a
    /// conduit: the site of its first endpoint owns it.
    pub fn owns(&self, link: &LinkId, graph: &TopologyGraph) -> bool {
        graph
            .link(link)
            .and_then(|l| graph.conduit(&l.conduit))
            .and_then(|c| graph.site_of(&c.endpoints.0))
            == Some(&self.site)
    }

    /// Accept a configuration. Circuits go live after the substrate's
    /// provisioning latency, which is returned for the acknowledgement.
    pub fn apply_configuration(
        &mut self,
        config: &SiteConfig,
        graph: &TopologyGraph,
        profile: LatencyProfile,
    ) -> Result<(CircuitHandle, SimDuration), GlscError> {
        for (link_id, wavelengths) in &config.links {
            if !self.is_local(link_id, graph) {
                return Err(GlscError::NotLocal(link_id.clone()));
            }
            let link = graph.link(link_id).ok_or_else(|| GlscError::NotLocal(link_id.clone()))?;
            if !link.is_up() {
                return Err(GlscError::LinkDown(link_id.clone()));
            }
            if wavelengths.iter().any(|w| *w >= link.wavelength_capacity) {
                return Err(GlscError::WavelengthExhausted(link_id.clone()));
            }
        }
        let latency = provision_latency(profile, config.links.len().max(1) as u32)?;
        let handle = CircuitHandle(self.next_handle);
        self.next_handle += 1;
        self.circuits.insert(
            handle,
            LiveCircuitEntry {
                lease: config.lease,
                links: config.links.keys().cloned().collect(),
            },
        );
        Ok((handle, latency))
    }

    /// Revoke a handle's circuits. Tearing down circuits that already failed
    /// or moved is ordinary cleanup, not an error; only a handle this site
    /// never issued (or already tore down) is rejected.
    pub fn teardown_circuit(&mut self, handle: CircuitHandle) -> Result<LeaseId, GlscError> {
        let entry =
            self.circuits.remove(&handle).ok_or(GlscError::UnknownHandle(handle.0))?;
        Ok(entry.lease)
    }

    pub fn handles_for_lease(&self, lease: LeaseId) -> Vec<CircuitHandle> {
        self.circuits
            .iter()
            .filter(|(_, e)| e.lease == lease)
            .map(|(h, _)| *h)
            .collect()
    }

    /// Track a backup that moved a lease's circuits between links so later
    /// monitoring and teardown follow the live strand.
    pub fn note_reroute(&mut self, lease: LeaseId, from: &LinkId, to: &LinkId) {
        for entry in self.circuits.values_mut() {
            if entry.lease == lease && entry.links.remove(from) {
                entry.links.insert(to.clone());
            }
        }
    }

    /// Links this site currently monitors: local links carrying at least one
    /// of its live circuits.
    pub fn monitored_links(&self, graph: &TopologyGraph) -> BTreeSet<LinkId> {
        let mut links = BTreeSet::new();
        for entry in self.circuits.values() {
            for link in &entry.links {
                if self.is_local(link, graph) {
                    links.insert(link.clone());
                }
            }
        }
        links
    }

    /// Probe every monitored link. Healthy links yield status reports and
    /// never mutate the graph; a link that went down yields one failure
    /// event per outage (owned links only, so exactly one site reacts).
    pub fn poll_monitor(&mut self, now: SimTime, graph: &TopologyGraph) -> Vec<MonitorOutput> {
        let mut out = Vec::new();
        for link_id in self.monitored_links(graph) {
            let link = graph.link(&link_id).expect("monitored links exist");
            if link.is_up() {
                self.reported_down.remove(&link_id);
                let stability = self.stability.entry(link_id.clone()).or_insert(0);
                *stability += 1;
                let utilization = if link.max_bandwidth_bps == 0 {
                    0.0
                } else {
                    (link.max_bandwidth_bps - link.available_bandwidth_bps) as f64
                        / link.max_bandwidth_bps as f64
                };
                out.push(MonitorOutput::Status(StatusReport {
                    link: link_id,
                    ts: now,
                    rtt_s: self.policy.probe_rtt_s,
                    loss: 0.0,
                    utilization,
                    stability: *stability,
                }));
            } else {
                self.stability.insert(link_id.clone(), 0);
                if self.owns(&link_id, graph) && self.reported_down.insert(link_id.clone()) {
                    out.push(MonitorOutput::Failure(FailureEvent {
                        site: self.site.clone(),
                        link: link_id,
                        detected_at: now,
                    }));
                }
            }
        }
        out
    }

    /// Decide recovery for a detected failure: the next available strand in
    /// the same conduit, else escalate to global control. One action per
    /// affected allocation.
    pub fn on_failure(
        &self,
        event: &FailureEvent,
        graph: &TopologyGraph,
        profile: LatencyProfile,
        now: SimTime,
    ) -> Vec<BackupAction> {
        let affected: Vec<&CircuitAllocation> = graph
            .allocations()
            .filter(|a| {
                a.circuits
                    .iter()
                    .filter_map(|c| graph.circuit(c))
                    .any(|c| c.link == event.link)
            })
            .collect();
        let mut actions = Vec::new();
        let mut claimed: BTreeMap<LinkId, u32> = BTreeMap::new();
        for alloc in affected {
            let moved: u32 = alloc
                .circuits
                .iter()
                .filter_map(|c| graph.circuit(c))
                .filter(|c| c.link == event.link)
                .count() as u32;
            let moved_bw: u64 = alloc
                .circuits
                .iter()
                .filter_map(|c| graph.circuit(c))
                .filter(|c| c.link == event.link)
                .map(|c| c.bandwidth_bps)
                .sum();
            let conduit = graph
                .link(&event.link)
                .map(|l| l.conduit.clone())
                .and_then(|c| graph.conduit(&c).cloned());
            let backup = conduit.as_ref().and_then(|c| {
                c.links
                    .iter()
                    .filter(|l| **l != event.link)
                    .filter_map(|l| graph.link(l))
                    .find(|l| {
                        let already = claimed.get(&l.id).copied().unwrap_or(0);
                        l.is_up()
                            && l.free_wavelengths() >= moved + already
                            && l.available_bandwidth_bps >= moved_bw
                    })
            });
            match backup {
                Some(link) => {
                    *claimed.entry(link.id.clone()).or_insert(0) += moved;
                    let latency =
                        provision_latency(profile, 1).expect("single-link batch is valid");
                    actions.push(BackupAction::ProvisionLocal {
                        allocation: alloc.id,
                        lease: alloc.lease,
                        failed_link: event.link.clone(),
                        backup_link: link.id.clone(),
                        ready_at: now + latency,
                    });
                }
                None => actions.push(BackupAction::Escalate {
                    allocation: alloc.id,
                    lease: alloc.lease,
                    failed_link: event.link.clone(),
                }),
            }
        }
        actions
    }
}

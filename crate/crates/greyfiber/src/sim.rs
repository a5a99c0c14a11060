//! Deterministic discrete-event driver for the whole stack.
//!
//! All state lives in ordered maps and every event carries a sequence
//! number, so a run is a pure function of its inputs: the same scenario and
//! seed replay to byte-identical logs. Events at one instant execute in a
//! fixed priority order; in particular a monitor probe at the failure
//! instant still sees the link up, so detection lands on the next tick.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::ggc::{AdmitResult, Disposition, Ggc, LeaseOutcome, ResourceRequest};
use crate::glsc::{BackupAction, Glsc, MonitorOutput, MonitorPolicy};
use crate::substrate::{
    fair_share_throughput, live_pair_capacity, ospf_recovery_time, FailureSchedule, Flow,
    FlowId, FlowModelParams, OspfTimers, RateTrace,
};
use crate::topology::{CircuitId, LeaseId, LinkId, LinkStatus, NodeId, Path, SiteId};
use crate::units::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackupMode {
    /// Monitor-driven local backups plus global reroute on escalation.
    #[default]
    Greyfiber,
    /// Pre-configured backup activated by OSPF adjacency timers.
    Ospf,
    /// Failures stay broken.
    None,
}

#[derive(Debug, Clone, PartialEq)]
enum Event {
    SubmitRequests(Vec<ResourceRequest>),
    ActivateScheduled { request_id: String },
    CircuitsLive { lease: LeaseId },
    ExpirySweep,
    MonitorTick,
    LinkFail { link: LinkId },
    LinkRepair { link: LinkId },
    BackupLive { lease: LeaseId, failed_link: LinkId, backup_link: LinkId },
    GlobalRerouteLive { lease: LeaseId, path: Path },
    OspfRestore { link: LinkId },
    FlowStart { flow: FlowId },
    FlowStop { flow: FlowId },
}

impl Event {
    /// Execution order at one instant. Capacity arrivals land first, then
    /// monitoring (which therefore observes the pre-failure world at the
    /// failure instant), then failures, teardown, admissions, and flows.
    fn priority(&self) -> u8 {
        match self {
            Event::CircuitsLive { .. }
            | Event::BackupLive { .. }
            | Event::GlobalRerouteLive { .. }
            | Event::OspfRestore { .. } => 0,
            Event::MonitorTick => 1,
            Event::LinkFail { .. } | Event::LinkRepair { .. } => 2,
            Event::ExpirySweep => 3,
            Event::SubmitRequests(_) | Event::ActivateScheduled { .. } => 4,
            Event::FlowStart { .. } | Event::FlowStop { .. } => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Scheduled {
    at: SimTime,
    priority: u8,
    seq: u64,
    event: Event,
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.priority, self.seq).cmp(&(other.at, other.priority, other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Side records the report builder reads after a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimTelemetry {
    pub failures: Vec<(SimTime, LinkId)>,
    pub backups: Vec<(SimTime, LinkId, LinkId)>,
    pub escalations: Vec<(SimTime, LeaseId, LinkId)>,
    pub outcomes: Vec<RequestDisposition>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestDisposition {
    pub request_id: String,
    pub client_name: String,
    pub decided_at: SimTime,
    pub outcome: LeaseOutcome,
}

pub struct Simulation {
    pub ggc: Ggc,
    pub trace: RateTrace,
    pub telemetry: SimTelemetry,
    sites: BTreeMap<SiteId, Glsc>,
    flows: BTreeMap<FlowId, Flow>,
    active_flows: BTreeSet<FlowId>,
    flow_params: FlowModelParams,
    backup_mode: BackupMode,
    ospf: OspfTimers,
    monitor_interval: SimDuration,
    severed: BTreeSet<CircuitId>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    clock: SimTime,
    seq: u64,
    horizon: SimTime,
    check_invariants: bool,
}

impl Simulation {
    pub fn new(
        ggc: Ggc,
        flow_params: FlowModelParams,
        ospf: OspfTimers,
        backup_mode: BackupMode,
        monitor_interval: SimDuration,
        horizon: SimTime,
    ) -> Self {
        let mut sim = Simulation {
            ggc,
            trace: RateTrace::default(),
            telemetry: SimTelemetry::default(),
            sites: BTreeMap::new(),
            flows: BTreeMap::new(),
            active_flows: BTreeSet::new(),
            flow_params,
            backup_mode,
            ospf,
            monitor_interval,
            severed: BTreeSet::new(),
            queue: BinaryHeap::new(),
            clock: SimTime::ZERO,
            seq: 0,
            horizon,
            check_invariants: false,
        };
        sim.create_sites();
        sim
    }

    fn create_sites(&mut self) {
        let policy = MonitorPolicy { interval: self.monitor_interval, ..MonitorPolicy::default() };
        let sites: BTreeSet<SiteId> =
            self.ggc.topology.nodes().map(|n| n.site.clone()).collect();
        for site in sites {
            self.sites.entry(site.clone()).or_insert_with(|| Glsc::new(site, policy));
        }
    }

    /// Verify full topology integrity after every event. Slow; meant for
    /// property workloads.
    pub fn set_invariant_checks(&mut self, on: bool) {
        self.check_invariants = on;
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn site(&self, id: &SiteId) -> Option<&Glsc> {
        self.sites.get(id)
    }

    fn schedule(&mut self, at: SimTime, event: Event) {
        if at > self.horizon {
            return;
        }
        let priority = event.priority();
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, priority, seq, event }));
    }

    pub fn push_requests(&mut self, at: SimTime, batch: Vec<ResourceRequest>) {
        self.schedule(at, Event::SubmitRequests(batch));
    }

    pub fn push_flow(&mut self, flow: Flow) {
        self.schedule(flow.start, Event::FlowStart { flow: flow.id.clone() });
        self.schedule(flow.stop, Event::FlowStop { flow: flow.id.clone() });
        self.flows.insert(flow.id.clone(), flow);
    }

    pub fn push_failures(&mut self, schedule: &FailureSchedule) {
        for spec in &schedule.0 {
            self.schedule(spec.fail_s, Event::LinkFail { link: spec.link.clone() });
            if let Some(repair) = spec.repair_s {
                self.schedule(repair, Event::LinkRepair { link: spec.link.clone() });
            }
        }
    }

    fn schedule_monitor_ticks(&mut self) {
        let step = self.monitor_interval.as_millis().max(1);
        let mut t = step;
        while t <= self.horizon.as_millis() {
            self.schedule(SimTime::from_millis(t), Event::MonitorTick);
            t += step;
        }
    }

    /// Drive the queue to the horizon.
    pub fn run(&mut self) -> Result<(), String> {
        self.schedule_monitor_ticks();
        while let Some(Reverse(next)) = self.queue.pop() {
            debug_assert!(next.at >= self.clock, "virtual time is monotone");
            self.clock = next.at;
            self.handle(next.event);
            if self.check_invariants {
                self.ggc.topology.verify()?;
            }
        }
        Ok(())
    }

    fn handle(&mut self, event: Event) {
        let now = self.clock;
        match event {
            Event::SubmitRequests(batch) => {
                let results = self.ggc.admit_requests(&batch, now);
                for result in results {
                    self.absorb_admit_result(result, now);
                }
            }
            Event::ActivateScheduled { request_id } => {
                if let Ok(result) = self.ggc.activate_scheduled(&request_id, now) {
                    self.absorb_admit_result(result, now);
                }
            }
            Event::CircuitsLive { lease } => {
                let _ = self.ggc.activate_lease(lease);
                self.recompute_rates(now);
            }
            Event::ExpirySweep => {
                let actions = self.ggc.expire_leases(now);
                let mut changed = false;
                for action in actions {
                    changed = true;
                    for site_id in &action.sites {
                        if let Some(site) = self.sites.get_mut(site_id) {
                            for handle in site.handles_for_lease(action.lease) {
                                let _ = site.teardown_circuit(handle);
                            }
                        }
                    }
                }
                if changed {
                    self.recompute_rates(now);
                }
            }
            Event::MonitorTick => {
                let mut detected = Vec::new();
                for (_, site) in self.sites.iter_mut() {
                    for output in site.poll_monitor(now, &self.ggc.topology) {
                        if let MonitorOutput::Failure(event) = output {
                            detected.push(event);
                        }
                    }
                }
                if self.backup_mode == BackupMode::Greyfiber {
                    for event in detected {
                        let site = self.sites.get(&event.site).expect("site exists");
                        let actions = site.on_failure(
                            &event,
                            &self.ggc.topology,
                            self.ggc.settings().profile,
                            now,
                        );
                        for action in actions {
                            self.apply_backup_action(action, now);
                        }
                    }
                }
            }
            Event::LinkFail { link } => {
                let newly_severed: Vec<CircuitId> = self
                    .ggc
                    .topology
                    .circuits()
                    .filter(|c| c.link == link)
                    .map(|c| c.id)
                    .collect();
                self.severed.extend(newly_severed);
                let _ = self.ggc.topology.set_link_status(&link, LinkStatus::Down);
                self.telemetry.failures.push((now, link.clone()));
                if self.backup_mode == BackupMode::Ospf {
                    let at = ospf_recovery_time(&self.ospf, now);
                    self.schedule(at, Event::OspfRestore { link });
                }
                self.recompute_rates(now);
            }
            Event::LinkRepair { link } => {
                let _ = self.ggc.topology.set_link_status(&link, LinkStatus::Up);
                // Severed circuits stay severed: a repaired link carries no
                // traffic until re-provisioned.
                self.recompute_rates(now);
            }
            Event::BackupLive { lease, failed_link, backup_link } => {
                self.enact_reroute(lease, &failed_link, &backup_link, now, true);
            }
            Event::GlobalRerouteLive { lease, path } => {
                match self.ggc.attach_allocation(lease, &path) {
                    Ok(true) => {
                        self.note_config_sites(lease, now);
                        self.recompute_rates(now);
                    }
                    _ => {}
                }
            }
            Event::OspfRestore { link } => {
                // The routing layer switches onto the pre-lit spare: same
                // conduit, no provisioning latency.
                let affected: Vec<LeaseId> = self
                    .ggc
                    .topology
                    .allocations()
                    .filter(|a| {
                        a.circuits
                            .iter()
                            .filter_map(|c| self.ggc.topology.circuit(c))
                            .any(|c| c.link == link)
                    })
                    .map(|a| a.lease)
                    .collect();
                for lease in affected {
                    if let Some(spare) = self.find_spare(&link, lease) {
                        self.enact_reroute(lease, &link, &spare, now, false);
                    }
                }
            }
            Event::FlowStart { flow } => {
                self.active_flows.insert(flow.clone());
                // Baseline sample so every flow appears in the trace even if
                // it starts with no capacity.
                self.trace.record(now, &flow, 0.0);
                self.recompute_rates(now);
            }
            Event::FlowStop { flow } => {
                self.active_flows.remove(&flow);
                self.trace.record(now, &flow, 0.0);
                self.recompute_rates(now);
            }
        }
    }

    fn absorb_admit_result(&mut self, result: AdmitResult, now: SimTime) {
        match result.disposition {
            Disposition::Scheduled { at } => {
                self.schedule(at, Event::ActivateScheduled { request_id: result.request_id });
            }
            Disposition::Resolved { outcome, grant } => {
                if let Some(grant) = grant {
                    for config in &grant.configs {
                        if let Some(site) = self.sites.get_mut(&config.site) {
                            let _ = site.apply_configuration(
                                config,
                                &self.ggc.topology,
                                self.ggc.settings().profile,
                            );
                        }
                    }
                    self.schedule(grant.circuits_live_at, Event::CircuitsLive { lease: grant.lease });
                    self.schedule(grant.expiry, Event::ExpirySweep);
                }
                self.telemetry.outcomes.push(RequestDisposition {
                    request_id: result.request_id,
                    client_name: result.client_name,
                    decided_at: now,
                    outcome,
                });
            }
        }
    }

    fn apply_backup_action(&mut self, action: BackupAction, now: SimTime) {
        match action {
            BackupAction::ProvisionLocal { lease, failed_link, backup_link, ready_at, .. } => {
                self.schedule(ready_at, Event::BackupLive { lease, failed_link, backup_link });
            }
            BackupAction::Escalate { lease, failed_link, .. } => {
                self.telemetry.escalations.push((now, lease, failed_link));
                if let Some(path) = self.ggc.plan_global_reroute(lease) {
                    let _ = self.ggc.detach_allocation(lease);
                    let latency = crate::substrate::provision_latency(
                        self.ggc.settings().profile,
                        path.segments.len() as u32,
                    )
                    .expect("non-empty path");
                    self.schedule(now + latency, Event::GlobalRerouteLive { lease, path });
                }
            }
        }
    }

    /// Move a lease's circuits off a failed link. Retries the failure logic
    /// if the chosen backup got consumed in the provisioning window.
    fn enact_reroute(
        &mut self,
        lease: LeaseId,
        from: &LinkId,
        to: &LinkId,
        now: SimTime,
        retry: bool,
    ) {
        let Some(allocation) =
            self.ggc.leases().find(|l| l.id == lease).and_then(|l| l.allocation)
        else {
            return;
        };
        match self.ggc.topology.reroute_link(allocation, from, to) {
            Ok(_) => {
                for site in self.sites.values_mut() {
                    site.note_reroute(lease, from, to);
                }
                self.telemetry.backups.push((now, from.clone(), to.clone()));
                self.recompute_rates(now);
            }
            Err(_) if retry => {
                if let Some(spare) = self.find_spare(from, lease) {
                    self.enact_reroute(lease, from, &spare, now, false);
                } else {
                    self.telemetry.escalations.push((now, lease, from.clone()));
                }
            }
            Err(_) => {}
        }
    }

    fn find_spare(&self, failed: &LinkId, lease: LeaseId) -> Option<LinkId> {
        let graph = &self.ggc.topology;
        let allocation = self.ggc.leases().find(|l| l.id == lease)?.allocation?;
        let alloc = graph.allocation(&allocation)?;
        let moved: Vec<_> = alloc
            .circuits
            .iter()
            .filter_map(|c| graph.circuit(c))
            .filter(|c| &c.link == failed)
            .collect();
        if moved.is_empty() {
            return None;
        }
        let moved_bw: u64 = moved.iter().map(|c| c.bandwidth_bps).sum();
        let conduit = graph.conduit(&graph.link(failed)?.conduit)?;
        conduit
            .links
            .iter()
            .filter(|l| *l != failed)
            .filter_map(|l| graph.link(l))
            .find(|l| {
                l.is_up()
                    && l.free_wavelengths() >= moved.len() as u32
                    && l.available_bandwidth_bps >= moved_bw
            })
            .map(|l| l.id.clone())
    }

    /// When a global reroute lands, refresh site circuit tables with the new
    /// path's configuration footprint.
    fn note_config_sites(&mut self, lease: LeaseId, _now: SimTime) {
        let Some(l) = self.ggc.leases().find(|l| l.id == lease).cloned() else { return };
        let Ok(configs) = self.ggc.generate_configuration(&l.path.clone(), &l) else { return };
        for config in &configs {
            if let Some(site) = self.sites.get_mut(&config.site) {
                let _ = site.apply_configuration(
                    config,
                    &self.ggc.topology,
                    self.ggc.settings().profile,
                );
            }
        }
    }

    /// Recompute max-min fair rates per endpoint pair and record changes.
    fn recompute_rates(&mut self, now: SimTime) {
        let mut pairs: BTreeMap<(NodeId, NodeId), Vec<FlowId>> = BTreeMap::new();
        for id in &self.active_flows {
            let flow = &self.flows[id];
            let key = if flow.src <= flow.dst {
                (flow.src.clone(), flow.dst.clone())
            } else {
                (flow.dst.clone(), flow.src.clone())
            };
            pairs.entry(key).or_default().push(id.clone());
        }
        let in_service: BTreeSet<crate::topology::AllocationId> = self
            .ggc
            .leases()
            .filter(|l| l.state == crate::ggc::LeaseState::Active)
            .filter_map(|l| l.allocation)
            .collect();
        for ((a, b), members) in pairs {
            let capacity =
                live_pair_capacity(&self.ggc.topology, &a, &b, &self.severed, &in_service);
            let demands: Vec<Option<f64>> =
                members.iter().map(|f| self.flows[f].demand_bps).collect();
            let rates = fair_share_throughput(&demands, &[capacity], &self.flow_params);
            for (flow, rate) in members.iter().zip(rates) {
                if (self.trace.rate_at(flow, now) - rate).abs() > f64::EPSILON {
                    self.trace.record(now, flow, rate);
                }
            }
        }
    }
}

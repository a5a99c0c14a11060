//! Simulated physical network: provisioning-latency profiles, a fluid
//! max-min fair throughput model over aggregated parallel links, failure
//! schedules, and the OSPF-timer failover baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{AllocationId, CircuitId, Composition, LinkId, NodeId, TopologyGraph};
use crate::units::{SimDuration, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum SubstrateError {
    #[error("link count must be >= 1")]
    InvalidLinkCount,
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("unknown link `{0}`")]
    UnknownLink(LinkId),
}

/// Provisioning time as a function of batch size, calibrated per substrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LatencyProfile {
    /// Circuits come up instantly.
    #[default]
    Ideal,
    /// 240 ms per batch, in line with published optical switching times.
    Optical,
    /// Piecewise-linear interpolation of measured testbed provision times,
    /// clamped beyond the largest measured batch.
    Geni,
}

/// Measured (batch size, seconds) provisioning points for the `geni` profile.
pub const GENI_PROVISION_TABLE: [(u32, f64); 10] = [
    (1, 19.0),
    (2, 22.0),
    (3, 21.0),
    (4, 25.0),
    (5, 24.0),
    (10, 33.0),
    (20, 35.0),
    (30, 37.0),
    (40, 47.0),
    (50, 54.0),
];

/// Time for the substrate to bring a batch of `n` links into service.
pub fn provision_latency(profile: LatencyProfile, n: u32) -> Result<SimDuration, SubstrateError> {
    if n == 0 {
        return Err(SubstrateError::InvalidLinkCount);
    }
    let seconds = match profile {
        LatencyProfile::Ideal => 0.0,
        LatencyProfile::Optical => 0.240,
        LatencyProfile::Geni => {
            let table = &GENI_PROVISION_TABLE;
            if n <= table[0].0 {
                table[0].1
            } else if n >= table[table.len() - 1].0 {
                table[table.len() - 1].1
            } else {
                let upper = table.iter().position(|(k, _)| *k >= n).expect("n within table");
                let (x0, y0) = table[upper - 1];
                let (x1, y1) = table[upper];
                if x1 == n {
                    y1
                } else {
                    y0 + (y1 - y0) * (n - x0) as f64 / (x1 - x0) as f64
                }
            }
        }
    };
    Ok(SimDuration::from_secs_f64(seconds))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub String);

impl FlowId {
    pub fn new(s: impl Into<String>) -> Self {
        FlowId(s.into())
    }
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One traffic flow between endpoints. `demand_bps` of `None` means greedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    pub start: SimTime,
    pub stop: SimTime,
    #[serde(default)]
    pub demand_bps: Option<f64>,
}

impl Flow {
    pub fn validate(&self) -> Result<(), SubstrateError> {
        if self.start >= self.stop {
            return Err(SubstrateError::BadParams(format!(
                "flow `{}` must start before it stops",
                self.id
            )));
        }
        if let Some(d) = self.demand_bps {
            if !(d.is_finite() && d > 0.0) {
                return Err(SubstrateError::BadParams(format!(
                    "flow `{}` demand must be positive",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowModelParams {
    /// Fraction of raw aggregate capacity the flows can actually extract.
    pub efficiency: f64,
    /// Reporting warmup: steady-state figures are taken after this long.
    pub warmup_s: f64,
}

impl Default for FlowModelParams {
    fn default() -> Self {
        FlowModelParams { efficiency: 1.0, warmup_s: 30.0 }
    }
}

impl FlowModelParams {
    pub fn validate(&self) -> Result<(), SubstrateError> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(SubstrateError::BadParams("efficiency must be in (0, 1]".into()));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s.is_finite()) {
            return Err(SubstrateError::BadParams("warmup must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspfTimers {
    pub hello_s: f64,
    pub dead_s: f64,
    pub wait_s: f64,
}

impl Default for OspfTimers {
    fn default() -> Self {
        OspfTimers { hello_s: 10.0, dead_s: 40.0, wait_s: 4.0 }
    }
}

impl OspfTimers {
    pub fn validate(&self) -> Result<(), SubstrateError> {
        if self.hello_s < 0.0 || self.dead_s < 0.0 || self.wait_s < 0.0 {
            return Err(SubstrateError::BadParams("timers must be non-negative".into()));
        }
        if self.wait_s > self.dead_s {
            return Err(SubstrateError::BadParams("wait must not exceed dead".into()));
        }
        if self.hello_s > self.dead_s {
            return Err(SubstrateError::BadParams("hello must not exceed dead".into()));
        }
        Ok(())
    }
}

/// When an OSPF adjacency restarts traffic onto a pre-configured backup:
/// `dead - wait` seconds after the failure.
pub fn ospf_recovery_time(timers: &OspfTimers, t_fail: SimTime) -> SimTime {
    t_fail + SimDuration::from_secs_f64(timers.dead_s - timers.wait_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEventSpec {
    pub link: LinkId,
    pub fail_s: SimTime,
    #[serde(default)]
    pub repair_s: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FailureSchedule(pub Vec<FailureEventSpec>);

impl FailureSchedule {
    pub fn validate(&self, graph: &TopologyGraph) -> Result<(), SubstrateError> {
        for ev in &self.0 {
            if graph.link(&ev.link).is_none() {
                return Err(SubstrateError::UnknownLink(ev.link.clone()));
            }
            if let Some(repair) = ev.repair_s {
                if repair <= ev.fail_s {
                    return Err(SubstrateError::BadParams(format!(
                        "link `{}` must fail before it is repaired",
                        ev.link
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Max-min fair share of one aggregated bottleneck.
///
/// Water-filling: flows with demands below the fair level are capped at
/// their demand, the freed capacity raises the level for the rest. Greedy
/// flows (`None`) split whatever remains equally.
pub fn fair_share_throughput(
    demands: &[Option<f64>],
    link_capacities_bps: &[f64],
    params: &FlowModelParams,
) -> Vec<f64> {
    let capacity = params.efficiency * link_capacities_bps.iter().sum::<f64>();
    let mut rates = vec![0.0; demands.len()];
    if demands.is_empty() || capacity <= 0.0 {
        return rates;
    }
    let mut active: Vec<usize> = (0..demands.len()).collect();
    let mut remaining = capacity;
    while !active.is_empty() {
        let share = remaining / active.len() as f64;
        let capped: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| demands[i].is_some_and(|d| d <= share))
            .collect();
        if capped.is_empty() {
            for &i in &active {
                rates[i] = share;
            }
            break;
        }
        for &i in &capped {
            let d = demands[i].expect("capped flows have demands");
            rates[i] = d;
            remaining -= d;
        }
        active.retain(|i| !capped.contains(i));
    }
    rates
}

/// Usable capacity between two endpoints: the sum over in-service
/// allocations (leases whose circuits finished provisioning) of what their
/// circuits still deliver. Parallel strands contribute per circuit on an up
/// link; a sequential chain delivers its full capacity or, with any segment
/// broken, nothing. Traffic rides circuits: a circuit severed by a failure
/// stays dead even after the link is repaired, and a repaired link without
/// circuits contributes nothing.
pub fn live_pair_capacity(
    graph: &TopologyGraph,
    a: &NodeId,
    b: &NodeId,
    severed: &BTreeSet<CircuitId>,
    in_service: &BTreeSet<AllocationId>,
) -> f64 {
    let mut total = 0.0;
    for alloc in graph.allocations() {
        if !in_service.contains(&alloc.id) {
            continue;
        }
        let (pa, pb) = &alloc.path.endpoints;
        let matches = (pa == a && pb == b) || (pa == b && pb == a);
        if !matches {
            continue;
        }
        match alloc.path.composition {
            Composition::Parallel => {
                for cid in &alloc.circuits {
                    if severed.contains(cid) {
                        continue;
                    }
                    if let Some(c) = graph.circuit(cid) {
                        if graph.link(&c.link).is_some_and(|l| l.is_up()) {
                            total += c.bandwidth_bps as f64;
                        }
                    }
                }
            }
            Composition::Sequential => {
                let intact = alloc
                    .path
                    .segments
                    .iter()
                    .all(|l| graph.link(l).is_some_and(|l| l.is_up()))
                    && alloc.circuits.iter().all(|c| !severed.contains(c));
                if intact {
                    total += alloc.capacity_bps as f64;
                }
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Rate traces
// ---------------------------------------------------------------------------

/// One point of a piecewise-constant per-flow rate trace: the flow runs at
/// `rate_bps` from `t` until its next sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub t: SimTime,
    pub flow: FlowId,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RateTrace {
    pub samples: Vec<RateSample>,
}

impl RateTrace {
    pub fn record(&mut self, t: SimTime, flow: &FlowId, rate_bps: f64) {
        // Collapse repeated samples at the same instant (later events at one
        // timestamp override earlier ones).
        if let Some(last) = self
            .samples
            .iter_mut()
            .rev()
            .take_while(|s| s.t == t)
            .find(|s| &s.flow == flow)
        {
            last.rate_bps = rate_bps;
            return;
        }
        self.samples.push(RateSample { t, flow: flow.clone(), rate_bps });
    }

    pub fn flows(&self) -> Vec<FlowId> {
        let mut ids: Vec<FlowId> = self.samples.iter().map(|s| s.flow.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// The flow's rate at time `t` (the most recent sample at or before it).
    pub fn rate_at(&self, flow: &FlowId, t: SimTime) -> f64 {
        self.samples
            .iter()
            .filter(|s| &s.flow == flow && s.t <= t)
            .next_back()
            .map(|s| s.rate_bps)
            .unwrap_or(0.0)
    }

    /// Piecewise segments of one flow clipped to `[from, to]`.
    fn segments(&self, flow: &FlowId, from: SimTime, to: SimTime) -> Vec<(SimTime, SimTime, f64)> {
        let mut out = Vec::new();
        let mut current = (from, self.rate_at(flow, from));
        for s in self.samples.iter().filter(|s| &s.flow == flow && s.t > from && s.t < to) {
            out.push((current.0, s.t, current.1));
            current = (s.t, s.rate_bps);
        }
        out.push((current.0, to, current.1));
        out
    }
}

/// Time integral of the aggregate flow rate over an interval, in bits.
pub fn bytes_transferred(trace: &RateTrace, from: SimTime, to: SimTime) -> f64 {
    if to <= from {
        return 0.0;
    }
    let mut bits = 0.0;
    for flow in trace.flows() {
        for (t0, t1, rate) in trace.segments(&flow, from, to) {
            bits += rate * (t1 - t0).as_secs_f64();
        }
    }
    bits
}

/// Integral for a single flow over an interval, in bits.
pub fn flow_bytes_transferred(trace: &RateTrace, flow: &FlowId, from: SimTime, to: SimTime) -> f64 {
    if to <= from {
        return 0.0;
    }
    trace
        .segments(flow, from, to)
        .iter()
        .map(|(t0, t1, rate)| rate * (*t1 - *t0).as_secs_f64())
        .sum()
}

/// First instant in `(after, ..]` at which the aggregate rate becomes
/// positive again; recovery detection for outage reports.
pub fn first_positive_rate_after(trace: &RateTrace, after: SimTime) -> Option<SimTime> {
    let mut times: Vec<SimTime> = trace.samples.iter().map(|s| s.t).filter(|t| *t > after).collect();
    times.sort();
    times.dedup();
    times.into_iter().find(|&t| {
        trace.flows().iter().map(|f| trace.rate_at(f, t)).sum::<f64>() > 0.0
    })
}

/// Per-flow aggregates convenient for reports.
pub fn per_flow_totals(trace: &RateTrace, from: SimTime, to: SimTime) -> BTreeMap<FlowId, f64> {
    trace
        .flows()
        .into_iter()
        .map(|f| {
            let bits = flow_bytes_transferred(trace, &f, from, to);
            (f, bits)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    #[test]
    fn geni_profile_reproduces_measured_points() {
        for (n, expect) in GENI_PROVISION_TABLE {
            assert_eq!(
                provision_latency(LatencyProfile::Geni, n).unwrap(),
                SimDuration::from_secs_f64(expect),
                "batch of {n}"
            );
        }
    }

    #[test]
    fn geni_profile_interpolates_and_clamps() {
        // Between (5, 24) and (10, 33).
        assert_eq!(
            provision_latency(LatencyProfile::Geni, 7).unwrap(),
            SimDuration::from_secs_f64(24.0 + 2.0 / 5.0 * 9.0)
        );
        assert_eq!(
            provision_latency(LatencyProfile::Geni, 200).unwrap(),
            SimDuration::from_secs_f64(54.0)
        );
    }

    #[test]
    fn ideal_and_optical_profiles() {
        assert!(provision_latency(LatencyProfile::Ideal, 1).unwrap().is_zero());
        assert_eq!(
            provision_latency(LatencyProfile::Optical, 12).unwrap(),
            SimDuration::from_millis(240)
        );
        assert_eq!(
            provision_latency(LatencyProfile::Ideal, 0),
            Err(SubstrateError::InvalidLinkCount)
        );
    }

    #[test]
    fn five_greedy_flows_share_the_aggregate() {
        let params = FlowModelParams { efficiency: 1.0, warmup_s: 30.0 };
        let rates = fair_share_throughput(&[None; 5], &[20.0e6], &params);
        assert!(rates.iter().all(|&r| (r - 4.0e6).abs() < 1e-6));

        let rates = fair_share_throughput(&[None; 5], &[20.0e6; 5], &params);
        assert!(rates.iter().all(|&r| (r - 20.0e6).abs() < 1e-6));

        let cloudlab = FlowModelParams { efficiency: 0.955, warmup_s: 30.0 };
        let rates = fair_share_throughput(&[None; 5], &[10.0e9; 5], &cloudlab);
        assert!(rates.iter().all(|&r| (r - 9.55e9).abs() < 1.0));
    }

    #[test]
    fn single_flow_saturates_the_link() {
        let params = FlowModelParams { efficiency: 0.9, warmup_s: 0.0 };
        let rates = fair_share_throughput(&[None], &[10.0e6], &params);
        assert!((rates[0] - 9.0e6).abs() < 1e-6);
    }

    #[test]
    fn demand_caps_water_fill() {
        let params = FlowModelParams { efficiency: 1.0, warmup_s: 0.0 };
        let rates = fair_share_throughput(&[Some(1.0e6), None, None], &[10.0e6], &params);
        assert!((rates[0] - 1.0e6).abs() < 1e-6);
        assert!((rates[1] - 4.5e6).abs() < 1e-6);
        assert!((rates[2] - 4.5e6).abs() < 1e-6);
        assert!(rates.iter().sum::<f64>() <= 10.0e6 + 1e-6);

        // Under-subscribed: every flow gets its demand.
        let rates = fair_share_throughput(&[Some(1.0e6), Some(2.0e6)], &[10.0e6], &params);
        assert_eq!(rates, vec![1.0e6, 2.0e6]);
    }

    #[test]
    fn no_live_links_means_zero_rates() {
        let params = FlowModelParams::default();
        assert_eq!(fair_share_throughput(&[None, None], &[], &params), vec![0.0, 0.0]);
    }

    #[test]
    fn ospf_recovery_is_dead_minus_wait() {
        let timers = OspfTimers { hello_s: 10.0, dead_s: 40.0, wait_s: 4.0 };
        assert_eq!(ospf_recovery_time(&timers, secs(60.0)), secs(96.0));

        let no_lag = OspfTimers { hello_s: 10.0, dead_s: 40.0, wait_s: 40.0 };
        assert_eq!(ospf_recovery_time(&no_lag, secs(60.0)), secs(60.0));

        let from_zero = OspfTimers { hello_s: 10.0, dead_s: 40.0, wait_s: 0.0 };
        assert_eq!(ospf_recovery_time(&from_zero, SimTime::ZERO), secs(40.0));
    }

    #[test]
    fn ospf_timer_invariants() {
        assert!(OspfTimers { hello_s: 10.0, dead_s: 40.0, wait_s: 41.0 }.validate().is_err());
        assert!(OspfTimers { hello_s: 50.0, dead_s: 40.0, wait_s: 4.0 }.validate().is_err());
        assert!(OspfTimers::default().validate().is_ok());
    }

    #[test]
    fn bytes_integrate_piecewise_rates() {
        let mut trace = RateTrace::default();
        let f = FlowId::new("f1");
        trace.record(SimTime::ZERO, &f, 20.78e6);
        let total = bytes_transferred(&trace, SimTime::ZERO, secs(90.0));
        assert!((total - 1.8702e9).abs() / 1.8702e9 < 1e-9);
        // Within 1% of the measured 1.88 Gb figure's integral consistency.
        assert!((total - 1.87e9).abs() / 1.87e9 < 0.01);

        // Rate to 60 s, then zero: the no-backup outage shape.
        trace.record(secs(60.0), &f, 0.0);
        let truncated = bytes_transferred(&trace, SimTime::ZERO, secs(90.0));
        assert!((truncated - 1.2468e9).abs() < 1.0);
        assert!((truncated - 1.23e9).abs() / 1.23e9 < 0.05);

        let empty = RateTrace::default();
        assert_eq!(bytes_transferred(&empty, SimTime::ZERO, secs(90.0)), 0.0);
    }

    #[test]
    fn recovery_detection_finds_first_positive_rate() {
        let mut trace = RateTrace::default();
        let f = FlowId::new("f1");
        trace.record(SimTime::ZERO, &f, 10.0e6);
        trace.record(secs(60.0), &f, 0.0);
        trace.record(secs(96.0), &f, 10.0e6);
        assert_eq!(first_positive_rate_after(&trace, secs(60.0)), Some(secs(96.0)));
        assert_eq!(first_positive_rate_after(&trace, secs(96.0)), None);
    }
}

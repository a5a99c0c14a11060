//! Real-clock service mode: the exchange, global control, and site
//! controllers as TCP servers speaking the length-prefixed protocol.
//!
//! Rounds are single-shot per request here; competing simultaneous buyers
//! are serialized by arrival. The deterministic simulator remains the
//! reference for experiments, service mode exercises the wire surfaces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::events::{EventLog, Stage, StageRecord};
use crate::exchange::{Exchange, ExchangeError, Mechanism};
use crate::ggc::{
    site_configs, ConnectivityInfo, Lease, LeaseOutcome, LeaseState, RejectionCause,
    ResourceRequest,
};
use crate::glsc::{CircuitHandle, SiteConfig};
use crate::protocol::{read_frame, write_frame, Message, MessageKind};
use crate::substrate::{provision_latency, LatencyProfile};
use crate::topology::{
    AdmissibilityResult, AllocationId, LeaseId, LinkId, SiteId, TopologyDocument, TopologyError,
    TopologyGraph,
};
use crate::units::{Money, SimTime};

/// One framed connection usable from several threads: replies route back to
/// their requesters, everything else lands on the inbound queue.
pub struct WirePeer {
    writer: Mutex<TcpStream>,
    pending: Arc<Mutex<HashMap<u64, SyncSender<Message>>>>,
    next_id: AtomicU64,
    epoch: Instant,
}

impl WirePeer {
    /// Wrap a stream and spawn its reader. Unsolicited messages arrive on
    /// the returned receiver; the receiver closing ends the connection.
    pub fn spawn(stream: TcpStream, epoch: Instant) -> io::Result<(Arc<WirePeer>, Receiver<Message>)> {
        let reader = stream.try_clone()?;
        let peer = Arc::new(WirePeer {
            writer: Mutex::new(stream),
            pending: Arc::new(Mutex::new(HashMap::new())),
            next_id: AtomicU64::new(0),
            epoch,
        });
        let (tx, rx) = sync_channel(64);
        let pending = Arc::clone(&peer.pending);
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                match read_frame(&mut reader) {
                    Ok(Some(msg)) => {
                        let wants_reply = msg.reply_to.and_then(|id| pending.lock().unwrap().remove(&id));
                        match wants_reply {
                            Some(waiter) => {
                                let _ = waiter.send(msg);
                            }
                            None => {
                                if tx.send(msg).is_err() {
                                    break;
                                }
                            }
                        }
                    }
                    Ok(None) | Err(_) => break,
                }
            }
        });
        Ok((peer, rx))
    }

    pub fn connect(addr: &str, epoch: Instant) -> io::Result<(Arc<WirePeer>, Receiver<Message>)> {
        WirePeer::spawn(TcpStream::connect(addr)?, epoch)
    }

    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn send(&self, kind: MessageKind) -> io::Result<u64> {
        let msg_id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let msg = Message { msg_id, ts: self.now(), reply_to: None, kind };
        write_frame(&mut *self.writer.lock().unwrap(), &msg)?;
        Ok(msg_id)
    }

    pub fn reply(&self, reply_to: u64, kind: MessageKind) -> io::Result<()> {
        let msg_id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let msg = Message { msg_id, ts: self.now(), reply_to: Some(reply_to), kind };
        write_frame(&mut *self.writer.lock().unwrap(), &msg)
    }

    /// Send and wait for the correlated reply.
    pub fn request(&self, kind: MessageKind, timeout: Duration) -> io::Result<Message> {
        let (tx, rx) = sync_channel(1);
        let msg_id = self.next_id.fetch_add(1, Ordering::SeqCst);
        self.pending.lock().unwrap().insert(msg_id, tx);
        let msg = Message { msg_id, ts: self.now(), reply_to: None, kind };
        write_frame(&mut *self.writer.lock().unwrap(), &msg)?;
        rx.recv_timeout(timeout).map_err(|_| {
            self.pending.lock().unwrap().remove(&msg_id);
            io::Error::new(io::ErrorKind::TimedOut, "no reply")
        })
    }
}

// ---------------------------------------------------------------------------
// Exchange service
// ---------------------------------------------------------------------------

/// Serve the fiber exchange until the listener errors or `stop` is set.
pub fn serve_exchange(listener: TcpListener, stop: Arc<AtomicBool>) -> io::Result<()> {
    let state = Arc::new(Mutex::new(Exchange::new()));
    let epoch = Instant::now();
    listener.set_nonblocking(true)?;
    loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let state = Arc::clone(&state);
                thread::spawn(move || exchange_connection(stream, state, epoch));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e),
        }
    }
}

fn exchange_connection(stream: TcpStream, state: Arc<Mutex<Exchange>>, epoch: Instant) {
    let Ok((peer, inbound)) = WirePeer::spawn(stream, epoch) else { return };
    for msg in inbound {
        let reply = exchange_handle(&state, &msg, epoch);
        let _ = peer.reply(msg.msg_id, reply);
    }
}

fn exchange_handle(state: &Mutex<Exchange>, msg: &Message, epoch: Instant) -> MessageKind {
    let now = SimTime::from_secs_f64(epoch.elapsed().as_secs_f64());
    let mut exchange = state.lock().unwrap();
    match &msg.kind {
        MessageKind::RegisterSeller { document, reserves, .. } => {
            for link in &document.links {
                let id = LinkId::new(&link.id);
                exchange.register_link(id.clone());
                let reserve = reserves.get(&id).copied().unwrap_or(Money::ZERO);
                if let Err(e) = exchange.register_offering(&link.seller, id, reserve, now) {
                    return MessageKind::Error { message: e.to_string() };
                }
            }
            MessageKind::Ack
        }
        MessageKind::RegisterBuyer { client_name } => match exchange.register_buyer(client_name) {
            Ok(()) => MessageKind::Ack,
            Err(e) => MessageKind::Error { message: e.to_string() },
        },
        MessageKind::SubmitBid { bidder, links, amount, value } => {
            match run_single_shot(&mut exchange, bidder, links, *amount, *value, now) {
                Ok(outcome) => MessageKind::AuctionResult { outcome },
                Err(e) => MessageKind::Error { message: e.to_string() },
            }
        }
        _ => MessageKind::Error { message: "unsupported message at exchange".into() },
    }
}

fn run_single_shot(
    exchange: &mut Exchange,
    bidder: &str,
    links: &[LinkId],
    amount: Money,
    value: Money,
    now: SimTime,
) -> Result<crate::exchange::AuctionOutcome, ExchangeError> {
    let mut offerings = Vec::with_capacity(links.len());
    for link in links {
        let offering = exchange
            .offering_for_link(link)
            .ok_or_else(|| ExchangeError::UnknownLink(link.clone()))?;
        offerings.push(offering.id);
    }
    let round = exchange.open_round(&offerings, 1)?;
    exchange.submit_bid(crate::exchange::Bid {
        bidder: bidder.to_string(),
        offering: offerings[0],
        amount,
        value,
        submitted_at: now,
    })?;
    exchange.run_auction(round, Mechanism::Gsp)
}

// ---------------------------------------------------------------------------
// Global control service
// ---------------------------------------------------------------------------

struct GgcServiceState {
    topology: TopologyGraph,
    log: EventLog,
    leases: BTreeMap<LeaseId, ServiceLease>,
    buyers: BTreeSet<String>,
    sites: BTreeMap<SiteId, Arc<WirePeer>>,
    next_lease: u64,
    next_request: u64,
}

struct ServiceLease {
    lease: Lease,
    sites: Vec<SiteId>,
}

pub struct GgcServiceConfig {
    pub topology: TopologyDocument,
    pub reserves: BTreeMap<LinkId, Money>,
    pub exchange_addr: String,
    pub profile: LatencyProfile,
}

/// Serve global control: registers the topology with the exchange, then
/// accepts buyer and site-controller connections.
pub fn serve_ggc(
    listener: TcpListener,
    config: GgcServiceConfig,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    let epoch = Instant::now();
    let (exchange, _exchange_inbound) = WirePeer::connect(&config.exchange_addr, epoch)?;
    let topology = TopologyGraph::from_document(&config.topology)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let reply = exchange.request(
        MessageKind::RegisterSeller {
            seller: "ggc".into(),
            document: config.topology.clone(),
            reserves: config.reserves.clone(),
        },
        Duration::from_secs(5),
    )?;
    if let MessageKind::Error { message } = reply.kind {
        return Err(io::Error::new(io::ErrorKind::InvalidData, message));
    }

    let state = Arc::new(Mutex::new(GgcServiceState {
        topology,
        log: EventLog::new(),
        leases: BTreeMap::new(),
        buyers: BTreeSet::new(),
        sites: BTreeMap::new(),
        next_lease: 0,
        next_request: 0,
    }));

    // Lease expiry sweeper.
    {
        let state = Arc::clone(&state);
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                thread::sleep(Duration::from_millis(200));
                sweep_expired(&state, epoch);
            }
        });
    }

    listener.set_nonblocking(true)?;
    loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let state = Arc::clone(&state);
                let exchange = Arc::clone(&exchange);
                thread::spawn(move || ggc_connection(stream, state, exchange, epoch));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e),
        }
    }
}

fn sweep_expired(state: &Mutex<GgcServiceState>, epoch: Instant) {
    let now = SimTime::from_secs_f64(epoch.elapsed().as_secs_f64());
    let mut teardowns: Vec<(Arc<WirePeer>, LeaseId)> = Vec::new();
    {
        let mut st = state.lock().unwrap();
        let due: Vec<LeaseId> = st
            .leases
            .values()
            .filter(|l| {
                matches!(l.lease.state, LeaseState::Pending | LeaseState::Active)
                    && l.lease.expiry <= now
            })
            .map(|l| l.lease.id)
            .collect();
        for id in due {
            let entry = st.leases.get_mut(&id).expect("collected");
            entry.lease.state = LeaseState::Expired;
            let allocation = entry.lease.allocation.take();
            let sites = entry.sites.clone();
            if let Some(a) = allocation {
                let _ = st.topology.release(a);
            }
            for site in sites {
                if let Some(peer) = st.sites.get(&site) {
                    teardowns.push((Arc::clone(peer), id));
                }
            }
        }
    }
    for (peer, lease) in teardowns {
        let _ = peer.send(MessageKind::Teardown { lease });
    }
}

fn ggc_connection(
    stream: TcpStream,
    state: Arc<Mutex<GgcServiceState>>,
    exchange: Arc<WirePeer>,
    epoch: Instant,
) {
    let Ok((peer, inbound)) = WirePeer::spawn(stream, epoch) else { return };
    let mut registered_site: Option<SiteId> = None;
    for msg in inbound {
        match &msg.kind {
            MessageKind::Register { site } => {
                registered_site = Some(site.clone());
                state.lock().unwrap().sites.insert(site.clone(), Arc::clone(&peer));
                let _ = peer.reply(msg.msg_id, MessageKind::Ack);
            }
            MessageKind::RegisterBuyer { client_name } => {
                let reply = {
                    let mut st = state.lock().unwrap();
                    if st.buyers.insert(client_name.clone()) {
                        Ok(())
                    } else {
                        Err(format!("buyer `{client_name}` is already registered"))
                    }
                };
                let reply = match reply {
                    Ok(()) => {
                        match exchange.request(
                            MessageKind::RegisterBuyer { client_name: client_name.clone() },
                            Duration::from_secs(5),
                        ) {
                            Ok(Message { kind: MessageKind::Ack, .. }) => MessageKind::Ack,
                            Ok(Message { kind: MessageKind::Error { message }, .. }) => {
                                MessageKind::Error { message }
                            }
                            _ => MessageKind::Error { message: "exchange unavailable".into() },
                        }
                    }
                    Err(message) => MessageKind::Error { message },
                };
                let _ = peer.reply(msg.msg_id, reply);
            }
            MessageKind::ResourceRequest { request } => {
                let (request_id, outcome) = serve_request(&state, &exchange, request, epoch);
                let stages = {
                    let st = state.lock().unwrap();
                    st.log.records_for(&request_id).cloned().collect()
                };
                let _ = peer.reply(
                    msg.msg_id,
                    MessageKind::LeaseOutcome { request_id, outcome, stages },
                );
            }
            MessageKind::StatusReport { .. } => {
                let _ = peer.reply(msg.msg_id, MessageKind::Ack);
            }
            MessageKind::FailureNotify { event } => {
                let reply = handle_failure_notify(&state, &event.link);
                let _ = peer.reply(msg.msg_id, reply);
            }
            MessageKind::ConfigAck { .. } | MessageKind::Ack => {}
            _ => {
                let _ = peer.reply(
                    msg.msg_id,
                    MessageKind::Error { message: "unsupported message at global control".into() },
                );
            }
        }
    }
    if let Some(site) = registered_site {
        state.lock().unwrap().sites.remove(&site);
    }
}

/// Local-first backup on a reported failure: move the lease's circuits to a
/// spare strand of the same conduit and acknowledge with the provision, or
/// report the escalation.
fn handle_failure_notify(state: &Mutex<GgcServiceState>, failed: &LinkId) -> MessageKind {
    let mut st = state.lock().unwrap();
    let affected: Vec<(LeaseId, AllocationId)> = st
        .leases
        .values()
        .filter(|l| matches!(l.lease.state, LeaseState::Pending | LeaseState::Active))
        .filter_map(|l| l.lease.allocation.map(|a| (l.lease.id, a)))
        .filter(|(_, a)| {
            st.topology
                .allocation(a)
                .map(|alloc| alloc.path.segments.contains(failed))
                .unwrap_or(false)
        })
        .collect();
    let _ = st.topology.set_link_status(failed, crate::topology::LinkStatus::Down);
    for (lease, allocation) in affected {
        let spare = {
            let graph = &st.topology;
            graph.link(failed).and_then(|l| graph.conduit(&l.conduit)).and_then(|c| {
                c.links
                    .iter()
                    .filter(|l| *l != failed)
                    .filter_map(|l| graph.link(l))
                    .find(|l| l.is_up() && l.free_wavelengths() >= 1)
                    .map(|l| l.id.clone())
            })
        };
        match spare {
            Some(backup) => {
                if st.topology.reroute_link(allocation, failed, &backup).is_ok() {
                    return MessageKind::ProvisionBackup {
                        lease,
                        failed_link: failed.clone(),
                        backup_link: backup,
                    };
                }
            }
            None => {
                return MessageKind::Error {
                    message: format!("no local resource to back up `{failed}`"),
                }
            }
        }
    }
    MessageKind::Error { message: format!("no live circuits on `{failed}`") }
}

fn serve_request(
    state: &Mutex<GgcServiceState>,
    exchange: &WirePeer,
    request: &ResourceRequest,
    epoch: Instant,
) -> (String, LeaseOutcome) {
    let now = || SimTime::from_secs_f64(epoch.elapsed().as_secs_f64());
    let record = |st: &mut GgcServiceState, id: &str, stage: Stage, t0: SimTime, t1: SimTime| {
        st.log.append(StageRecord { request_id: id.to_string(), stage, t_start: t0, t_end: t1 });
    };

    // Stage 7: accept. Validation failures stop here.
    let t_accept = now();
    let (request_id, target) = {
        let mut st = state.lock().unwrap();
        let request_id = format!("r{:04}", st.next_request);
        st.next_request += 1;
        record(&mut st, &request_id, Stage::AcceptBid, t_accept, t_accept);
        if let Err(msg) = request.validate() {
            return (
                request_id,
                LeaseOutcome::Rejected { cause: RejectionCause::InvalidRequest(msg) },
            );
        }
        if !st.buyers.contains(&request.client_name) {
            return (request_id, LeaseOutcome::Rejected { cause: RejectionCause::UnregisteredBuyer });
        }
        let target = match st.topology.check_admissibility(&request.demand()) {
            Ok(AdmissibilityResult::Admissible(paths)) => paths[0].segments.clone(),
            Ok(AdmissibilityResult::Rejected(reason)) => {
                return (request_id, LeaseOutcome::Rejected { cause: reason.into() })
            }
            Err(TopologyError::UnknownNode(n)) => {
                return (
                    request_id,
                    LeaseOutcome::Rejected { cause: RejectionCause::UnknownEndpoint(n.0) },
                )
            }
            Err(e) => {
                return (
                    request_id,
                    LeaseOutcome::Rejected { cause: RejectionCause::InvalidRequest(e.to_string()) },
                )
            }
        };
        (request_id, target)
    };

    // Stage 8: the exchange runs the round.
    let t_auction = now();
    let auction = exchange.request(
        MessageKind::SubmitBid {
            bidder: request.client_name.clone(),
            links: target,
            amount: request.bid_amount,
            value: request.bid_value(),
        },
        Duration::from_secs(5),
    );
    let t_auction_end = now();
    let price = {
        let mut st = state.lock().unwrap();
        record(&mut st, &request_id, Stage::Auction, t_auction, t_auction_end);
        match auction {
            Ok(Message { kind: MessageKind::AuctionResult { outcome }, .. }) => {
                match outcome.winner(&request.client_name) {
                    Some(w) => w.payment,
                    None => return (request_id, LeaseOutcome::Outbid),
                }
            }
            Ok(Message { kind: MessageKind::Error { .. }, .. }) => {
                return (
                    request_id,
                    LeaseOutcome::Rejected { cause: RejectionCause::BelowReserve },
                )
            }
            _ => {
                return (
                    request_id,
                    LeaseOutcome::Rejected {
                        cause: RejectionCause::InvalidRequest("exchange unavailable".into()),
                    },
                )
            }
        }
    };

    // Stages 9-12: winner report, graph query, admissibility, config
    // generation.
    let (lease, path, configs, site_peers) = {
        let mut st = state.lock().unwrap();
        let t = now();
        record(&mut st, &request_id, Stage::WinnerReport, t, t);
        record(&mut st, &request_id, Stage::GraphQuery, t, t);
        let path = match st.topology.check_admissibility(&request.demand()) {
            Ok(AdmissibilityResult::Admissible(paths)) => {
                record(&mut st, &request_id, Stage::Admissibility, t, now());
                paths.into_iter().next().expect("non-empty")
            }
            Ok(AdmissibilityResult::Rejected(reason)) => {
                record(&mut st, &request_id, Stage::Admissibility, t, now());
                return (request_id, LeaseOutcome::Rejected { cause: reason.into() });
            }
            Err(e) => {
                record(&mut st, &request_id, Stage::Admissibility, t, now());
                return (
                    request_id,
                    LeaseOutcome::Rejected { cause: RejectionCause::InvalidRequest(e.to_string()) },
                );
            }
        };
        let lease_id = LeaseId(st.next_lease);
        st.next_lease += 1;
        let start = request.time.start.max(now());
        let lease = Lease {
            id: lease_id,
            buyer: request.client_name.clone(),
            request_id: request_id.clone(),
            path: path.clone(),
            strands: request.strands_needed,
            capacity_bps: request.capacity_needed_bps,
            allocation: None,
            price,
            start,
            expiry: start + request.time.duration_s,
            state: LeaseState::Pending,
        };
        let t_cfg = now();
        let configs = match site_configs(&st.topology, &path, &lease) {
            Ok(c) => c,
            Err(e) => {
                return (
                    request_id,
                    LeaseOutcome::Rejected { cause: RejectionCause::InvalidRequest(e.to_string()) },
                )
            }
        };
        record(&mut st, &request_id, Stage::ConfigGeneration, t_cfg, now());
        let peers: Vec<(SiteConfig, Option<Arc<WirePeer>>)> = configs
            .iter()
            .map(|c| (c.clone(), st.sites.get(&c.site).map(Arc::clone)))
            .collect();
        (lease, path, configs, peers)
    };

    // Stages 13-15: push configs and wait for the substrate.
    let t_push = now();
    {
        let mut st = state.lock().unwrap();
        record(&mut st, &request_id, Stage::ConfigPush, t_push, t_push);
    }
    let t_setup = now();
    for (config, peer) in &site_peers {
        if let Some(peer) = peer {
            let _ = peer.request(
                MessageKind::ConfigPush { config: config.clone() },
                Duration::from_secs(120),
            );
        }
    }
    let t_setup_end = now();

    // Stage 16: commit counters.
    let mut st = state.lock().unwrap();
    record(&mut st, &request_id, Stage::CircuitSetup, t_setup, t_setup_end);
    let t = now();
    record(&mut st, &request_id, Stage::CounterUpdate, t, t);
    let allocation = match st.topology.allocate(
        &path,
        request.strands_needed,
        request.capacity_needed_bps,
        lease.id,
    ) {
        Ok(a) => a,
        Err(TopologyError::ConcurrentDepletion { link }) => {
            return (request_id, LeaseOutcome::Rejected { cause: RejectionCause::Depleted(link.0) })
        }
        Err(TopologyError::WavelengthExhausted { link }) => {
            return (
                request_id,
                LeaseOutcome::Rejected { cause: RejectionCause::WavelengthExhausted(link.0) },
            )
        }
        Err(e) => {
            return (
                request_id,
                LeaseOutcome::Rejected { cause: RejectionCause::InvalidRequest(e.to_string()) },
            )
        }
    };

    let alloc = st.topology.allocation(&allocation).expect("just allocated");
    let mut wavelengths: BTreeMap<LinkId, Vec<u32>> = BTreeMap::new();
    for cid in &alloc.circuits {
        let c = st.topology.circuit(cid).expect("allocated");
        wavelengths.entry(c.link.clone()).or_default().push(c.wavelength);
    }
    let connectivity =
        ConnectivityInfo { path: path.clone(), circuits: alloc.circuits.clone(), wavelengths };

    let mut lease = lease;
    lease.allocation = Some(allocation);
    lease.state = LeaseState::Active;
    let lease_id = lease.id;
    st.leases.insert(
        lease_id,
        ServiceLease { lease, sites: configs.iter().map(|c| c.site.clone()).collect() },
    );

    // Stage 17: notify.
    let t = now();
    record(&mut st, &request_id, Stage::Notify, t, t);

    (request_id, LeaseOutcome::Granted { lease: lease_id, price, connectivity })
}

// ---------------------------------------------------------------------------
// Site controller service
// ---------------------------------------------------------------------------

pub struct GlscServiceConfig {
    pub site: SiteId,
    pub ggc_addr: String,
    pub monitor_interval: Duration,
    pub profile: LatencyProfile,
}

/// Run a site controller: register with global control, apply pushed
/// configurations after the substrate's provisioning latency, answer
/// teardowns, and report status at the monitoring interval.
pub fn serve_glsc(config: GlscServiceConfig, stop: Arc<AtomicBool>) -> io::Result<()> {
    let epoch = Instant::now();
    let (peer, inbound) = WirePeer::connect(&config.ggc_addr, epoch)?;
    let reply = peer.request(
        MessageKind::Register { site: config.site.clone() },
        Duration::from_secs(5),
    )?;
    if !matches!(reply.kind, MessageKind::Ack) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "registration refused"));
    }

    let circuits: Arc<Mutex<BTreeMap<u64, SiteConfig>>> = Arc::new(Mutex::new(BTreeMap::new()));
    let next_handle = Arc::new(AtomicU64::new(0));

    // Status reporting loop.
    {
        let peer = Arc::clone(&peer);
        let circuits = Arc::clone(&circuits);
        let stop = Arc::clone(&stop);
        let site = config.site.clone();
        let interval = config.monitor_interval;
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                thread::sleep(interval);
                let reports: Vec<crate::glsc::StatusReport> = {
                    let circuits = circuits.lock().unwrap();
                    let mut links = BTreeSet::new();
                    for config in circuits.values() {
                        links.extend(config.links.keys().cloned());
                    }
                    links
                        .into_iter()
                        .map(|link| crate::glsc::StatusReport {
                            link,
                            ts: SimTime::from_secs_f64(epoch.elapsed().as_secs_f64()),
                            rtt_s: 0.001,
                            loss: 0.0,
                            utilization: 0.0,
                            stability: 0,
                        })
                        .collect()
                };
                if !reports.is_empty() {
                    let _ = peer.request(
                        MessageKind::StatusReport { site: site.clone(), reports },
                        Duration::from_secs(5),
                    );
                }
            }
        });
    }

    for msg in inbound {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match msg.kind {
            MessageKind::ConfigPush { config: site_config } => {
                let n = site_config.links.len().max(1) as u32;
                let latency = provision_latency(config.profile, n).unwrap_or_default();
                if !latency.is_zero() {
                    thread::sleep(Duration::from_secs_f64(latency.as_secs_f64()));
                }
                let handle = next_handle.fetch_add(1, Ordering::SeqCst);
                circuits.lock().unwrap().insert(handle, site_config);
                let _ = peer.reply(
                    msg.msg_id,
                    MessageKind::ConfigAck {
                        handle: CircuitHandle(handle),
                        latency_s: latency.as_secs_f64(),
                    },
                );
            }
            MessageKind::Teardown { lease } => {
                circuits.lock().unwrap().retain(|_, c| c.lease != lease);
                let _ = peer.reply(msg.msg_id, MessageKind::Ack);
            }
            _ => {}
        }
    }
    Ok(())
}

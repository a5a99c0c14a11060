//! End-to-end service mode over localhost TCP: exchange, global control,
//! two site controllers, and a buyer speaking the framed protocol.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use greyfiber::events::Stage;
use greyfiber::ggc::{LeaseOutcome, RequestWindow, ResourceRequest};
use greyfiber::protocol::MessageKind;
use greyfiber::service::{
    serve_exchange, serve_ggc, serve_glsc, GgcServiceConfig, GlscServiceConfig, WirePeer,
};
use greyfiber::substrate::LatencyProfile;
use greyfiber::topology::{LinkId, NodeId, SiteId, TopologyDocument};
use greyfiber::units::{Money, SimDuration, SimTime};

fn dumbbell_doc() -> TopologyDocument {
    serde_json::from_str(
        r#"{
          "nodes": [
            {"id":"A","site":"site-a","geo":{"lat":43.07,"lon":-89.4}},
            {"id":"B","site":"site-b","geo":{"lat":44.05,"lon":-123.09}}
          ],
          "conduits": [{"id":"c1","endpoints":["A","B"],"links":["l1","l2"]}],
          "links": [
            {"id":"l1","conduit":"c1","seller":"fiberco","max_bandwidth_bps":20780000,"wavelength_capacity":8},
            {"id":"l2","conduit":"c1","seller":"fiberco","max_bandwidth_bps":20780000,"wavelength_capacity":8}
          ]
        }"#,
    )
    .unwrap()
}

fn ephemeral() -> (TcpListener, String) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    (listener, addr)
}

#[test]
fn provisioning_round_trip_over_the_wire() {
    let stop = Arc::new(AtomicBool::new(false));

    let (exchange_listener, exchange_addr) = ephemeral();
    {
        let stop = Arc::clone(&stop);
        thread::spawn(move || serve_exchange(exchange_listener, stop));
    }

    let (ggc_listener, ggc_addr) = ephemeral();
    {
        let stop = Arc::clone(&stop);
        let config = GgcServiceConfig {
            topology: dumbbell_doc(),
            reserves: BTreeMap::from([(LinkId::new("l1"), Money(4_000_000))]),
            exchange_addr: exchange_addr.clone(),
            profile: LatencyProfile::Ideal,
        };
        thread::spawn(move || serve_ggc(ggc_listener, config, stop));
    }
    // Give the controller a moment to register with the exchange.
    thread::sleep(Duration::from_millis(100));

    for site in ["site-a", "site-b"] {
        let stop = Arc::clone(&stop);
        let config = GlscServiceConfig {
            site: SiteId::new(site),
            ggc_addr: ggc_addr.clone(),
            monitor_interval: Duration::from_millis(200),
            profile: LatencyProfile::Ideal,
        };
        thread::spawn(move || serve_glsc(config, stop));
    }
    thread::sleep(Duration::from_millis(100));

    let (buyer, _inbound) = WirePeer::connect(&ggc_addr, Instant::now()).unwrap();
    let reply = buyer
        .request(
            MessageKind::RegisterBuyer { client_name: "tenant".into() },
            Duration::from_secs(5),
        )
        .unwrap();
    assert!(matches!(reply.kind, MessageKind::Ack), "registration failed: {reply:?}");

    let request = ResourceRequest {
        endpoint_a: NodeId::new("A"),
        endpoint_b: NodeId::new("B"),
        strands_needed: 1,
        bid_amount: Money(10_000_000),
        time: RequestWindow {
            start: SimTime::ZERO,
            duration_s: SimDuration::from_secs_f64(30.0),
        },
        capacity_needed_bps: 20_780_000,
        client_name: "tenant".into(),
        value: None,
        backup_required: false,
        elastic: false,
    };

    let started = Instant::now();
    let reply = buyer
        .request(MessageKind::ResourceRequest { request }, Duration::from_secs(5))
        .unwrap();
    let elapsed = started.elapsed();

    let MessageKind::LeaseOutcome { outcome, stages, .. } = reply.kind else {
        panic!("expected a lease outcome, got {reply:?}");
    };
    let LeaseOutcome::Granted { price, connectivity, lease } = outcome else {
        panic!("expected a grant, got {outcome:?}");
    };
    // Sole bidder pays the reserve; connectivity names circuits and
    // wavelengths on the chosen path.
    assert_eq!(price, Money(4_000_000));
    assert_eq!(connectivity.circuits.len(), 1);
    assert_eq!(connectivity.path.segments, vec![LinkId::new("l1")]);
    assert_eq!(connectivity.wavelengths[&LinkId::new("l1")], vec![0]);

    // Every pipeline stage ran, in order, with real timestamps.
    let stage_order: Vec<Stage> = stages.iter().map(|s| s.stage).collect();
    assert_eq!(stage_order, Stage::GRANTED_SEQUENCE.to_vec());
    for pair in stages.windows(2) {
        assert!(pair[0].t_end <= pair[1].t_start);
    }

    // Control-plane wall time per request stays under the half-second
    // bound with the ideal profile; the whole round trip is the upper bound
    // on the internal stages.
    assert!(
        elapsed < Duration::from_millis(500),
        "round trip took {elapsed:?}, expected < 500ms"
    );
    let internal: f64 = stages
        .iter()
        .filter(|s| !s.stage.is_substrate())
        .map(|s| (s.t_end - s.t_start).as_secs_f64())
        .sum();
    assert!(internal < 0.5, "internal stages took {internal}s");

    // A reported failure is answered with a backup provision on the spare
    // strand of the same conduit.
    let (site_conn, _inbound) = WirePeer::connect(&ggc_addr, Instant::now()).unwrap();
    let reply = site_conn
        .request(MessageKind::Register { site: SiteId::new("site-a") }, Duration::from_secs(5))
        .unwrap();
    assert!(matches!(reply.kind, MessageKind::Ack));
    let reply = site_conn
        .request(
            MessageKind::FailureNotify {
                event: greyfiber::glsc::FailureEvent {
                    site: SiteId::new("site-a"),
                    link: LinkId::new("l1"),
                    detected_at: SimTime::from_secs_f64(1.0),
                },
            },
            Duration::from_secs(5),
        )
        .unwrap();
    match reply.kind {
        MessageKind::ProvisionBackup { lease: backed, failed_link, backup_link } => {
            assert_eq!(backed, lease);
            assert_eq!(failed_link, LinkId::new("l1"));
            assert_eq!(backup_link, LinkId::new("l2"));
        }
        other => panic!("expected a backup provision, got {other:?}"),
    }

    stop.store(true, Ordering::Relaxed);
}

#[test]
fn below_reserve_bid_is_rejected_over_the_wire() {
    let stop = Arc::new(AtomicBool::new(false));
    let (exchange_listener, exchange_addr) = ephemeral();
    {
        let stop = Arc::clone(&stop);
        thread::spawn(move || serve_exchange(exchange_listener, stop));
    }
    let (ggc_listener, ggc_addr) = ephemeral();
    {
        let stop = Arc::clone(&stop);
        let config = GgcServiceConfig {
            topology: dumbbell_doc(),
            reserves: BTreeMap::from([
                (LinkId::new("l1"), Money(4_000_000)),
                (LinkId::new("l2"), Money(4_000_000)),
            ]),
            exchange_addr,
            profile: LatencyProfile::Ideal,
        };
        thread::spawn(move || serve_ggc(ggc_listener, config, stop));
    }
    thread::sleep(Duration::from_millis(100));

    let (buyer, _inbound) = WirePeer::connect(&ggc_addr, Instant::now()).unwrap();
    buyer
        .request(
            MessageKind::RegisterBuyer { client_name: "cheapskate".into() },
            Duration::from_secs(5),
        )
        .unwrap();
    let reply = buyer
        .request(
            MessageKind::ResourceRequest {
                request: ResourceRequest {
                    endpoint_a: NodeId::new("A"),
                    endpoint_b: NodeId::new("B"),
                    strands_needed: 1,
                    bid_amount: Money(3_000_000),
                    time: RequestWindow {
                        start: SimTime::ZERO,
                        duration_s: SimDuration::from_secs_f64(10.0),
                    },
                    capacity_needed_bps: 1_000_000,
                    client_name: "cheapskate".into(),
                    value: None,
                    backup_required: false,
                    elastic: false,
                },
            },
            Duration::from_secs(5),
        )
        .unwrap();
    match reply.kind {
        MessageKind::LeaseOutcome { outcome: LeaseOutcome::Rejected { .. }, .. } => {}
        other => panic!("expected rejection, got {other:?}"),
    }
    stop.store(true, Ordering::Relaxed);
}

//! Length-prefixed JSON messages between global control, site controllers,
//! the exchange, and clients.
//!
//! Frames are a 4-byte big-endian length followed by a JSON body. Framing
//! and body are independent so a compression or encryption layer can wrap
//! the body later without touching message handling.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::events::StageRecord;
use crate::exchange::AuctionOutcome;
use crate::ggc::{LeaseOutcome, ResourceRequest};
use crate::glsc::{CircuitHandle, FailureEvent, SiteConfig, StatusReport};
use crate::topology::{LeaseId, LinkId, SiteId, TopologyDocument};
use crate::units::Money;

/// Frames larger than this are rejected as corrupt.
pub const MAX_FRAME_BYTES: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub msg_id: u64,
    pub ts: f64,
    /// For acknowledgements: the msg_id this message answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    #[serde(flatten)]
    pub kind: MessageKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    /// Site controller announces itself to global control.
    Register { site: SiteId },
    RegisterSeller {
        seller: String,
        document: TopologyDocument,
        #[serde(default)]
        reserves: BTreeMap<LinkId, Money>,
    },
    RegisterBuyer { client_name: String },
    /// Buyer demand entering the pipeline.
    ResourceRequest { request: ResourceRequest },
    /// A sealed bid for a bundle of links (one compound slot); the exchange
    /// resolves the links to its live offerings.
    SubmitBid {
        bidder: String,
        links: Vec<LinkId>,
        amount: Money,
        value: Money,
    },
    AuctionResult { outcome: AuctionOutcome },
    ConfigPush { config: SiteConfig },
    ConfigAck { handle: CircuitHandle, latency_s: f64 },
    Teardown { lease: LeaseId },
    StatusReport { site: SiteId, reports: Vec<StatusReport> },
    FailureNotify { event: FailureEvent },
    ProvisionBackup { lease: LeaseId, failed_link: LinkId, backup_link: LinkId },
    LeaseOutcome { request_id: String, outcome: LeaseOutcome, stages: Vec<StageRecord> },
    Ack,
    Error { message: String },
}

/// Serialize and frame one message.
pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let len = u32::try_from(body.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "frame too large"))?;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Read one framed message. `Ok(None)` is a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Message>> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    let msg = serde_json::from_slice(&body)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(Some(msg))
}

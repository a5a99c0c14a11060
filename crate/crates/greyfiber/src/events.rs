//! Append-only log of provisioning pipeline stages, one JSON line per record.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::units::SimTime;

/// Pipeline stages in execution order, from bid acceptance to buyer
/// notification. `CircuitSetup` is the only substrate-attributed stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AcceptBid,
    Auction,
    WinnerReport,
    GraphQuery,
    Admissibility,
    ConfigGeneration,
    ConfigPush,
    CircuitSetup,
    CounterUpdate,
    Notify,
}

impl Stage {
    /// Every stage a granted request passes through, in order.
    pub const GRANTED_SEQUENCE: [Stage; 10] = [
        Stage::AcceptBid,
        Stage::Auction,
        Stage::WinnerReport,
        Stage::GraphQuery,
        Stage::Admissibility,
        Stage::ConfigGeneration,
        Stage::ConfigPush,
        Stage::CircuitSetup,
        Stage::CounterUpdate,
        Stage::Notify,
    ];

    pub fn is_substrate(self) -> bool {
        self == Stage::CircuitSetup
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub request_id: String,
    pub stage: Stage,
    pub t_start: SimTime,
    pub t_end: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<StageRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: StageRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    pub fn records_for<'a>(&'a self, request_id: &'a str) -> impl Iterator<Item = &'a StageRecord> {
        self.records.iter().filter(move |r| r.request_id == request_id)
    }

    pub fn request_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.request_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("stage records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<EventLog> {
        let mut log = EventLog::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StageRecord = serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            log.append(record);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_preserves_records() {
        let mut log = EventLog::new();
        log.append(StageRecord {
            request_id: "r1".into(),
            stage: Stage::Auction,
            t_start: SimTime::from_millis(0),
            t_end: SimTime::from_millis(177),
        });
        log.append(StageRecord {
            request_id: "r1".into(),
            stage: Stage::CircuitSetup,
            t_start: SimTime::from_millis(301),
            t_end: SimTime::from_millis(19_301),
        });
        let text = log.to_jsonl();
        assert!(text.contains(r#""stage":"auction""#));
        assert!(text.contains(r#""stage":"circuit_setup""#));
        let parsed = EventLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(parsed, log);
    }

    #[test]
    fn record_field_names_are_stable() {
        let record = StageRecord {
            request_id: "r9".into(),
            stage: Stage::Notify,
            t_start: SimTime::from_millis(500),
            t_end: SimTime::from_millis(500),
        };
        let json = serde_json::to_string(&record).unwrap();
        assert_eq!(
            json,
            r#"{"request_id":"r9","stage":"notify","t_start":0.5,"t_end":0.5}"#
        );
    }
}

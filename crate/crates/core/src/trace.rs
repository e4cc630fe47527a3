//! Append-only packet log and its CSV export.

use serde::Serialize;
use std::io::{self, Write};

use crate::codec::PacketType;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEvent {
    Tx,
    Rx,
    Drop,
    /// A DATA packet created by the traffic generator.
    Gen,
    /// A DATA packet handed to the upper layer at its final destination.
    Deliver,
    /// Next-hop decision; `peer` is the chosen neighbor.
    Select,
}

impl LogEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            LogEvent::Tx => "tx",
            LogEvent::Rx => "rx",
            LogEvent::Drop => "drop",
            LogEvent::Gen => "gen",
            LogEvent::Deliver => "deliver",
            LogEvent::Select => "select",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Beacon,
    Hello,
    Rreq,
    Rrep,
    RrepFwd,
    Rerr,
    Select,
    Forward,
    Retry,
    Ack,
    Void,
    Ttl,
    NoRoute,
    Timeout,
    Queue,
    Loss,
    Asleep,
    Depleted,
    Duplicate,
    Malformed,
    SendFailure,
    Traffic,
    Delivered,
}

impl Reason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::Beacon => "beacon",
            Reason::Hello => "hello",
            Reason::Rreq => "rreq",
            Reason::Rrep => "rrep",
            Reason::RrepFwd => "rrep_fwd",
            Reason::Rerr => "rerr",
            Reason::Select => "select",
            Reason::Forward => "forward",
            Reason::Retry => "retry",
            Reason::Ack => "ack",
            Reason::Void => "void",
            Reason::Ttl => "ttl",
            Reason::NoRoute => "no_route",
            Reason::Timeout => "timeout",
            Reason::Queue => "queue",
            Reason::Loss => "loss",
            Reason::Asleep => "asleep",
            Reason::Depleted => "depleted",
            Reason::Duplicate => "duplicate",
            Reason::Malformed => "malformed",
            Reason::SendFailure => "send_failure",
            Reason::Traffic => "traffic",
            Reason::Delivered => "delivered",
        }
    }
}

/// Annotation a protocol attaches to a transmission; copied onto the
/// matching receive records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxMeta {
    pub reason: Reason,
    pub origin: Option<u16>,
    pub seq: Option<u16>,
}

impl TxMeta {
    pub fn control(reason: Reason) -> Self {
        Self {
            reason,
            origin: None,
            seq: None,
        }
    }

    pub fn data(reason: Reason, origin: u16, seq: u16) -> Self {
        Self {
            reason,
            origin: Some(origin),
            seq: Some(seq),
        }
    }

    pub fn with_origin(mut self, origin: u16) -> Self {
        self.origin = Some(origin);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub time: SimTime,
    pub event: LogEvent,
    pub node: u16,
    pub peer: Option<u16>,
    pub packet_type: PacketType,
    pub bytes: u16,
    pub energy_j: f64,
    pub origin: Option<u16>,
    pub seq: Option<u16>,
    pub hops: Option<u8>,
    pub reason: Reason,
}

impl LogRecord {
    pub fn new(time: SimTime, event: LogEvent, node: usize, packet_type: PacketType, reason: Reason) -> Self {
        Self {
            time,
            event,
            node: node as u16,
            peer: None,
            packet_type,
            bytes: 0,
            energy_j: 0.0,
            origin: None,
            seq: None,
            hops: None,
            reason,
        }
    }

    pub fn peer(mut self, peer: usize) -> Self {
        self.peer = Some(peer as u16);
        self
    }

    pub fn bytes(mut self, bytes: usize) -> Self {
        self.bytes = bytes as u16;
        self
    }

    pub fn energy(mut self, joules: f64) -> Self {
        self.energy_j = joules;
        self
    }

    pub fn meta(mut self, meta: TxMeta) -> Self {
        self.origin = meta.origin;
        self.seq = meta.seq;
        self
    }

    pub fn data(mut self, origin: u16, seq: u16) -> Self {
        self.origin = Some(origin);
        self.seq = Some(seq);
        self
    }

    pub fn hops(mut self, hops: u8) -> Self {
        self.hops = Some(hops);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PacketLog {
    pub protocol: String,
    records: Vec<LogRecord>,
}

pub const CSV_HEADER: &str =
    "time_s,event,node,peer,packet_type,bytes,energy_j_debit,origin,seq,hops,reason,protocol";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl PacketLog {
    pub fn new(protocol: impl Into<String>) -> Self {
        Self {
            protocol: protocol.into(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: LogRecord) {
        debug_assert!(
            self.records.last().is_none_or(|l| l.time <= rec.time),
            "log time went backwards"
        );
        self.records.push(rec);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LogRecord> {
        self.records.iter()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{:e},{},{},{},{},{}",
                r.time,
                r.event.as_str(),
                r.node,
                opt(r.peer),
                r.packet_type.as_str(),
                r.bytes,
                r.energy_j,
                opt(r.origin),
                opt(r.seq),
                opt(r.hops),
                r.reason.as_str(),
                self.protocol
            )?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a PacketLog {
    type Item = &'a LogRecord;
    type IntoIter = std::slice::Iter<'a, LogRecord>;
    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows() {
        let mut log = PacketLog::new("elbrp");
        log.push(
            LogRecord::new(SimTime(448), LogEvent::Tx, 3, PacketType::Rreq, Reason::Rreq)
                .bytes(14)
                .energy(8.96e-6),
        );
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("0.000448,tx,3,,rreq,14,8.96e-6,,,,rreq,elbrp"));
    }
}

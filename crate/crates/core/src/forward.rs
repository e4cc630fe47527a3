//! Stop-and-wait DATA forwarding with per-hop ACKs, shared by both protocols.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::codec::{AckPacket, DataPacket, Packet, PacketType};
use crate::engine::{SendError, TimerId, World};
use crate::time::SimTime;
use crate::trace::{LogEvent, LogRecord, Reason, TxMeta};

/// ACK/retry constants. Both protocols use the same values so a comparison
/// isolates the routing policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopConfig {
    pub ack_timeout: SimTime,
    /// Total transmission attempts per hop before the link is declared broken.
    pub max_retries: u8,
    /// Packets waiting at one node beyond this are tail-dropped.
    pub queue_limit: usize,
}

impl Default for HopConfig {
    fn default() -> Self {
        Self {
            ack_timeout: SimTime::from_micros(50_000),
            max_retries: 3,
            queue_limit: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pending {
    pub data: DataPacket,
    /// Previous hop; `None` at the source.
    pub from: Option<usize>,
    /// This packet already caused one recovery discovery.
    pub rediscovered: bool,
}

impl Pending {
    pub fn meta(&self, reason: Reason) -> TxMeta {
        TxMeta::data(reason, self.origin(), self.data.seq)
    }

    pub fn origin(&self) -> u16 {
        self.data.mesh.orig.value() as u16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct InFlight {
    pub pending: Pending,
    pub next: usize,
    pub attempts: u8,
    pub token: u64,
}

#[derive(Debug, Default)]
pub(crate) struct HopQueue {
    pub queue: VecDeque<Pending>,
    pub inflight: Option<InFlight>,
    next_token: u64,
}

impl HopQueue {
    pub fn busy(&self) -> bool {
        self.inflight.is_some() || !self.queue.is_empty()
    }

    pub fn token(&mut self) -> u64 {
        self.next_token += 1;
        self.next_token
    }

    /// Appends unless the queue is full; a full queue logs a drop.
    pub fn push(&mut self, world: &mut World, node: usize, limit: usize, p: Pending) -> bool {
        if self.queue.len() >= limit {
            world.log_drop(node, PacketType::Data, Reason::Queue, Some(p.meta(Reason::Queue)));
            return false;
        }
        self.queue.push_back(p);
        true
    }

    /// Matches an ACK against the in-flight packet.
    pub fn acknowledge(&mut self, from: usize, seq: u16) -> Option<InFlight> {
        match &self.inflight {
            Some(f) if f.next == from && f.pending.data.seq == seq => self.inflight.take(),
            _ => None,
        }
    }
}

pub(crate) const TIMER_ACK: u8 = 1;
pub(crate) const TIMER_DISCOVERY: u8 = 2;
pub(crate) const TIMER_HELLO: u8 = 3;

pub(crate) fn timer(kind: u8, token: u64) -> TimerId {
    TimerId(((kind as u64) << 56) | (token & ((1 << 56) - 1)))
}

pub(crate) fn split_timer(t: TimerId) -> (u8, u64) {
    ((t.0 >> 56) as u8, t.0 & ((1 << 56) - 1))
}

pub(crate) fn send_ack(world: &mut World, node: usize, to: usize, data: &DataPacket) {
    let meta = TxMeta::data(Reason::Ack, data.mesh.orig.value() as u16, data.seq);
    let _ = world.unicast(node, to, &Packet::Ack(AckPacket { seq: data.seq }), meta);
}

/// Transmits the DATA of `flight` and arms its ACK timer.
pub(crate) fn transmit(world: &mut World, node: usize, cfg: &HopConfig, flight: &InFlight) -> Result<(), SendError> {
    let reason = if flight.attempts <= 1 { Reason::Forward } else { Reason::Retry };
    let meta = flight.pending.meta(reason);
    world.unicast(node, flight.next, &Packet::Data(flight.pending.data.clone()), meta)?;
    world.schedule_timer(node, cfg.ack_timeout, timer(TIMER_ACK, flight.token));
    Ok(())
}

/// Records arrival at the final destination.
pub(crate) fn deliver(world: &mut World, node: usize, data: &DataPacket) {
    let hops = world.hop_limit().saturating_sub(data.mesh.hops_left);
    let rec = LogRecord::new(world.now(), LogEvent::Deliver, node, PacketType::Data, Reason::Delivered)
        .bytes(data.payload.len())
        .data(data.mesh.orig.value() as u16, data.seq)
        .hops(hops);
    world.record(rec);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timer_roundtrip() {
        let t = timer(TIMER_DISCOVERY, 12345);
        assert_eq!(split_timer(t), (TIMER_DISCOVERY, 12345));
    }
}

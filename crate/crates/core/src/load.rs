//! LOAD: AODV-style reactive routing adapted to 6LoWPAN.
//!
//! Route requests flood the network carrying an accumulated cost (weak links,
//! then hops). Only the destination answers, once per strict improvement, and
//! the reply installs forward routes hop by hop along the recorded reverse
//! path. Data hops are acknowledged; a hop that exhausts its retries
//! invalidates the route and sends a RERR back to the source, which
//! rediscovers. There are no destination sequence numbers and no precursor
//! lists.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::codec::{
    DataPacket, HelloPacket, LoadRrepPacket, LoadRreqPacket, Packet, PacketType, RerrPacket, WireLocation,
};
use crate::engine::{Dispatcher, SendError, TimerId, World};
use crate::forward::{self, HopConfig, HopQueue, InFlight, Pending, TIMER_ACK, TIMER_DISCOVERY, TIMER_HELLO};
use crate::link::LqiValue;
use crate::node::NodeAddress;
use crate::time::SimTime;
use crate::trace::{Reason, TxMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    /// Links heard below this LQI count as weak.
    pub weak_threshold: u8,
    pub route_lifetime: SimTime,
    pub discovery_lifetime: SimTime,
    /// Periodic one-hop HELLO broadcasts from every node.
    pub hello: bool,
    pub hello_period: SimTime,
    pub hop: HopConfig,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            weak_threshold: 64,
            route_lifetime: SimTime::from_micros(30_000_000),
            discovery_lifetime: SimTime::from_micros(1_000_000),
            hello: false,
            hello_period: SimTime::from_micros(1_000_000),
            hop: HopConfig::default(),
        }
    }
}

/// Accumulated path cost; fewer weak links wins, then fewer hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RouteCost {
    pub weak_links: u8,
    pub hops: u8,
}

impl RouteCost {
    pub fn extend(self, lqi: LqiValue, weak_threshold: u8) -> Self {
        Self {
            weak_links: self.weak_links.saturating_add((lqi.raw() < weak_threshold) as u8),
            hops: self.hops.saturating_add(1),
        }
    }
}

impl Ord for RouteCost {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.weak_links, self.hops).cmp(&(other.weak_links, other.hops))
    }
}

impl PartialOrd for RouteCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadRouteEntry {
    pub dest: NodeAddress,
    pub next_hop: NodeAddress,
    pub cost: RouteCost,
    pub valid_until: SimTime,
    /// `(originator, rreq_id)` of the discovery that installed the entry.
    tag: Option<(u16, u16)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteRequestEntry {
    pub originator: NodeAddress,
    pub rreq_id: u16,
    pub best_cost_seen: RouteCost,
    pub reverse_next_hop: usize,
    pub expires: SimTime,
}

#[derive(Debug, Clone, Copy)]
struct Discovery {
    token: u64,
}

#[derive(Debug, Default)]
struct NodeProto {
    routes: HashMap<NodeAddress, LoadRouteEntry>,
    rreq_table: HashMap<(u16, u16), RouteRequestEntry>,
    next_rreq_id: u16,
    discovery: Option<Discovery>,
    disc_token: u64,
    tx: HopQueue,
    seen: HashSet<(u16, u16)>,
}

impl NodeProto {
    fn valid_route(&self, dest: NodeAddress, now: SimTime) -> Option<LoadRouteEntry> {
        self.routes.get(&dest).copied().filter(|r| r.valid_until >= now)
    }
}

pub struct Load {
    cfg: LoadConfig,
    nodes: Vec<NodeProto>,
    rng: ChaCha8Rng,
}

impl Load {
    /// `seed` drives protocol-internal randomness (HELLO phase offsets).
    pub fn new(cfg: LoadConfig, node_count: usize, seed: u64) -> Self {
        Self {
            cfg,
            nodes: (0..node_count).map(|_| NodeProto::default()).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &LoadConfig {
        &self.cfg
    }

    pub fn route(&self, node: usize, dest: NodeAddress) -> Option<&LoadRouteEntry> {
        self.nodes[node].routes.get(&dest)
    }

    pub fn request_entry(&self, node: usize, originator: u16, rreq_id: u16) -> Option<&RouteRequestEntry> {
        self.nodes[node].rreq_table.get(&(originator, rreq_id))
    }

    fn install(&mut self, node: usize, entry: LoadRouteEntry, now: SimTime) -> bool {
        let routes = &mut self.nodes[node].routes;
        let replace = match routes.get(&entry.dest) {
            None => true,
            Some(old) => old.valid_until < now || old.tag != entry.tag || entry.cost < old.cost,
        };
        if replace {
            routes.insert(entry.dest, entry);
        }
        replace
    }

    /// Floods an RREQ for `dest`. Queued data waits for the reply.
    pub fn load_initiate(&mut self, world: &mut World, node: usize, dest: NodeAddress) -> Result<(), SendError> {
        let Some(dest_idx) = world.index_of(dest) else {
            return Err(SendError::LinkBreak);
        };
        let me = &world.nodes[node];
        let orig_addr = me.address;
        let (Ok(dest_loc), Ok(orig_loc)) = (
            WireLocation::from_location(world.nodes[dest_idx].location),
            WireLocation::from_location(me.location),
        ) else {
            return Err(SendError::LinkBreak);
        };
        let p = &mut self.nodes[node];
        p.next_rreq_id = p.next_rreq_id.wrapping_add(1);
        let rreq_id = p.next_rreq_id;
        let rreq = Packet::LoadRreq(LoadRreqPacket {
            dest_addr: dest,
            dest_loc,
            orig_addr,
            orig_loc,
            rreq_id,
            weak_links: 0,
            hops: 0,
        });
        world.broadcast(node, &rreq, TxMeta::control(Reason::Rreq).with_origin(node as u16))?;
        let now = world.now();
        let p = &mut self.nodes[node];
        p.rreq_table.insert(
            (node as u16, rreq_id),
            RouteRequestEntry {
                originator: orig_addr,
                rreq_id,
                best_cost_seen: RouteCost::default(),
                reverse_next_hop: node,
                expires: now + self.cfg.discovery_lifetime,
            },
        );
        p.disc_token += 1;
        p.discovery = Some(Discovery { token: p.disc_token });
        world.schedule_timer(node, self.cfg.discovery_lifetime, forward::timer(TIMER_DISCOVERY, p.disc_token));
        Ok(())
    }

    /// Accumulates the link cost and rebroadcasts on strict improvement; the
    /// destination answers instead of rebroadcasting.
    pub fn load_relay_rreq(&mut self, world: &mut World, node: usize, from: usize, rreq: LoadRreqPacket, lqi: LqiValue) {
        let me = world.nodes[node].address;
        if rreq.orig_addr == me {
            return;
        }
        let now = world.now();
        let cost = RouteCost {
            weak_links: rreq.weak_links,
            hops: rreq.hops,
        }
        .extend(lqi, self.cfg.weak_threshold);
        let origin = rreq.orig_addr.value() as u16;
        let key = (origin, rreq.rreq_id);
        let p = &mut self.nodes[node];
        p.rreq_table.retain(|_, e| e.expires >= now);
        if let Some(e) = p.rreq_table.get(&key) {
            if cost >= e.best_cost_seen {
                return;
            }
        }
        p.rreq_table.insert(
            key,
            RouteRequestEntry {
                originator: rreq.orig_addr,
                rreq_id: rreq.rreq_id,
                best_cost_seen: cost,
                reverse_next_hop: from,
                expires: now + self.cfg.discovery_lifetime,
            },
        );
        let reverse = LoadRouteEntry {
            dest: rreq.orig_addr,
            next_hop: world.nodes[from].address,
            cost,
            valid_until: now + self.cfg.route_lifetime,
            tag: Some(key),
        };
        self.install(node, reverse, now);

        if rreq.dest_addr == me {
            self.load_destination_reply(world, node, from, &rreq);
            return;
        }
        let fwd = Packet::LoadRreq(LoadRreqPacket {
            weak_links: cost.weak_links,
            hops: cost.hops,
            ..rreq
        });
        let _ = world.broadcast(node, &fwd, TxMeta::control(Reason::Rreq).with_origin(origin));
    }

    /// Unicasts a RREP back along the reverse hop the improving RREQ came from.
    pub fn load_destination_reply(&mut self, world: &mut World, node: usize, from: usize, rreq: &LoadRreqPacket) {
        let rrep = Packet::LoadRrep(LoadRrepPacket {
            dest_addr: world.nodes[node].address,
            orig_addr: rreq.orig_addr,
            rreq_id: rreq.rreq_id,
            weak_links: 0,
            hops: 0,
        });
        let _ = world.unicast(node, from, &rrep, TxMeta::control(Reason::Rrep).with_origin(node as u16));
    }

    fn on_rrep(&mut self, world: &mut World, node: usize, from: usize, rrep: LoadRrepPacket, lqi: LqiValue) {
        let now = world.now();
        let cost = RouteCost {
            weak_links: rrep.weak_links,
            hops: rrep.hops,
        }
        .extend(lqi, self.cfg.weak_threshold);
        let origin = rrep.orig_addr.value() as u16;
        let key = (origin, rrep.rreq_id);
        let entry = LoadRouteEntry {
            dest: rrep.dest_addr,
            next_hop: world.nodes[from].address,
            cost,
            valid_until: now + self.cfg.route_lifetime,
            tag: Some(key),
        };
        if !self.install(node, entry, now) {
            return;
        }
        if rrep.orig_addr == world.nodes[node].address {
            self.nodes[node].discovery = None;
            self.pump(world, node);
            return;
        }
        let Some(reverse) = self.nodes[node].rreq_table.get(&key).map(|e| e.reverse_next_hop) else {
            return;
        };
        let fwd = Packet::LoadRrep(LoadRrepPacket {
            weak_links: cost.weak_links,
            hops: cost.hops,
            ..rrep
        });
        let dest_idx = rrep.dest_addr.value() as u16;
        let _ = world.unicast(node, reverse, &fwd, TxMeta::control(Reason::RrepFwd).with_origin(dest_idx));
    }

    fn enqueue(&mut self, world: &mut World, node: usize, p: Pending) {
        let limit = self.cfg.hop.queue_limit;
        if self.nodes[node].tx.push(world, node, limit, p) {
            self.pump(world, node);
        }
    }

    fn pump(&mut self, world: &mut World, node: usize) {
        loop {
            let now = world.now();
            let p = &mut self.nodes[node];
            if p.tx.inflight.is_some() || p.discovery.is_some() {
                return;
            }
            let Some(pending) = p.tx.queue.pop_front() else {
                return;
            };
            let dest = pending.data.mesh.final_dest;
            if let Some(route) = p.valid_route(dest, now) {
                match world.index_of(route.next_hop) {
                    Some(next) => {
                        world.log_select(node, next, pending.meta(Reason::Select));
                        let token = self.nodes[node].tx.token();
                        let flight = InFlight {
                            pending,
                            next,
                            attempts: 1,
                            token,
                        };
                        if self.send_flight(world, node, flight) {
                            return;
                        }
                    }
                    None => {
                        self.nodes[node].routes.remove(&dest);
                        world.log_drop(node, PacketType::Data, Reason::NoRoute, Some(pending.meta(Reason::NoRoute)));
                    }
                }
                continue;
            }
            if pending.from.is_none() {
                self.nodes[node].tx.queue.push_front(pending);
                if self.load_initiate(world, node, dest).is_ok() {
                    return;
                }
                let pending = self.nodes[node].tx.queue.pop_front().expect("just pushed");
                world.log_drop(node, PacketType::Data, Reason::SendFailure, Some(pending.meta(Reason::SendFailure)));
                continue;
            }
            // A relay without a route reports back to the source.
            world.log_drop(node, PacketType::Data, Reason::NoRoute, Some(pending.meta(Reason::NoRoute)));
            self.send_rerr(world, node, dest, pending.data.mesh.orig);
        }
    }

    fn send_flight(&mut self, world: &mut World, node: usize, flight: InFlight) -> bool {
        match forward::transmit(world, node, &self.cfg.hop, &flight) {
            Ok(()) => {
                self.nodes[node].tx.inflight = Some(flight);
                true
            }
            Err(SendError::LinkBreak) => {
                self.nodes[node].tx.inflight = Some(flight);
                self.load_handle_break(world, node);
                true
            }
            Err(_) => false,
        }
    }

    fn send_rerr(&mut self, world: &mut World, node: usize, unreachable: NodeAddress, origin: NodeAddress) {
        let now = world.now();
        let Some(back) = self.nodes[node].valid_route(origin, now) else {
            return;
        };
        let Some(next) = world.index_of(back.next_hop) else {
            return;
        };
        let rerr = Packet::Rerr(RerrPacket {
            unreachable_addr: unreachable,
            orig_addr: origin,
        });
        let _ = world.unicast(node, next, &rerr, TxMeta::control(Reason::Rerr).with_origin(origin.value() as u16));
    }

    /// The in-flight hop exhausted its retries.
    pub fn load_handle_break(&mut self, world: &mut World, node: usize) {
        let Some(flight) = self.nodes[node].tx.inflight.take() else {
            return;
        };
        let dest = flight.pending.data.mesh.final_dest;
        self.nodes[node].routes.remove(&dest);
        let mut pending = flight.pending;
        if pending.from.is_none() {
            if !pending.rediscovered {
                pending.rediscovered = true;
                world.log_drop(node, PacketType::Data, Reason::Timeout, Some(pending.meta(Reason::Retry)));
                self.nodes[node].tx.queue.push_front(pending);
            } else {
                world.log_drop(node, PacketType::Data, Reason::Timeout, Some(pending.meta(Reason::Timeout)));
            }
        } else {
            world.log_drop(node, PacketType::Data, Reason::Timeout, Some(pending.meta(Reason::Timeout)));
            self.send_rerr(world, node, dest, pending.data.mesh.orig);
        }
        self.pump(world, node);
    }

    fn on_rerr(&mut self, world: &mut World, node: usize, from: usize, rerr: RerrPacket) {
        let from_addr = world.nodes[from].address;
        let p = &mut self.nodes[node];
        if p.routes.get(&rerr.unreachable_addr).is_some_and(|r| r.next_hop == from_addr) {
            p.routes.remove(&rerr.unreachable_addr);
        }
        if rerr.orig_addr == world.nodes[node].address {
            return;
        }
        self.send_rerr(world, node, rerr.unreachable_addr, rerr.orig_addr);
    }

    fn on_data(&mut self, world: &mut World, node: usize, from: usize, mut data: DataPacket) {
        forward::send_ack(world, node, from, &data);
        let key = (data.mesh.orig.value() as u16, data.seq);
        if !self.nodes[node].seen.insert(key) {
            world.log_drop(node, PacketType::Data, Reason::Duplicate, Some(TxMeta::data(Reason::Duplicate, key.0, key.1)));
            return;
        }
        data.mesh.hops_left = data.mesh.hops_left.saturating_sub(1);
        if data.mesh.final_dest == world.nodes[node].address {
            forward::deliver(world, node, &data);
            return;
        }
        // Traffic from the source keeps the reverse route alive for RERRs.
        let now = world.now();
        let from_addr = world.nodes[from].address;
        let lifetime = self.cfg.route_lifetime;
        let routes = &mut self.nodes[node].routes;
        match routes.get_mut(&data.mesh.orig) {
            Some(r) if r.valid_until >= now && r.next_hop == from_addr => r.valid_until = now + lifetime,
            Some(r) if r.valid_until >= now => {}
            _ => {
                routes.insert(
                    data.mesh.orig,
                    LoadRouteEntry {
                        dest: data.mesh.orig,
                        next_hop: from_addr,
                        cost: RouteCost::default(),
                        valid_until: now + lifetime,
                        tag: None,
                    },
                );
            }
        }
        let pending = Pending {
            data,
            from: Some(from),
            rediscovered: false,
        };
        if pending.data.mesh.hops_left == 0 {
            world.log_drop(node, PacketType::Data, Reason::Ttl, Some(pending.meta(Reason::Ttl)));
            return;
        }
        self.enqueue(world, node, pending);
    }

    fn on_ack(&mut self, world: &mut World, node: usize, from: usize, seq: u16) {
        let Some(flight) = self.nodes[node].tx.acknowledge(from, seq) else {
            return;
        };
        let now = world.now();
        let dest = flight.pending.data.mesh.final_dest;
        if let Some(r) = self.nodes[node].routes.get_mut(&dest) {
            if r.valid_until >= now {
                r.valid_until = now + self.cfg.route_lifetime;
            }
        }
        self.pump(world, node);
    }

    fn hello(&mut self, world: &mut World, node: usize) {
        let addr = world.nodes[node].address;
        let _ = world.broadcast(node, &Packet::Hello(HelloPacket { addr }), TxMeta::control(Reason::Hello));
        world.schedule_timer(node, self.cfg.hello_period, forward::timer(TIMER_HELLO, 0));
    }
}

impl Dispatcher for Load {
    fn on_start(&mut self, world: &mut World) {
        if !self.cfg.hello {
            return;
        }
        let period = self.cfg.hello_period.as_micros().max(1);
        for node in 0..world.node_count() {
            let offset = SimTime(self.rng.gen_range(0..period));
            world.schedule_timer(node, offset, forward::timer(TIMER_HELLO, 0));
        }
    }

    fn on_frame(&mut self, world: &mut World, node: usize, from: usize, lqi: LqiValue, packet: Packet) {
        match packet {
            Packet::LoadRreq(r) => self.load_relay_rreq(world, node, from, r, lqi),
            Packet::LoadRrep(r) => self.on_rrep(world, node, from, r, lqi),
            Packet::Data(d) => self.on_data(world, node, from, d),
            Packet::Ack(a) => self.on_ack(world, node, from, a.seq),
            Packet::Rerr(r) => self.on_rerr(world, node, from, r),
            Packet::Hello(_) | Packet::Rreq(_) | Packet::Rrep(_) | Packet::ErBeacon(_) => {}
        }
    }

    fn on_timer(&mut self, world: &mut World, node: usize, timer: TimerId) {
        let (kind, token) = forward::split_timer(timer);
        match kind {
            TIMER_ACK => {
                let p = &mut self.nodes[node];
                let Some(flight) = p.tx.inflight.as_mut().filter(|f| f.token == token) else {
                    return;
                };
                if flight.attempts < self.cfg.hop.max_retries {
                    flight.attempts += 1;
                    let flight = p.tx.inflight.take().expect("checked");
                    if !self.send_flight(world, node, flight) {
                        self.pump(world, node);
                    }
                } else {
                    self.load_handle_break(world, node);
                }
            }
            TIMER_DISCOVERY => {
                let p = &mut self.nodes[node];
                if !p.discovery.is_some_and(|d| d.token == token) {
                    return;
                }
                p.discovery = None;
                // No reply in time: everything waiting on this discovery is lost.
                let waiting: Vec<Pending> = p.tx.queue.drain(..).collect();
                for w in waiting {
                    world.log_drop(node, PacketType::Data, Reason::NoRoute, Some(w.meta(Reason::NoRoute)));
                }
            }
            TIMER_HELLO => self.hello(world, node),
            _ => {}
        }
    }

    fn on_data(&mut self, world: &mut World, source: usize, data: DataPacket) {
        let pending = Pending {
            data,
            from: None,
            rediscovered: false,
        };
        self.enqueue(world, source, pending);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_order_is_lexicographic() {
        let a = RouteCost { weak_links: 0, hops: 9 };
        let b = RouteCost { weak_links: 1, hops: 2 };
        assert!(a < b);
        let c = RouteCost { weak_links: 1, hops: 1 };
        assert!(c < b);
        assert_eq!(
            RouteCost::default().extend(LqiValue(63), 64),
            RouteCost { weak_links: 1, hops: 1 }
        );
        assert_eq!(
            RouteCost::default().extend(LqiValue(64), 64),
            RouteCost { weak_links: 0, hops: 1 }
        );
    }
}

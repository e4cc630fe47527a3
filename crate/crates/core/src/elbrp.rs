//! Enhanced location-based routing.
//!
//! The edge router floods its address and position once at start-up. A node
//! holding data broadcasts a single-hop RREQ; only local edge routers (and
//! the edge router itself) answer, with a unicast RREP carrying their address,
//! position and the LQI at which they heard the request. Ordinary devices that
//! overhear the RREQ switch their radio off for a while. After a short
//! collection window the node forwards to the neighbor maximizing
//! normalized progress toward the edge router times normalized LQI, and each
//! relay repeats the procedure. Broken hops fall back to the next-best entry
//! before any new discovery is attempted.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

use crate::codec::{DataPacket, ErBeacon, Packet, PacketType, RerrPacket, RrepPacket, RreqPacket, WireLocation};
use crate::engine::{Dispatcher, SendError, TimerId, World};
use crate::forward::{self, HopConfig, HopQueue, InFlight, Pending, TIMER_ACK, TIMER_DISCOVERY};
use crate::geo::{euclidean_distance, progress_toward, Location};
use crate::link::{route_metric, LqiValue};
use crate::node::{NodeAddress, NodeRole};
use crate::time::SimTime;
use crate::trace::{Reason, TxMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElbrpConfig {
    pub collect_window: SimTime,
    pub sleep_window: SimTime,
    /// Neighbor entries older than this are ignored.
    pub staleness: SimTime,
    pub hop: HopConfig,
}

impl Default for ElbrpConfig {
    fn default() -> Self {
        Self {
            collect_window: SimTime::from_micros(100_000),
            sleep_window: SimTime::from_micros(500_000),
            staleness: SimTime::from_micros(5_000_000),
            hop: HopConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingTableEntry {
    pub er_address: NodeAddress,
    pub er_location: Location,
    pub source_address: Option<NodeAddress>,
    pub source_location: Option<Location>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborTableEntry {
    pub ler_address: NodeAddress,
    pub ler_location: Location,
    pub lqi: LqiValue,
    pub learned_at: SimTime,
}

/// One entry per LER address; the newest reply wins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborTable {
    entries: BTreeMap<NodeAddress, NeighborTableEntry>,
}

impl NeighborTable {
    pub fn upsert(&mut self, e: NeighborTableEntry) {
        match self.entries.get(&e.ler_address) {
            Some(old) if old.learned_at > e.learned_at => {}
            _ => {
                self.entries.insert(e.ler_address, e);
            }
        }
    }

    pub fn remove(&mut self, addr: NodeAddress) -> Option<NeighborTableEntry> {
        self.entries.remove(&addr)
    }

    pub fn get(&self, addr: NodeAddress) -> Option<&NeighborTableEntry> {
        self.entries.get(&addr)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborTableEntry> {
        self.entries.values()
    }

    /// Entries learned within `staleness` of `now`.
    pub fn fresh(&self, now: SimTime, staleness: SimTime) -> impl Iterator<Item = &NeighborTableEntry> {
        self.entries
            .values()
            .filter(move |e| now.saturating_sub(e.learned_at) <= staleness)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryState {
    pub collect_deadline: SimTime,
    pub replies: Vec<NeighborTableEntry>,
    token: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalVoid;

/// Inputs to next-hop selection at one node.
#[derive(Debug, Clone, Copy)]
pub struct SelectionContext {
    pub current: Location,
    pub er_address: NodeAddress,
    pub er_location: Location,
    pub radio_range: f64,
    pub now: SimTime,
    pub staleness: SimTime,
    /// `false` after the direct link to the edge router has just failed.
    pub er_usable: bool,
}

/// Picks the edge router when it is in range, otherwise the fresh
/// positive-progress neighbor with the largest metric (ties: lowest address).
pub fn select_next_hop(ctx: &SelectionContext, table: &NeighborTable) -> Result<NodeAddress, LocalVoid> {
    if ctx.er_usable && euclidean_distance(ctx.current, ctx.er_location) <= ctx.radio_range {
        return Ok(ctx.er_address);
    }
    let mut best: Option<(f64, NodeAddress)> = None;
    for e in table.fresh(ctx.now, ctx.staleness) {
        if e.ler_address == ctx.er_address && !ctx.er_usable {
            continue;
        }
        let progress = progress_toward(ctx.current, e.ler_location, ctx.er_location);
        if progress <= 0.0 {
            continue;
        }
        let m = route_metric(progress, ctx.radio_range, e.lqi);
        let better = match best {
            None => true,
            Some((bm, ba)) => m > bm || (m == bm && e.ler_address.value() < ba.value()),
        };
        if better {
            best = Some((m, e.ler_address));
        }
    }
    best.map(|(_, a)| a).ok_or(LocalVoid)
}

#[derive(Debug, Default)]
struct NodeProto {
    route: Option<RoutingTableEntry>,
    neighbors: NeighborTable,
    discovery: Option<DiscoveryState>,
    last_discovery: Option<SimTime>,
    /// The ER is not selected again before this time after a hop to it failed.
    er_suppressed_until: SimTime,
    tx: HopQueue,
    seen: HashSet<(u16, u16)>,
    upstream: HashMap<u16, usize>,
    disc_token: u64,
}

/// Per-run counters that are not visible in the packet log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ElbrpStats {
    pub discoveries: u64,
    pub local_repairs: u64,
    pub voids: u64,
}

pub struct Elbrp {
    cfg: ElbrpConfig,
    nodes: Vec<NodeProto>,
    stats: ElbrpStats,
}

impl Elbrp {
    pub fn new(cfg: ElbrpConfig, node_count: usize) -> Self {
        Self {
            cfg,
            nodes: (0..node_count).map(|_| NodeProto::default()).collect(),
            stats: ElbrpStats::default(),
        }
    }

    pub fn config(&self) -> &ElbrpConfig {
        &self.cfg
    }

    pub fn stats(&self) -> ElbrpStats {
        self.stats
    }

    pub fn routing_entry(&self, node: usize) -> Option<&RoutingTableEntry> {
        self.nodes[node].route.as_ref()
    }

    pub fn neighbor_table(&self, node: usize) -> &NeighborTable {
        &self.nodes[node].neighbors
    }

    pub fn discovery_active(&self, node: usize) -> bool {
        self.nodes[node].discovery.is_some()
    }

    /// Seeds a node's routing table directly, bypassing the beacon flood.
    pub fn set_routing_entry(&mut self, node: usize, entry: RoutingTableEntry) {
        self.nodes[node].route = Some(entry);
    }

    /// Broadcasts the edge router's address and position.
    pub fn er_announce(&mut self, world: &mut World, er: usize) {
        let n = &world.nodes[er];
        debug_assert_eq!(n.role, NodeRole::EdgeRouter);
        let Ok(er_loc) = WireLocation::from_location(n.location) else {
            return;
        };
        self.nodes[er].route = Some(RoutingTableEntry {
            er_address: n.address,
            er_location: n.location,
            source_address: None,
            source_location: None,
        });
        let beacon = Packet::ErBeacon(ErBeacon {
            er_addr: n.address,
            er_loc,
        });
        let _ = world.broadcast(er, &beacon, TxMeta::control(Reason::Beacon));
    }

    fn selection_context(&self, world: &World, node: usize) -> Option<SelectionContext> {
        let route = self.nodes[node].route?;
        Some(SelectionContext {
            current: world.nodes[node].location,
            er_address: route.er_address,
            er_location: route.er_location,
            radio_range: world.radio.radio_range,
            now: world.now(),
            staleness: self.cfg.staleness,
            er_usable: world.now() >= self.nodes[node].er_suppressed_until,
        })
    }

    /// Broadcasts an RREQ toward the known edge router and opens the
    /// collection window. Fails with `LocalVoid` when the edge router is
    /// unknown.
    pub fn initiate_discovery(&mut self, world: &mut World, node: usize) -> Result<(), LocalVoid> {
        let route = self.nodes[node].route.ok_or(LocalVoid)?;
        let me = &world.nodes[node];
        let (Ok(dest_loc), Ok(orig_loc)) = (
            WireLocation::from_location(route.er_location),
            WireLocation::from_location(me.location),
        ) else {
            return Err(LocalVoid);
        };
        let rreq = Packet::Rreq(RreqPacket {
            dest_addr: route.er_address,
            dest_loc,
            orig_addr: me.address,
            orig_loc,
        });
        if world.broadcast(node, &rreq, TxMeta::control(Reason::Rreq)).is_err() {
            return Err(LocalVoid);
        }
        self.stats.discoveries += 1;
        let p = &mut self.nodes[node];
        p.disc_token += 1;
        let deadline = world.now() + self.cfg.collect_window;
        p.discovery = Some(DiscoveryState {
            collect_deadline: deadline,
            replies: Vec::new(),
            token: p.disc_token,
        });
        world.schedule_timer(node, self.cfg.collect_window, forward::timer(TIMER_DISCOVERY, p.disc_token));
        Ok(())
    }

    fn enqueue(&mut self, world: &mut World, node: usize, p: Pending) {
        let limit = self.cfg.hop.queue_limit;
        if self.nodes[node].tx.push(world, node, limit, p) {
            self.pump(world, node);
        }
    }

    /// Serves the head of the node's queue unless a hop or a discovery is
    /// already in progress.
    fn pump(&mut self, world: &mut World, node: usize) {
        loop {
            let p = &mut self.nodes[node];
            if p.tx.inflight.is_some() || p.discovery.is_some() {
                return;
            }
            let Some(mut pending) = p.tx.queue.pop_front() else {
                return;
            };
            let Some(ctx) = self.selection_context(world, node) else {
                world.log_drop(node, PacketType::Data, Reason::NoRoute, Some(pending.meta(Reason::NoRoute)));
                continue;
            };
            match select_next_hop(&ctx, &self.nodes[node].neighbors) {
                Ok(next_addr) => {
                    let Some(next) = world.index_of(next_addr) else {
                        self.nodes[node].neighbors.remove(next_addr);
                        self.nodes[node].tx.queue.push_front(pending);
                        continue;
                    };
                    world.log_select(node, next, pending.meta(Reason::Select));
                    if self.start_hop(world, node, pending, next) {
                        return;
                    }
                }
                Err(LocalVoid) => {
                    let now = world.now();
                    let p = &self.nodes[node];
                    let recent = p
                        .last_discovery
                        .is_some_and(|t| now.saturating_sub(t) <= self.cfg.staleness);
                    let may_discover = !recent || !pending.rediscovered;
                    if may_discover {
                        if recent {
                            pending.rediscovered = true;
                        }
                        self.nodes[node].tx.queue.push_front(pending);
                        if self.initiate_discovery(world, node).is_ok() {
                            return;
                        }
                        let pending = self.nodes[node].tx.queue.pop_front().expect("just pushed");
                        self.drop_with_rerr(world, node, pending, Reason::SendFailure);
                        continue;
                    }
                    self.stats.voids += 1;
                    self.drop_with_rerr(world, node, pending, Reason::Void);
                }
            }
        }
    }

    /// Returns `false` if the packet could not be sent and was dropped.
    fn start_hop(&mut self, world: &mut World, node: usize, pending: Pending, next: usize) -> bool {
        let token = self.nodes[node].tx.token();
        let flight = InFlight {
            pending,
            next,
            attempts: 1,
            token,
        };
        self.send_flight(world, node, flight)
    }

    fn send_flight(&mut self, world: &mut World, node: usize, flight: InFlight) -> bool {
        match forward::transmit(world, node, &self.cfg.hop, &flight) {
            Ok(()) => {
                self.nodes[node].tx.inflight = Some(flight);
                true
            }
            Err(SendError::LinkBreak) => {
                self.nodes[node].tx.inflight = Some(flight);
                self.handle_failure(world, node);
                true
            }
            Err(_) => false,
        }
    }

    /// The in-flight hop exhausted its retries: forget the neighbor and let
    /// the queue retry with the next-best entry or a fresh discovery.
    pub fn handle_failure(&mut self, world: &mut World, node: usize) {
        let Some(flight) = self.nodes[node].tx.inflight.take() else {
            return;
        };
        let failed = world.nodes[flight.next].address;
        let p = &mut self.nodes[node];
        p.neighbors.remove(failed);
        if p.route.is_some_and(|r| r.er_address == failed) {
            p.er_suppressed_until = world.now() + self.cfg.staleness;
        }
        self.stats.local_repairs += 1;
        world.log_drop(node, PacketType::Data, Reason::Timeout, Some(flight.pending.meta(Reason::Timeout)));
        self.nodes[node].tx.queue.push_front(flight.pending);
        self.pump(world, node);
    }

    fn drop_with_rerr(&mut self, world: &mut World, node: usize, pending: Pending, reason: Reason) {
        world.log_drop(node, PacketType::Data, reason, Some(pending.meta(reason)));
        let Some(prev) = pending.from else {
            return;
        };
        let Some(route) = self.nodes[node].route else {
            return;
        };
        let rerr = Packet::Rerr(RerrPacket {
            unreachable_addr: route.er_address,
            orig_addr: pending.data.mesh.orig,
        });
        let _ = world.unicast(node, prev, &rerr, TxMeta::control(Reason::Rerr).with_origin(pending.origin()));
    }

    fn is_busy(&self, node: usize) -> bool {
        let p = &self.nodes[node];
        p.tx.busy() || p.discovery.is_some()
    }

    fn on_beacon(&mut self, world: &mut World, node: usize, b: ErBeacon) {
        if self.nodes[node].route.is_some() {
            return;
        }
        self.nodes[node].route = Some(RoutingTableEntry {
            er_address: b.er_addr,
            er_location: b.er_loc.to_location(),
            source_address: None,
            source_location: None,
        });
        let _ = world.broadcast(node, &Packet::ErBeacon(b), TxMeta::control(Reason::Beacon));
    }

    /// LERs and the edge router answer with their position and the observed
    /// LQI; ordinary devices go to sleep unless they have traffic of their own.
    pub fn handle_rreq(&mut self, world: &mut World, node: usize, from: usize, rreq: RreqPacket, lqi: LqiValue) {
        let p = &mut self.nodes[node];
        let route = p.route.get_or_insert(RoutingTableEntry {
            er_address: rreq.dest_addr,
            er_location: rreq.dest_loc.to_location(),
            source_address: None,
            source_location: None,
        });
        route.source_address = Some(rreq.orig_addr);
        route.source_location = Some(rreq.orig_loc.to_location());

        let me = &world.nodes[node];
        match me.role {
            NodeRole::LocalEdgeRouter | NodeRole::EdgeRouter => {
                let Ok(responder_loc) = WireLocation::from_location(me.location) else {
                    return;
                };
                let rrep = Packet::Rrep(RrepPacket {
                    responder_addr: me.address,
                    responder_loc,
                    link_lqi: lqi,
                    orig_addr: rreq.orig_addr,
                });
                let _ = world.unicast(node, from, &rrep, TxMeta::control(Reason::Rrep).with_origin(node as u16));
            }
            NodeRole::ReducedFunctionDevice => {
                if !self.is_busy(node) {
                    let until = world.now() + self.cfg.sleep_window;
                    world.sleep(node, until);
                }
            }
        }
    }

    fn on_rrep(&mut self, world: &mut World, node: usize, rrep: RrepPacket) {
        if rrep.orig_addr != world.nodes[node].address {
            return;
        }
        let entry = NeighborTableEntry {
            ler_address: rrep.responder_addr,
            ler_location: rrep.responder_loc.to_location(),
            lqi: rrep.link_lqi,
            learned_at: world.now(),
        };
        let p = &mut self.nodes[node];
        p.neighbors.upsert(entry);
        if let Some(d) = p.discovery.as_mut() {
            d.replies.push(entry);
        }
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
        self.nodes[node].upstream.insert(key.0, from);
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
        if self.nodes[node].tx.acknowledge(from, seq).is_some() {
            self.pump(world, node);
        }
    }

    fn on_rerr(&mut self, world: &mut World, node: usize, from: usize, rerr: RerrPacket) {
        let failed = world.nodes[from].address;
        self.nodes[node].neighbors.remove(failed);
        let origin = rerr.orig_addr.value() as u16;
        if rerr.orig_addr == world.nodes[node].address {
            return;
        }
        if let Some(&prev) = self.nodes[node].upstream.get(&origin) {
            let _ = world.unicast(node, prev, &Packet::Rerr(rerr), TxMeta::control(Reason::Rerr).with_origin(origin));
        }
    }
}

impl Dispatcher for Elbrp {
    fn on_start(&mut self, world: &mut World) {
        let ers: Vec<usize> = (0..world.node_count())
            .filter(|&i| world.nodes[i].role == NodeRole::EdgeRouter)
            .collect();
        for er in ers {
            self.er_announce(world, er);
        }
    }

    fn on_frame(&mut self, world: &mut World, node: usize, from: usize, lqi: LqiValue, packet: Packet) {
        match packet {
            Packet::ErBeacon(b) => self.on_beacon(world, node, b),
            Packet::Rreq(r) => self.handle_rreq(world, node, from, r, lqi),
            Packet::Rrep(r) => self.on_rrep(world, node, r),
            Packet::Data(d) => self.on_data(world, node, from, d),
            Packet::Ack(a) => self.on_ack(world, node, from, a.seq),
            Packet::Rerr(r) => self.on_rerr(world, node, from, r),
            Packet::Hello(_) | Packet::LoadRreq(_) | Packet::LoadRrep(_) => {}
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
                    self.handle_failure(world, node);
                }
            }
            TIMER_DISCOVERY => {
                let p = &mut self.nodes[node];
                if p.discovery.as_ref().is_some_and(|d| d.token == token) {
                    p.discovery = None;
                    p.last_discovery = Some(world.now());
                    self.pump(world, node);
                }
            }
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

//! Deterministic discrete-event kernel: event queue, unit-disk radio with
//! Bernoulli frame loss, airtime delays and energy accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::rc::Rc;
use thiserror::Error;

use crate::codec::{self, DataPacket, MeshHeader, Packet, PacketType};
use crate::geo::euclidean_distance;
use crate::link::{link_lqi, LqiValue};
use crate::node::{NodeAddress, NodeState};
use crate::time::SimTime;
use crate::trace::{LogEvent, LogRecord, PacketLog, Reason, TxMeta};

/// Opaque protocol timer handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimerId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    FrameDelivery {
        from: usize,
        target: usize,
        frame: Rc<[u8]>,
        lqi: LqiValue,
        meta: TxMeta,
    },
    TimerFire {
        node: usize,
        timer: TimerId,
    },
    TrafficTick {
        source: usize,
    },
    /// Fault injection: the node stops sending and receiving for good.
    NodeFailure {
        node: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub at: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot schedule at {at} before the current time {now}")]
pub struct ScheduleError {
    pub at: SimTime,
    pub now: SimTime,
}

/// Min-ordered on `(at, seq)`; `seq` breaks ties in insertion order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    next_seq: u64,
    now: SimTime,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<u64, ScheduleError> {
        if at < self.now {
            return Err(ScheduleError { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { at, seq, kind }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(ev) = self.heap.pop()?;
        self.now = ev.at;
        Some(ev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioModel {
    pub radio_range: f64,
    pub loss_probability: f64,
    pub bitrate_bps: f64,
    pub per_hop_proc_delay_s: f64,
    /// Amplitude of the per-link LQI offset.
    pub noise_amplitude: u32,
    /// LQI at and above which a link suffers only the base loss; below it the
    /// frame reception ratio falls linearly to zero. `0` (the default) disables
    /// the term, leaving pure Bernoulli loss.
    pub lqi_prr_knee: u8,
}

impl Default for RadioModel {
    fn default() -> Self {
        Self {
            radio_range: 40.0,
            loss_probability: 0.1,
            bitrate_bps: 250_000.0,
            per_hop_proc_delay_s: 0.002,
            noise_amplitude: 40,
            lqi_prr_knee: 0,
        }
    }
}

impl RadioModel {
    pub fn airtime_s(&self, bytes: usize) -> f64 {
        bytes as f64 * 8.0 / self.bitrate_bps
    }

    /// Airtime plus per-hop processing, rounded up to whole microseconds.
    pub fn hop_latency(&self, bytes: usize) -> SimTime {
        SimTime(((self.airtime_s(bytes) + self.per_hop_proc_delay_s) * 1e6 - 1e-6).ceil().max(0.0) as u64)
    }

    /// Probability that a single frame on a link of quality `lqi` arrives.
    pub fn delivery_probability(&self, lqi: LqiValue) -> f64 {
        let link = if self.lqi_prr_knee == 0 {
            1.0
        } else {
            (lqi.raw() as f64 / self.lqi_prr_knee as f64).min(1.0)
        };
        (1.0 - self.loss_probability) * link
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub tx_power_w: f64,
    pub rx_power_w: f64,
    pub initial_j: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            tx_power_w: 0.02,
            rx_power_w: 0.01,
            initial_j: 1.0,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for sub-stream `stream` of `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Symmetric per-pair link qualities of a static deployment.
#[derive(Debug, Clone)]
pub struct LinkTable {
    n: usize,
    lqi: Vec<Option<LqiValue>>,
    neighbors: Vec<Vec<usize>>,
    forced_loss: HashMap<(usize, usize), f64>,
}

impl LinkTable {
    /// Each pair's LQI noise comes from its own generator keyed by
    /// `(seed, i, j)`, so the table does not depend on construction order.
    pub fn build(nodes: &[NodeState], radio: &RadioModel, seed: u64) -> Self {
        let n = nodes.len();
        let mut lqi = vec![None; n * n];
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclidean_distance(nodes[i].location, nodes[j].location);
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, ((i as u64) << 32) | j as u64));
                if let Ok(q) = link_lqi(d, radio.radio_range, radio.noise_amplitude, &mut rng) {
                    lqi[i * n + j] = Some(q);
                    lqi[j * n + i] = Some(q);
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        Self {
            n,
            lqi,
            neighbors,
            forced_loss: HashMap::new(),
        }
    }

    pub fn lqi(&self, a: usize, b: usize) -> Option<LqiValue> {
        self.lqi[a * self.n + b]
    }

    /// In-range nodes of `a`, in ascending index order.
    pub fn neighbors(&self, a: usize) -> &[usize] {
        &self.neighbors[a]
    }

    pub fn set_forced_loss(&mut self, a: usize, b: usize, loss: f64) {
        self.forced_loss.insert((a.min(b), a.max(b)), loss);
    }

    fn forced_loss(&self, a: usize, b: usize) -> Option<f64> {
        self.forced_loss.get(&(a.min(b), a.max(b))).copied()
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SendError {
    #[error("sender is asleep")]
    Asleep,
    #[error("sender has no energy or has failed")]
    Depleted,
    #[error("target is outside radio range")]
    LinkBreak,
}

/// Constant-bit-rate traffic toward a single sink.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficPlan {
    pub dest: NodeAddress,
    pub interval: SimTime,
    pub stop: SimTime,
    pub payload_bytes: usize,
    pub hop_limit: u8,
}

/// Protocol hooks invoked by [`run_until`].
pub trait Dispatcher {
    fn on_start(&mut self, _world: &mut World) {}
    fn on_frame(&mut self, world: &mut World, node: usize, from: usize, lqi: LqiValue, packet: Packet);
    fn on_timer(&mut self, world: &mut World, node: usize, timer: TimerId);
    /// A freshly generated DATA packet at its source.
    fn on_data(&mut self, world: &mut World, source: usize, data: DataPacket);
}

/// All mutable state of one run. Single-threaded by construction.
pub struct World {
    pub nodes: Vec<NodeState>,
    pub radio: RadioModel,
    pub energy: EnergyModel,
    pub links: LinkTable,
    pub log: PacketLog,
    pub traffic: Option<TrafficPlan>,
    queue: EventQueue,
    channel: ChaCha8Rng,
    data_seq: Vec<u16>,
    debits: Vec<f64>,
    send_failures: u64,
    started: bool,
}

impl World {
    /// Resets every node's battery to `energy.initial_j`.
    pub fn new(
        mut nodes: Vec<NodeState>,
        radio: RadioModel,
        energy: EnergyModel,
        link_seed: u64,
        channel_seed: u64,
        protocol: &str,
    ) -> Self {
        for n in &mut nodes {
            n.energy_j = energy.initial_j;
        }
        let links = LinkTable::build(&nodes, &radio, link_seed);
        let count = nodes.len();
        Self {
            nodes,
            radio,
            energy,
            links,
            log: PacketLog::new(protocol),
            traffic: None,
            queue: EventQueue::new(),
            channel: ChaCha8Rng::seed_from_u64(channel_seed),
            data_seq: vec![0; count],
            debits: vec![0.0; count],
            send_failures: 0,
            started: false,
        }
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn index_of(&self, addr: NodeAddress) -> Option<usize> {
        match addr {
            NodeAddress::Short(v) if (v as usize) < self.nodes.len() => Some(v as usize),
            _ => None,
        }
    }

    pub fn send_failures(&self) -> u64 {
        self.send_failures
    }

    /// Joules debited per node by the radio, accumulated independently of the
    /// batteries and of the log.
    pub fn debits(&self) -> &[f64] {
        &self.debits
    }

    pub fn hop_limit(&self) -> u8 {
        self.traffic.as_ref().map_or(u8::MAX, |t| t.hop_limit)
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<u64, ScheduleError> {
        self.queue.schedule(at, kind)
    }

    pub fn schedule_timer(&mut self, node: usize, delay: SimTime, timer: TimerId) {
        let at = self.now() + delay;
        self.queue
            .schedule(at, EventKind::TimerFire { node, timer })
            .expect("timers are never in the past");
    }

    pub fn schedule_traffic(&mut self, source: usize, at: SimTime) -> Result<u64, ScheduleError> {
        self.queue.schedule(at, EventKind::TrafficTick { source })
    }

    pub fn schedule_failure(&mut self, node: usize, at: SimTime) -> Result<u64, ScheduleError> {
        self.queue.schedule(at, EventKind::NodeFailure { node })
    }

    pub fn sleep(&mut self, node: usize, until: SimTime) {
        let n = &mut self.nodes[node];
        n.sleep_until = n.sleep_until.max(until);
    }

    fn debit(&mut self, node: usize, joules: f64) -> f64 {
        let n = &mut self.nodes[node];
        let actual = joules.min(n.energy_j);
        n.energy_j -= actual;
        if n.energy_j <= 0.0 {
            n.energy_j = 0.0;
        }
        self.debits[node] += actual;
        actual
    }

    pub fn record(&mut self, rec: LogRecord) {
        self.log.push(rec);
    }

    pub fn log_drop(&mut self, node: usize, ty: PacketType, reason: Reason, meta: Option<TxMeta>) {
        let mut rec = LogRecord::new(self.now(), LogEvent::Drop, node, ty, reason);
        if let Some(m) = meta {
            rec = rec.meta(m);
        }
        self.log.push(rec);
    }

    pub fn log_select(&mut self, node: usize, chosen: usize, meta: TxMeta) {
        let rec = LogRecord::new(self.now(), LogEvent::Select, node, PacketType::Data, Reason::Select)
            .peer(chosen)
            .meta(meta);
        self.log.push(rec);
    }

    fn check_sender(&mut self, sender: usize, ty: PacketType, meta: TxMeta) -> Result<(), SendError> {
        let now = self.now();
        let n = &self.nodes[sender];
        let err = if !n.is_alive() {
            SendError::Depleted
        } else if !n.is_awake(now) {
            SendError::Asleep
        } else {
            return Ok(());
        };
        self.send_failures += 1;
        self.log_drop(sender, ty, Reason::SendFailure, Some(meta));
        Err(err)
    }

    fn transmit(&mut self, sender: usize, peer: Option<usize>, packet: &Packet, meta: TxMeta) -> Rc<[u8]> {
        let frame: Rc<[u8]> = codec::encode(packet).expect("protocols build valid packets").into();
        let cost = self.energy.tx_power_w * self.radio.airtime_s(frame.len());
        let spent = self.debit(sender, cost);
        let mut rec = LogRecord::new(self.now(), LogEvent::Tx, sender, packet.packet_type(), meta.reason)
            .bytes(frame.len())
            .energy(spent)
            .meta(meta);
        if let Some(p) = peer {
            rec = rec.peer(p);
        }
        self.log.push(rec);
        frame
    }

    fn try_deliver(&mut self, from: usize, to: usize, frame: &Rc<[u8]>, meta: TxMeta) -> bool {
        let now = self.now();
        if !self.nodes[to].can_radio(now) {
            return false;
        }
        let lqi = self.links.lqi(from, to).expect("in range");
        let p = match self.links.forced_loss(from, to) {
            Some(loss) => 1.0 - loss,
            None => self.radio.delivery_probability(lqi),
        };
        if self.channel.gen::<f64>() >= p {
            return false;
        }
        let at = now + self.radio.hop_latency(frame.len());
        self.queue
            .schedule(
                at,
                EventKind::FrameDelivery {
                    from,
                    target: to,
                    frame: frame.clone(),
                    lqi,
                    meta,
                },
            )
            .expect("future");
        true
    }

    /// Sends `packet` to every awake, powered node in range. Returns the
    /// receivers that were scheduled, in index order.
    pub fn broadcast(&mut self, sender: usize, packet: &Packet, meta: TxMeta) -> Result<Vec<usize>, SendError> {
        self.check_sender(sender, packet.packet_type(), meta)?;
        let frame = self.transmit(sender, None, packet, meta);
        let mut scheduled = Vec::new();
        for i in 0..self.links.neighbors(sender).len() {
            let to = self.links.neighbors(sender)[i];
            if self.try_deliver(sender, to, &frame, meta) {
                scheduled.push(to);
            }
        }
        Ok(scheduled)
    }

    /// Sends `packet` to `target` only. `Ok(false)` means the frame was
    /// transmitted but lost.
    pub fn unicast(&mut self, sender: usize, target: usize, packet: &Packet, meta: TxMeta) -> Result<bool, SendError> {
        if self.links.lqi(sender, target).is_none() {
            return Err(SendError::LinkBreak);
        }
        self.check_sender(sender, packet.packet_type(), meta)?;
        let frame = self.transmit(sender, Some(target), packet, meta);
        let ok = self.try_deliver(sender, target, &frame, meta);
        if !ok {
            let rec = LogRecord::new(self.now(), LogEvent::Drop, target, packet.packet_type(), Reason::Loss)
                .peer(sender)
                .bytes(frame.len())
                .meta(meta);
            self.log.push(rec);
        }
        Ok(ok)
    }

    fn handle_delivery<D: Dispatcher + ?Sized>(
        &mut self,
        d: &mut D,
        from: usize,
        target: usize,
        frame: Rc<[u8]>,
        lqi: LqiValue,
        meta: TxMeta,
    ) {
        let now = self.now();
        let ty = PacketType::from_wire(frame[0]).unwrap_or(PacketType::Data);
        let node = &self.nodes[target];
        if !node.can_radio(now) {
            let reason = if node.is_alive() { Reason::Asleep } else { Reason::Depleted };
            self.log_drop(target, ty, reason, Some(meta));
            return;
        }
        let cost = self.energy.rx_power_w * self.radio.airtime_s(frame.len());
        let spent = self.debit(target, cost);
        self.log.push(
            LogRecord::new(now, LogEvent::Rx, target, ty, meta.reason)
                .peer(from)
                .bytes(frame.len())
                .energy(spent)
                .meta(meta),
        );
        match codec::decode(&frame) {
            Ok(packet) => d.on_frame(self, target, from, lqi, packet),
            Err(_) => self.log_drop(target, ty, Reason::Malformed, Some(meta)),
        }
    }

    fn handle_traffic<D: Dispatcher + ?Sized>(&mut self, d: &mut D, source: usize) {
        let Some(plan) = self.traffic.clone() else {
            return;
        };
        let now = self.now();
        let next = now + plan.interval;
        if next <= plan.stop {
            self.queue
                .schedule(next, EventKind::TrafficTick { source })
                .expect("future");
        }
        let seq = self.data_seq[source];
        self.data_seq[source] = seq.wrapping_add(1);
        let origin = self.nodes[source].address;
        let payload: Vec<u8> = (0..plan.payload_bytes).map(|i| (seq as usize + i) as u8).collect();
        self.log.push(
            LogRecord::new(now, LogEvent::Gen, source, PacketType::Data, Reason::Traffic)
                .bytes(payload.len())
                .data(source as u16, seq),
        );
        // Sensing an event wakes a sleeping node's radio.
        let n = &mut self.nodes[source];
        if n.sleep_until > now {
            n.sleep_until = now;
        }
        let data = DataPacket {
            mesh: MeshHeader {
                hops_left: plan.hop_limit,
                final_dest: plan.dest,
                orig: origin,
            },
            seq,
            payload,
        };
        d.on_data(self, source, data);
    }

    fn dispatch<D: Dispatcher + ?Sized>(&mut self, d: &mut D, ev: SimEvent) {
        match ev.kind {
            EventKind::FrameDelivery {
                from,
                target,
                frame,
                lqi,
                meta,
            } => self.handle_delivery(d, from, target, frame, lqi, meta),
            EventKind::TimerFire { node, timer } => {
                if self.nodes[node].is_alive() {
                    d.on_timer(self, node, timer);
                }
            }
            EventKind::TrafficTick { source } => self.handle_traffic(d, source),
            EventKind::NodeFailure { node } => self.nodes[node].disabled = true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub end_time: SimTime,
    pub dispatched: u64,
}

/// Dispatches events in `(at, seq)` order until the queue drains or the next
/// event lies beyond `end_time`. The dispatcher's `on_start` runs on the
/// first call only.
pub fn run_until<D: Dispatcher + ?Sized>(world: &mut World, end_time: SimTime, dispatcher: &mut D) -> RunSummary {
    if !world.started {
        world.started = true;
        dispatcher.on_start(world);
    }
    let mut dispatched = 0;
    while let Some(at) = world.queue.peek_time() {
        if at > end_time {
            break;
        }
        let ev = world.queue.pop().expect("peeked");
        world.dispatch(dispatcher, ev);
        dispatched += 1;
    }
    RunSummary {
        end_time: world.now(),
        dispatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{AckPacket, HelloPacket};
    use crate::geo::Location;
    use crate::node::NodeRole;

    #[test]
    fn queue_orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        let k = |source| EventKind::TrafficTick { source };
        q.schedule(SimTime(5), k(1)).unwrap();
        q.schedule(SimTime(3), k(2)).unwrap();
        q.schedule(SimTime(3), k(3)).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.at, e.kind)).collect();
        assert_eq!(
            order,
            vec![(SimTime(3), k(2)), (SimTime(3), k(3)), (SimTime(5), k(1))]
        );
        assert_eq!(q.now(), SimTime(5));
        assert_eq!(
            q.schedule(SimTime(4), k(0)),
            Err(ScheduleError {
                at: SimTime(4),
                now: SimTime(5)
            })
        );
        assert!(q.schedule(SimTime(5), k(0)).is_ok());
    }

    #[test]
    fn airtime_and_energy_arithmetic() {
        let radio = RadioModel::default();
        let energy = EnergyModel::default();
        let air = radio.airtime_s(14);
        assert!((air - 0.000448).abs() < 1e-15);
        assert!((energy.tx_power_w * air - 8.96e-6).abs() < 1e-18);
        assert_eq!(radio.hop_latency(14), SimTime(2448));
    }

    fn line(spacing: f64, n: usize) -> Vec<NodeState> {
        (0..n)
            .map(|i| {
                let role = if i == 0 { NodeRole::EdgeRouter } else { NodeRole::LocalEdgeRouter };
                NodeState::new(NodeAddress::Short(i as u16), role, Location::new(i as f64 * spacing, 0.0), 0.0)
            })
            .collect()
    }

    fn lossless() -> RadioModel {
        RadioModel {
            loss_probability: 0.0,
            noise_amplitude: 0,
            lqi_prr_knee: 0,
            ..RadioModel::default()
        }
    }

    struct Recorder(Vec<(SimTime, usize, usize, Packet)>);

    impl Dispatcher for Recorder {
        fn on_frame(&mut self, w: &mut World, node: usize, from: usize, _lqi: LqiValue, p: Packet) {
            self.0.push((w.now(), node, from, p));
        }
        fn on_timer(&mut self, _: &mut World, _: usize, _: TimerId) {}
        fn on_data(&mut self, _: &mut World, _: usize, _: DataPacket) {}
    }

    fn hello(i: u16) -> Packet {
        Packet::Hello(HelloPacket {
            addr: NodeAddress::Short(i),
        })
    }

    #[test]
    fn broadcast_reaches_in_range_nodes_only() {
        let mut w = World::new(line(30.0, 3), lossless(), EnergyModel::default(), 1, 2, "t");
        let got = w.broadcast(1, &hello(1), TxMeta::control(Reason::Hello)).unwrap();
        assert_eq!(got, vec![0, 2]);
        let got = w.broadcast(0, &hello(0), TxMeta::control(Reason::Hello)).unwrap();
        assert_eq!(got, vec![1]);
        let mut rec = Recorder(Vec::new());
        run_until(&mut w, SimTime::from_secs_f64(1.0), &mut rec);
        assert_eq!(rec.0.len(), 3);
        assert_eq!(rec.0[0].0, RadioModel::default().hop_latency(4));
    }

    #[test]
    fn unicast_cases() {
        let mut w = World::new(line(30.0, 3), lossless(), EnergyModel::default(), 1, 2, "t");
        let ack = Packet::Ack(AckPacket { seq: 1 });
        let meta = TxMeta::control(Reason::Ack);
        assert_eq!(w.unicast(0, 2, &ack, meta), Err(SendError::LinkBreak));
        assert_eq!(w.unicast(0, 1, &ack, meta), Ok(true));
        w.links.set_forced_loss(0, 1, 1.0);
        let before = w.nodes[0].energy_j;
        assert_eq!(w.unicast(0, 1, &ack, meta), Ok(false));
        assert!(w.nodes[0].energy_j < before);
        let mut rec = Recorder(Vec::new());
        run_until(&mut w, SimTime::MAX, &mut rec);
        assert_eq!(rec.0.len(), 1);
    }

    #[test]
    fn asleep_sender_and_receiver() {
        let mut w = World::new(line(30.0, 3), lossless(), EnergyModel::default(), 1, 2, "t");
        w.sleep(1, SimTime(1_000_000));
        assert_eq!(
            w.broadcast(1, &hello(1), TxMeta::control(Reason::Hello)),
            Err(SendError::Asleep)
        );
        assert_eq!(w.send_failures(), 1);
        // Sleeping receivers are skipped.
        assert_eq!(w.broadcast(0, &hello(0), TxMeta::control(Reason::Hello)), Ok(vec![]));
        w.nodes[2].energy_j = 0.0;
        assert_eq!(
            w.broadcast(2, &hello(2), TxMeta::control(Reason::Hello)),
            Err(SendError::Depleted)
        );
    }

    #[test]
    fn run_until_boundaries() {
        let mut w = World::new(line(30.0, 2), lossless(), EnergyModel::default(), 1, 2, "t");
        let mut rec = Recorder(Vec::new());
        let s = run_until(&mut w, SimTime(10), &mut rec);
        assert_eq!(s, RunSummary { end_time: SimTime::ZERO, dispatched: 0 });

        w.schedule(SimTime(11), EventKind::NodeFailure { node: 1 }).unwrap();
        w.schedule(SimTime(10), EventKind::TimerFire { node: 0, timer: TimerId(0) }).unwrap();
        let s = run_until(&mut w, SimTime(10), &mut rec);
        assert_eq!(s.dispatched, 1);
        assert!(!w.nodes[1].disabled);
    }

    #[test]
    fn link_table_independent_of_node_count() {
        let radio = RadioModel::default();
        let a = LinkTable::build(&line(10.0, 3), &radio, 77);
        let b = LinkTable::build(&line(10.0, 5), &radio, 77);
        assert_eq!(a.lqi(0, 1), b.lqi(0, 1));
        assert_eq!(a.lqi(1, 2), b.lqi(2, 1));
        assert_eq!(a.neighbors(0), &[1, 2]);
    }

    #[test]
    fn delivery_probability_curve() {
        let flat = RadioModel::default();
        for lqi in [0, 64, 255] {
            assert!((flat.delivery_probability(LqiValue(lqi)) - 0.9).abs() < 1e-12);
        }
        let r = RadioModel {
            lqi_prr_knee: 128,
            ..RadioModel::default()
        };
        assert!((r.delivery_probability(LqiValue(255)) - 0.9).abs() < 1e-12);
        assert!((r.delivery_probability(LqiValue(64)) - 0.45).abs() < 1e-12);
        assert_eq!(r.delivery_probability(LqiValue(0)), 0.0);
        assert_eq!(lossless().delivery_probability(LqiValue(0)), 1.0);
    }
}

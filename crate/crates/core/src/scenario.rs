//! Scenario configuration and the experiment runner.
//!
//! A scenario is a TOML document. Every (protocol, seed) cell builds its own
//! deployment, link table and traffic schedule from independent sub-streams of
//! the seed, so the protocols see identical worlds and never perturb each
//! other's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::elbrp::{Elbrp, ElbrpConfig};
use crate::engine::{run_until, sub_seed, Dispatcher, EnergyModel, RadioModel, RunSummary, TrafficPlan, World};
use crate::forward::HopConfig;
use crate::geo::{euclidean_distance, Location, Terrain};
use crate::load::{Load, LoadConfig};
use crate::metrics::{compute_metrics, energy_consumed, MetricsRow, OverheadPolicy, RunMetrics};
use crate::node::{deploy_nodes, DeployError, NodeAddress, NodeRole, NodeState};
use crate::time::SimTime;
use crate::trace::PacketLog;

const STREAM_DEPLOYMENT: u64 = 0;
const STREAM_LINKS: u64 = 1;
const STREAM_CHANNEL: u64 = 2;
const STREAM_TRAFFIC: u64 = 3;
const STREAM_PROTOCOL: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Elbrp,
    Load,
}

impl ProtocolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::Elbrp => "elbrp",
            ProtocolKind::Load => "load",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSection {
    pub width: f64,
    pub height: f64,
}

impl Default for TerrainSection {
    fn default() -> Self {
        Self {
            width: 200.0,
            height: 200.0,
        }
    }
}

/// A hand-placed node; its address is its position in the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub x: f64,
    pub y: f64,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentSection {
    pub node_count: usize,
    pub ler_fraction: f64,
    /// `[x, y]`; the terrain center when absent.
    pub er_position: Option<[f64; 2]>,
    /// Replaces the random deployment when non-empty. Node 0 must be the ER.
    pub nodes: Vec<NodeSpec>,
}

impl Default for DeploymentSection {
    fn default() -> Self {
        Self {
            node_count: 50,
            ler_fraction: 0.9,
            er_position: None,
            nodes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub radio_range_m: f64,
    pub loss_probability: f64,
    pub noise_amplitude: u32,
    pub lqi_prr_knee: u8,
    pub bitrate_bps: f64,
    pub per_hop_proc_delay_s: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        let r = RadioModel::default();
        Self {
            radio_range_m: r.radio_range,
            loss_probability: r.loss_probability,
            noise_amplitude: r.noise_amplitude,
            lqi_prr_knee: r.lqi_prr_knee,
            bitrate_bps: r.bitrate_bps,
            per_hop_proc_delay_s: r.per_hop_proc_delay_s,
        }
    }
}

impl RadioSection {
    pub fn model(&self) -> RadioModel {
        RadioModel {
            radio_range: self.radio_range_m,
            loss_probability: self.loss_probability,
            bitrate_bps: self.bitrate_bps,
            per_hop_proc_delay_s: self.per_hop_proc_delay_s,
            noise_amplitude: self.noise_amplitude,
            lqi_prr_knee: self.lqi_prr_knee,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub rate_pps: f64,
    pub payload_bytes: usize,
    /// Number of sources, taken from the RFDs farthest from the ER.
    pub sources: usize,
    /// Explicit source indices; overrides `sources` when non-empty.
    pub source_nodes: Vec<usize>,
    pub start_s: f64,
    pub stop_s: f64,
    pub hop_limit: u8,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            rate_pps: 5.0,
            payload_bytes: 81,
            sources: 3,
            source_nodes: Vec::new(),
            start_s: 1.0,
            stop_s: 490.0,
            hop_limit: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopSection {
    pub ack_timeout_s: f64,
    pub max_retries: u8,
    pub queue_limit: usize,
}

impl Default for HopSection {
    fn default() -> Self {
        let h = HopConfig::default();
        Self {
            ack_timeout_s: h.ack_timeout.as_secs_f64(),
            max_retries: h.max_retries,
            queue_limit: h.queue_limit,
        }
    }
}

impl HopSection {
    pub fn config(&self) -> HopConfig {
        HopConfig {
            ack_timeout: SimTime::from_secs_f64(self.ack_timeout_s),
            max_retries: self.max_retries,
            queue_limit: self.queue_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElbrpSection {
    pub collect_window_s: f64,
    pub sleep_window_s: f64,
    pub staleness_s: f64,
}

impl Default for ElbrpSection {
    fn default() -> Self {
        let c = ElbrpConfig::default();
        Self {
            collect_window_s: c.collect_window.as_secs_f64(),
            sleep_window_s: c.sleep_window.as_secs_f64(),
            staleness_s: c.staleness.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadSection {
    pub weak_threshold: u8,
    pub route_lifetime_s: f64,
    pub discovery_lifetime_s: f64,
    pub hello: bool,
    pub hello_period_s: f64,
}

impl Default for LoadSection {
    fn default() -> Self {
        let c = LoadConfig::default();
        Self {
            weak_threshold: c.weak_threshold,
            route_lifetime_s: c.route_lifetime.as_secs_f64(),
            discovery_lifetime_s: c.discovery_lifetime.as_secs_f64(),
            hello: c.hello,
            hello_period_s: c.hello_period.as_secs_f64(),
        }
    }
}

/// Disables `node` at `at_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub node: usize,
    pub at_s: f64,
}

/// Overrides the loss probability of one (symmetric) link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: usize,
    pub b: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub seeds: Vec<u64>,
    pub protocols: Vec<ProtocolKind>,
    pub terrain: TerrainSection,
    pub deployment: DeploymentSection,
    pub radio: RadioSection,
    pub energy: EnergyModel,
    pub traffic: TrafficSection,
    pub hop: HopSection,
    pub elbrp: ElbrpSection,
    pub load: LoadSection,
    pub overhead: OverheadPolicy,
    pub faults: Vec<Fault>,
    pub links: Vec<LinkOverride>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_s: 500.0,
            seeds: vec![1],
            protocols: vec![ProtocolKind::Elbrp, ProtocolKind::Load],
            terrain: TerrainSection::default(),
            deployment: DeploymentSection::default(),
            radio: RadioSection::default(),
            energy: EnergyModel::default(),
            traffic: TrafficSection::default(),
            hop: HopSection::default(),
            elbrp: ElbrpSection::default(),
            load: LoadSection::default(),
            overhead: OverheadPolicy::default(),
            faults: Vec::new(),
            links: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be non-negative, got {v}")))
    }
}

fn probability(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("duration_s", self.duration_s)?;
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.protocols.is_empty() {
            return Err(invalid("protocols", "at least one protocol is required"));
        }
        positive("terrain.width", self.terrain.width)?;
        positive("terrain.height", self.terrain.height)?;
        let d = &self.deployment;
        probability("deployment.ler_fraction", d.ler_fraction)?;
        if d.nodes.is_empty() {
            if d.node_count < 2 {
                return Err(invalid("deployment.node_count", "at least 2 nodes are required"));
            }
            if d.node_count > u16::MAX as usize {
                return Err(invalid("deployment.node_count", "exceeds the short address space"));
            }
        } else {
            if d.nodes.len() < 2 {
                return Err(invalid("deployment.nodes", "at least 2 nodes are required"));
            }
            if d.nodes[0].role != NodeRole::EdgeRouter {
                return Err(invalid("deployment.nodes", "node 0 must be the edge router"));
            }
            if d.nodes[1..].iter().any(|n| n.role == NodeRole::EdgeRouter) {
                return Err(invalid("deployment.nodes", "only node 0 may be an edge router"));
            }
            if d.nodes.iter().any(|n| !self.terrain().contains(Location::new(n.x, n.y))) {
                return Err(invalid("deployment.nodes", "node outside the terrain"));
            }
        }
        if let Some([x, y]) = d.er_position {
            if !self.terrain().contains(Location::new(x, y)) {
                return Err(invalid("deployment.er_position", "outside the terrain"));
            }
        }
        let r = &self.radio;
        positive("radio.radio_range_m", r.radio_range_m)?;
        probability("radio.loss_probability", r.loss_probability)?;
        positive("radio.bitrate_bps", r.bitrate_bps)?;
        non_negative("radio.per_hop_proc_delay_s", r.per_hop_proc_delay_s)?;
        if r.noise_amplitude > 255 {
            return Err(invalid("radio.noise_amplitude", "must be at most 255"));
        }
        positive("energy.tx_power_w", self.energy.tx_power_w)?;
        positive("energy.rx_power_w", self.energy.rx_power_w)?;
        positive("energy.initial_j", self.energy.initial_j)?;
        let t = &self.traffic;
        positive("traffic.rate_pps", t.rate_pps)?;
        if t.payload_bytes > crate::codec::MAX_PAYLOAD {
            return Err(invalid("traffic.payload_bytes", format!("at most {} bytes", crate::codec::MAX_PAYLOAD)));
        }
        non_negative("traffic.start_s", t.start_s)?;
        non_negative("traffic.stop_s", t.stop_s)?;
        if t.stop_s < t.start_s {
            return Err(invalid("traffic.stop_s", "must not precede traffic.start_s"));
        }
        if t.hop_limit == 0 {
            return Err(invalid("traffic.hop_limit", "must be positive"));
        }
        let n = self.node_count();
        if t.source_nodes.iter().any(|&s| s == 0 || s >= n) {
            return Err(invalid("traffic.source_nodes", "must name non-ER nodes"));
        }
        positive("hop.ack_timeout_s", self.hop.ack_timeout_s)?;
        if self.hop.max_retries == 0 {
            return Err(invalid("hop.max_retries", "must be positive"));
        }
        if self.hop.queue_limit == 0 {
            return Err(invalid("hop.queue_limit", "must be positive"));
        }
        positive("elbrp.collect_window_s", self.elbrp.collect_window_s)?;
        non_negative("elbrp.sleep_window_s", self.elbrp.sleep_window_s)?;
        positive("elbrp.staleness_s", self.elbrp.staleness_s)?;
        positive("load.route_lifetime_s", self.load.route_lifetime_s)?;
        positive("load.discovery_lifetime_s", self.load.discovery_lifetime_s)?;
        positive("load.hello_period_s", self.load.hello_period_s)?;
        for f in &self.faults {
            if f.node >= n {
                return Err(invalid("faults.node", format!("no node {}", f.node)));
            }
            non_negative("faults.at_s", f.at_s)?;
        }
        for l in &self.links {
            if l.a >= n || l.b >= n || l.a == l.b {
                return Err(invalid("links", format!("bad pair ({}, {})", l.a, l.b)));
            }
            probability("links.loss", l.loss)?;
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        if self.deployment.nodes.is_empty() {
            self.deployment.node_count
        } else {
            self.deployment.nodes.len()
        }
    }

    pub fn terrain(&self) -> Terrain {
        Terrain {
            width: self.terrain.width,
            height: self.terrain.height,
        }
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn elbrp_config(&self) -> ElbrpConfig {
        ElbrpConfig {
            collect_window: SimTime::from_secs_f64(self.elbrp.collect_window_s),
            sleep_window: SimTime::from_secs_f64(self.elbrp.sleep_window_s),
            staleness: SimTime::from_secs_f64(self.elbrp.staleness_s),
            hop: self.hop.config(),
        }
    }

    pub fn load_config(&self) -> LoadConfig {
        LoadConfig {
            weak_threshold: self.load.weak_threshold,
            route_lifetime: SimTime::from_secs_f64(self.load.route_lifetime_s),
            discovery_lifetime: SimTime::from_secs_f64(self.load.discovery_lifetime_s),
            hello: self.load.hello,
            hello_period: SimTime::from_secs_f64(self.load.hello_period_s),
            hop: self.hop.config(),
        }
    }

    /// The deployment for `seed`; identical for every protocol.
    pub fn deploy(&self, seed: u64) -> Result<Vec<NodeState>, DeployError> {
        let d = &self.deployment;
        if !d.nodes.is_empty() {
            return Ok(d
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| NodeState::new(NodeAddress::Short(i as u16), n.role, Location::new(n.x, n.y), 0.0))
                .collect());
        }
        deploy_nodes(
            d.node_count,
            self.terrain(),
            d.ler_fraction,
            sub_seed(seed, STREAM_DEPLOYMENT),
            d.er_position.map(|[x, y]| Location::new(x, y)),
        )
    }
}

/// Traffic sources: explicit indices, or the RFDs farthest from the ER
/// (ties broken by lower index). When there are too few RFDs the farthest
/// LERs fill the remaining slots.
pub fn pick_sources(nodes: &[NodeState], traffic: &TrafficSection) -> Vec<usize> {
    if !traffic.source_nodes.is_empty() {
        return traffic.source_nodes.clone();
    }
    let er = nodes[0].location;
    let mut ranked: Vec<(bool, f64, usize)> = nodes
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, n)| n.role != NodeRole::EdgeRouter)
        .map(|(i, n)| (n.role != NodeRole::ReducedFunctionDevice, euclidean_distance(er, n.location), i))
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    ranked.into_iter().take(traffic.sources).map(|(_, _, i)| i).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("deployment failed: {0}")]
    Deploy(#[from] DeployError),
    #[error("simulation aborted: {0}")]
    Aborted(String),
}

/// Builds the world of one cell and schedules traffic and faults.
pub fn build_world(cfg: &ScenarioConfig, protocol: ProtocolKind, seed: u64) -> Result<World, RunError> {
    let nodes = cfg.deploy(seed)?;
    let mut world = World::new(
        nodes,
        cfg.radio.model(),
        cfg.energy,
        sub_seed(seed, STREAM_LINKS),
        sub_seed(seed, STREAM_CHANNEL),
        protocol.as_str(),
    );
    for l in &cfg.links {
        world.links.set_forced_loss(l.a, l.b, l.loss);
    }
    let t = &cfg.traffic;
    let interval = SimTime::from_secs_f64(1.0 / t.rate_pps).max(SimTime(1));
    world.traffic = Some(TrafficPlan {
        dest: world.nodes[0].address,
        interval,
        stop: SimTime::from_secs_f64(t.stop_s),
        payload_bytes: t.payload_bytes,
        hop_limit: t.hop_limit,
    });
    // Sources start at independent phases within one interval.
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_TRAFFIC));
    let start = SimTime::from_secs_f64(t.start_s);
    for s in pick_sources(&world.nodes, t) {
        let phase = SimTime(rng.gen_range(0..interval.as_micros()));
        let at = start + phase;
        if at <= world.traffic.as_ref().map_or(SimTime::ZERO, |p| p.stop) {
            world.schedule_traffic(s, at).expect("future");
        }
    }
    for f in &cfg.faults {
        world.schedule_failure(f.node, SimTime::from_secs_f64(f.at_s)).expect("future");
    }
    Ok(world)
}

/// The protocol state of a finished cell, for inspection.
pub enum ProtocolState {
    Elbrp(Elbrp),
    Load(Load),
}

impl ProtocolState {
    pub fn new(cfg: &ScenarioConfig, protocol: ProtocolKind, seed: u64) -> Self {
        let n = cfg.node_count();
        match protocol {
            ProtocolKind::Elbrp => ProtocolState::Elbrp(Elbrp::new(cfg.elbrp_config(), n)),
            ProtocolKind::Load => ProtocolState::Load(Load::new(cfg.load_config(), n, sub_seed(seed, STREAM_PROTOCOL))),
        }
    }

    fn dispatcher(&mut self) -> &mut dyn Dispatcher {
        match self {
            ProtocolState::Elbrp(p) => p,
            ProtocolState::Load(p) => p,
        }
    }
}

pub struct CellOutcome {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub world: World,
    pub state: ProtocolState,
    pub summary: RunSummary,
    pub metrics: RunMetrics,
}

impl CellOutcome {
    pub fn row(&self) -> MetricsRow {
        MetricsRow {
            protocol: self.protocol.as_str().to_string(),
            seed: self.seed,
            metrics: self.metrics.clone(),
        }
    }
}

/// Runs one (protocol, seed) cell to completion.
pub fn run_cell(cfg: &ScenarioConfig, protocol: ProtocolKind, seed: u64) -> Result<CellOutcome, RunError> {
    let mut world = build_world(cfg, protocol, seed)?;
    let mut state = ProtocolState::new(cfg, protocol, seed);
    let summary = run_until(&mut world, cfg.duration(), state.dispatcher());
    let energy = energy_consumed(&world.nodes, cfg.energy.initial_j);
    let metrics = compute_metrics(&world.log, cfg.duration(), energy, &cfg.overhead);
    Ok(CellOutcome {
        protocol,
        seed,
        world,
        state,
        summary,
        metrics,
    })
}

/// What survives of a cell once its world is dropped.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: MetricsRow,
    pub log: Option<PacketLog>,
    /// Σ of the engine's per-node debit counters.
    pub engine_debits_j: f64,
}

/// One cell of the matrix and how it ended.
#[derive(Debug)]
pub struct CellRun {
    pub seed: u64,
    pub protocol: ProtocolKind,
    pub result: Result<CellResult, RunError>,
}

/// Runs every (seed, protocol) cell, on up to `threads` worker threads.
/// Results come back in seed-major, protocol-minor order regardless of
/// scheduling. A cell that aborts (a panic inside the engine or a protocol)
/// is reported as [`RunError::Aborted`] without taking the others down.
pub fn run_matrix(cfg: &ScenarioConfig, threads: usize, keep_logs: bool) -> Vec<CellRun> {
    let cells: Vec<(u64, ProtocolKind)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.protocols.iter().map(move |&p| (s, p)))
        .collect();
    let run = |&(seed, protocol): &(u64, ProtocolKind)| -> CellRun {
        let attempt = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            let out = run_cell(cfg, protocol, seed)?;
            Ok(CellResult {
                row: out.row(),
                engine_debits_j: out.world.debits().iter().sum(),
                log: keep_logs.then(|| out.world.log.clone()),
            })
        }));
        let result = attempt.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Err(RunError::Aborted(msg))
        });
        CellRun { seed, protocol, result }
    };
    if threads <= 1 {
        return cells.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| cells.par_iter().map(run).collect())
}

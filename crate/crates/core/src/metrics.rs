//! Performance metrics recomputed from a finished run's packet log.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{self, Write};

use crate::codec::PacketType;
use crate::node::NodeState;
use crate::time::SimTime;
use crate::trace::{LogEvent, PacketLog};

/// Which transmissions count as routing control. RREQ and RREP always do;
/// ACK and DATA never do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadPolicy {
    pub include_rerr: bool,
    pub include_beacon: bool,
    pub include_hello: bool,
}

impl Default for OverheadPolicy {
    fn default() -> Self {
        Self {
            include_rerr: true,
            include_beacon: true,
            include_hello: true,
        }
    }
}

impl OverheadPolicy {
    pub fn counts(&self, ty: PacketType) -> bool {
        match ty {
            PacketType::Rreq | PacketType::Rrep | PacketType::LoadRreq | PacketType::LoadRrep => true,
            PacketType::Rerr => self.include_rerr,
            PacketType::ErBeacon => self.include_beacon,
            PacketType::Hello => self.include_hello,
            PacketType::Data | PacketType::Ack => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `None` when nothing was sent.
    pub pdr: Option<f64>,
    /// `None` when nothing was delivered.
    pub avg_e2e_delay_s: Option<f64>,
    pub throughput_bps: f64,
    pub control_overhead: u64,
    pub avg_hopcount: Option<f64>,
    pub energy_consumed_j: f64,
    pub sent: u64,
    pub delivered: u64,
}

pub fn compute_pdr(log: &PacketLog) -> Option<f64> {
    let (sent, delivered) = sent_delivered(log);
    ratio(delivered, sent)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn sent_delivered(log: &PacketLog) -> (u64, u64) {
    let mut sent = 0;
    let mut delivered = 0;
    for r in log {
        match r.event {
            LogEvent::Gen => sent += 1,
            LogEvent::Deliver => delivered += 1,
            _ => {}
        }
    }
    (sent, delivered)
}

/// Mean end-to-end delay in seconds and mean hop count over delivered packets.
pub fn compute_delay_and_hops(log: &PacketLog) -> (Option<f64>, Option<f64>) {
    let mut born: HashMap<(u16, u16), SimTime> = HashMap::new();
    let mut delay_sum = 0.0;
    let mut hop_sum = 0u64;
    let mut n = 0u64;
    for r in log {
        let (Some(o), Some(s)) = (r.origin, r.seq) else {
            continue;
        };
        match r.event {
            // Sequence numbers wrap; the newest origination wins.
            LogEvent::Gen => {
                born.insert((o, s), r.time);
            }
            LogEvent::Deliver => {
                if let Some(t0) = born.get(&(o, s)) {
                    delay_sum += (r.time - *t0).as_secs_f64();
                    hop_sum += r.hops.unwrap_or(0) as u64;
                    n += 1;
                }
            }
            _ => {}
        }
    }
    if n == 0 {
        return (None, None);
    }
    (Some(delay_sum / n as f64), Some(hop_sum as f64 / n as f64))
}

/// Control transmissions, delivered payload throughput and the energy
/// recorded against transmissions and receptions in the log.
pub fn compute_overhead_throughput_energy(log: &PacketLog, duration: SimTime, policy: &OverheadPolicy) -> (u64, f64, f64) {
    let mut control = 0;
    let mut bits = 0u64;
    let mut energy = 0.0;
    for r in log {
        match r.event {
            LogEvent::Tx if policy.counts(r.packet_type) => control += 1,
            LogEvent::Deliver => bits += r.bytes as u64 * 8,
            _ => {}
        }
        energy += r.energy_j;
    }
    let secs = duration.as_secs_f64();
    let bps = if secs > 0.0 { bits as f64 / secs } else { 0.0 };
    (control, bps, energy)
}

/// Σ (initial − remaining) over all nodes.
pub fn energy_consumed(nodes: &[NodeState], initial_j: f64) -> f64 {
    nodes.iter().map(|n| initial_j - n.energy_j).sum()
}

/// Relative difference, with an absolute floor for values near zero.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn compute_metrics(log: &PacketLog, duration: SimTime, energy_consumed_j: f64, policy: &OverheadPolicy) -> RunMetrics {
    let (sent, delivered) = sent_delivered(log);
    let (avg_e2e_delay_s, avg_hopcount) = compute_delay_and_hops(log);
    let (control_overhead, throughput_bps, _) = compute_overhead_throughput_energy(log, duration, policy);
    RunMetrics {
        pdr: ratio(delivered, sent),
        avg_e2e_delay_s,
        throughput_bps,
        control_overhead,
        avg_hopcount,
        energy_consumed_j,
        sent,
        delivered,
    }
}

pub const METRICS_CSV_HEADER: &str =
    "protocol,seed,pdr,avg_e2e_delay_s,throughput_bps,control_overhead,avg_hopcount,energy_consumed_j,sent,delivered";

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// One result row: a protocol run on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub protocol: String,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.protocol,
            self.seed,
            na(m.pdr),
            na(m.avg_e2e_delay_s),
            m.throughput_bps,
            m.control_overhead,
            na(m.avg_hopcount),
            m.energy_consumed_j,
            m.sent,
            m.delivered
        )
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Mean and sample standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let xs: Vec<f64> = values.into_iter().flatten().collect();
        let n = xs.len();
        if n == 0 {
            return Self { mean: None, std: None, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub protocol: String,
    pub runs: usize,
    pub pdr: Stat,
    pub avg_e2e_delay_s: Stat,
    pub throughput_bps: Stat,
    pub control_overhead: Stat,
    pub avg_hopcount: Stat,
    pub energy_consumed_j: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocols: Vec<ProtocolSummary>,
    /// Mean ELBRP control overhead over mean LOAD control overhead.
    pub overhead_ratio_elbrp_over_load: Option<f64>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Groups rows by protocol, in order of first appearance.
pub fn summarize(rows: &[MetricsRow]) -> Summary {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.protocol.as_str()) {
            order.push(&r.protocol);
        }
    }
    let protocols: Vec<ProtocolSummary> = order
        .iter()
        .map(|p| {
            let ms: Vec<&RunMetrics> = rows.iter().filter(|r| r.protocol == *p).map(|r| &r.metrics).collect();
            ProtocolSummary {
                protocol: p.to_string(),
                runs: ms.len(),
                pdr: Stat::of(ms.iter().map(|m| m.pdr)),
                avg_e2e_delay_s: Stat::of(ms.iter().map(|m| m.avg_e2e_delay_s)),
                throughput_bps: Stat::of(ms.iter().map(|m| Some(m.throughput_bps))),
                control_overhead: Stat::of(ms.iter().map(|m| Some(m.control_overhead as f64))),
                avg_hopcount: Stat::of(ms.iter().map(|m| m.avg_hopcount)),
                energy_consumed_j: Stat::of(ms.iter().map(|m| Some(m.energy_consumed_j))),
            }
        })
        .collect();
    let mean_overhead = |name: &str| {
        protocols
            .iter()
            .find(|s| s.protocol == name)
            .and_then(|s| s.control_overhead.mean)
    };
    let overhead_ratio_elbrp_over_load = match (mean_overhead("elbrp"), mean_overhead("load")) {
        (Some(e), Some(l)) if l > 0.0 => Some(e / l),
        _ => None,
    };
    Summary {
        protocols,
        overhead_ratio_elbrp_over_load,
    }
}

//! Metric definitions checked against small runs with known answers.

use elbrp_core::codec::PacketType;
use elbrp_core::scenario::{run_cell, NodeSpec, ProtocolKind, ScenarioConfig};
use elbrp_core::trace::LogEvent;
use elbrp_core::{euclidean_distance, NodeRole};

use NodeRole::{EdgeRouter as Er, LocalEdgeRouter as Ler, ReducedFunctionDevice as Rfd};

#[test]
fn one_discovery_with_three_replying_lers() {
    // The source is out of the ER's range but hears three LERs, each closer
    // to the ER than itself, so all three reply to its one RREQ.
    let mut cfg = ScenarioConfig::default();
    cfg.deployment.nodes = [(10.0, 50.0, Er), (40.0, 30.0, Ler), (40.0, 50.0, Ler), (40.0, 70.0, Ler), (70.0, 50.0, Rfd)]
        .iter()
        .map(|&(x, y, role)| NodeSpec { x, y, role })
        .collect();
    cfg.radio.loss_probability = 0.0;
    cfg.radio.noise_amplitude = 0;
    cfg.traffic.source_nodes = vec![4];
    cfg.traffic.rate_pps = 100.0;
    cfg.traffic.start_s = 1.0;
    cfg.traffic.stop_s = 1.01;
    cfg.duration_s = 5.0;
    let out = run_cell(&cfg, ProtocolKind::Elbrp, 3).unwrap();
    let tx = |ty| {
        out.world
            .log
            .iter()
            .filter(|r| r.event == LogEvent::Tx && r.packet_type == ty && r.node == 4)
            .count()
    };
    assert_eq!(tx(PacketType::Rreq), 1);
    let rreps = out
        .world
        .log
        .iter()
        .filter(|r| r.event == LogEvent::Tx && r.packet_type == PacketType::Rrep && r.peer == Some(4))
        .count();
    assert_eq!(rreps, 3);
    assert!(out.metrics.control_overhead >= 4);
    assert_eq!(out.metrics.pdr, Some(1.0));
}

#[test]
fn idle_network_counts_only_the_beacon_flood() {
    let mut cfg = ScenarioConfig::default();
    cfg.radio.loss_probability = 0.0;
    cfg.traffic.sources = 0;
    cfg.duration_s = 20.0;
    for seed in 1..=5 {
        // Every node connected to the ER forwards the beacon exactly once.
        let nodes = cfg.deploy(seed).unwrap();
        let range = cfg.radio.radio_range_m;
        let mut reached = vec![false; nodes.len()];
        let mut stack = vec![0];
        reached[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..nodes.len() {
                if !reached[v] && euclidean_distance(nodes[u].location, nodes[v].location) <= range {
                    reached[v] = true;
                    stack.push(v);
                }
            }
        }
        let component = reached.iter().filter(|&&r| r).count() as u64;

        let out = run_cell(&cfg, ProtocolKind::Elbrp, seed).unwrap();
        let m = &out.metrics;
        assert_eq!(m.control_overhead, component, "seed {seed}");
        assert_eq!(m.throughput_bps, 0.0);
        assert_eq!((m.sent, m.delivered), (0, 0));
        assert_eq!(m.pdr, None);
        assert_eq!(m.avg_e2e_delay_s, None);

        let load = run_cell(&cfg, ProtocolKind::Load, seed).unwrap();
        assert_eq!(load.metrics.control_overhead, 0);
        assert_eq!(load.metrics.energy_consumed_j, 0.0);
    }
}

#[test]
fn lossless_grid_delivers_everything() {
    let mut cfg = ScenarioConfig::default();
    cfg.deployment.nodes = (0..16)
        .map(|i| NodeSpec {
            x: 10.0 + 30.0 * (i % 4) as f64,
            y: 10.0 + 30.0 * (i / 4) as f64,
            role: if i == 0 { Er } else { Ler },
        })
        .collect();
    cfg.radio.loss_probability = 0.0;
    cfg.traffic.source_nodes = vec![15, 12, 3];
    cfg.traffic.stop_s = 20.0;
    cfg.duration_s = 25.0;
    for p in [ProtocolKind::Elbrp, ProtocolKind::Load] {
        let out = run_cell(&cfg, p, 7).unwrap();
        assert!(out.metrics.sent > 0);
        assert_eq!(out.metrics.pdr, Some(1.0), "{p:?}");
    }
}

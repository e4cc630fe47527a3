//! Shared fixtures for the criterion benches.

use elbrp_core::codec::{DataPacket, MeshHeader, RreqPacket, WireLocation};
use elbrp_core::{NodeAddress, Packet, ScenarioConfig};

pub fn sample_rreq() -> Packet {
    Packet::Rreq(RreqPacket {
        dest_addr: NodeAddress::Short(0),
        dest_loc: WireLocation { x_m: 100, y_m: 100 },
        orig_addr: NodeAddress::Extended(0x0011_2233_4455_6677),
        orig_loc: WireLocation { x_m: 7, y_m: 300 },
    })
}

pub fn sample_data() -> Packet {
    Packet::Data(DataPacket {
        mesh: MeshHeader {
            hops_left: 32,
            final_dest: NodeAddress::Short(0),
            orig: NodeAddress::Short(17),
        },
        seq: 4242,
        payload: (0..81u8).collect(),
    })
}

/// The default scenario cut down to `duration_s` seconds of traffic.
pub fn short_scenario(duration_s: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.duration_s = duration_s;
    cfg.traffic.stop_s = duration_s - 1.0;
    cfg
}

//! Node identity, roles and random deployment.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Location, Terrain};
use crate::time::SimTime;

/// Link-layer address, either the 16-bit short form or the 64-bit extended form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeAddress {
    Short(u16),
    Extended(u64),
}

impl NodeAddress {
    /// The coordinator / edge router in short-address mode.
    pub const COORDINATOR: NodeAddress = NodeAddress::Short(0);

    pub fn is_extended(&self) -> bool {
        matches!(self, NodeAddress::Extended(_))
    }

    /// Numeric value used for deterministic tie-breaking.
    pub fn value(&self) -> u64 {
        match *self {
            NodeAddress::Short(v) => v as u64,
            NodeAddress::Extended(v) => v,
        }
    }

    /// Wire width in octets.
    pub fn width(&self) -> usize {
        if self.is_extended() {
            8
        } else {
            2
        }
    }
}

impl std::fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeAddress::Short(v) => write!(f, "0x{v:04x}"),
            NodeAddress::Extended(v) => write!(f, "0x{v:016x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    EdgeRouter,
    LocalEdgeRouter,
    ReducedFunctionDevice,
}

impl NodeRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeRole::EdgeRouter => "er",
            NodeRole::LocalEdgeRouter => "ler",
            NodeRole::ReducedFunctionDevice => "rfd",
        }
    }
}

/// Radio-level state of one simulated node. Protocol tables live with the
/// protocol that owns them.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub address: NodeAddress,
    pub role: NodeRole,
    pub location: Location,
    pub energy_j: f64,
    /// The radio is off until this instant.
    pub sleep_until: SimTime,
    /// Administratively failed (fault injection); behaves like a dead battery.
    pub disabled: bool,
}

impl NodeState {
    pub fn new(address: NodeAddress, role: NodeRole, location: Location, energy_j: f64) -> Self {
        Self {
            address,
            role,
            location,
            energy_j,
            sleep_until: SimTime::ZERO,
            disabled: false,
        }
    }

    pub fn is_awake(&self, now: SimTime) -> bool {
        now >= self.sleep_until
    }

    pub fn is_alive(&self) -> bool {
        !self.disabled && self.energy_j > 0.0
    }

    /// Alive and with the radio on.
    pub fn can_radio(&self, now: SimTime) -> bool {
        self.is_alive() && self.is_awake(now)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DeployError {
    #[error("node count must be at least 2, got {0}")]
    TooFewNodes(usize),
    #[error("node count {0} exceeds the 16-bit short address space")]
    TooManyNodes(usize),
    #[error("ler_fraction must lie in [0, 1], got {0}")]
    LerFraction(f64),
    #[error("terrain dimensions must be positive and finite")]
    Terrain,
    #[error("edge router position ({x}, {y}) lies outside the terrain")]
    ErOutside { x: f64, y: f64 },
}

/// Number of LERs among the `count - 1` non-ER nodes.
pub fn ler_count(count: usize, ler_fraction: f64) -> usize {
    let exact = ler_fraction * (count - 1) as f64;
    // Guard against products such as 0.1 * 30 = 3.0000000000000004.
    ((exact - 1e-9).ceil().max(0.0) as usize).min(count - 1)
}

/// Random uniform deployment. Node 0 is the edge router at `er_position`
/// (terrain center when `None`); addresses are `0..count` in short mode.
pub fn deploy_nodes(
    count: usize,
    terrain: Terrain,
    ler_fraction: f64,
    seed: u64,
    er_position: Option<Location>,
) -> Result<Vec<NodeState>, DeployError> {
    if count < 2 {
        return Err(DeployError::TooFewNodes(count));
    }
    if count > u16::MAX as usize + 1 {
        return Err(DeployError::TooManyNodes(count));
    }
    if !(0.0..=1.0).contains(&ler_fraction) {
        return Err(DeployError::LerFraction(ler_fraction));
    }
    if !terrain.is_valid() {
        return Err(DeployError::Terrain);
    }
    let er_loc = er_position.unwrap_or_else(|| terrain.center());
    if !er_loc.is_finite() || !terrain.contains(er_loc) {
        return Err(DeployError::ErOutside {
            x: er_loc.x,
            y: er_loc.y,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(count);
    nodes.push(NodeState::new(
        NodeAddress::Short(0),
        NodeRole::EdgeRouter,
        er_loc,
        0.0,
    ));
    for i in 1..count {
        let loc = Location::new(
            rng.gen_range(0.0..=terrain.width),
            rng.gen_range(0.0..=terrain.height),
        );
        nodes.push(NodeState::new(
            NodeAddress::Short(i as u16),
            NodeRole::ReducedFunctionDevice,
            loc,
            0.0,
        ));
    }
    let lers = ler_count(count, ler_fraction);
    for idx in sample(&mut rng, count - 1, lers).into_iter() {
        nodes[idx + 1].role = NodeRole::LocalEdgeRouter;
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> Terrain {
        Terrain::new(200.0, 200.0)
    }

    #[test]
    fn smallest_deployment() {
        let nodes = deploy_nodes(2, field(), 1.0, 7, None).unwrap();
        assert_eq!(nodes[0].role, NodeRole::EdgeRouter);
        assert_eq!(nodes[0].location, field().center());
        assert_eq!(nodes[1].role, NodeRole::LocalEdgeRouter);
        let nodes = deploy_nodes(2, field(), 0.0, 7, None).unwrap();
        assert_eq!(nodes[1].role, NodeRole::ReducedFunctionDevice);
    }

    #[test]
    fn role_counts() {
        let nodes = deploy_nodes(50, field(), 0.3, 11, None).unwrap();
        let count = |r| nodes.iter().filter(|n| n.role == r).count();
        assert_eq!(count(NodeRole::EdgeRouter), 1);
        assert_eq!(count(NodeRole::LocalEdgeRouter), 15);
        assert_eq!(count(NodeRole::ReducedFunctionDevice), 34);
        assert_eq!(ler_count(31, 0.1), 3);
    }

    #[test]
    fn deterministic() {
        let a = deploy_nodes(40, field(), 0.5, 99, None).unwrap();
        let b = deploy_nodes(40, field(), 0.5, 99, None).unwrap();
        assert_eq!(a, b);
        let c = deploy_nodes(40, field(), 0.5, 100, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn addresses_and_bounds() {
        let t = Terrain::new(50.0, 20.0);
        let nodes = deploy_nodes(100, t, 0.5, 3, Some(Location::new(0.0, 0.0))).unwrap();
        for (i, n) in nodes.iter().enumerate() {
            assert_eq!(n.address, NodeAddress::Short(i as u16));
            assert!(t.contains(n.location));
        }
        assert_eq!(nodes[0].location, Location::new(0.0, 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(deploy_nodes(1, field(), 0.5, 0, None), Err(DeployError::TooFewNodes(1)));
        assert!(matches!(
            deploy_nodes(5, field(), 1.5, 0, None),
            Err(DeployError::LerFraction(_))
        ));
        assert!(matches!(
            deploy_nodes(5, field(), 0.5, 0, Some(Location::new(300.0, 0.0))),
            Err(DeployError::ErOutside { .. })
        ));
    }
}

//! HiLow hierarchical 16-bit addressing with I-HiLow next-hop selection.
//!
//! A parent with address `ap` hands its `n`-th child (`1 <= n <= mc`) the
//! address `mc * ap + n`; the parent of any non-root address is therefore
//! `(ac - 1) / mc` (floor). The coordinator holds address 0 at depth 0.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HilowError {
    #[error("maximum child count must be at least 1")]
    InvalidConfig,
    #[error("child index {n} outside 1..={mc}")]
    ChildIndex { n: u32, mc: u16 },
    #[error("address space exhausted: {mc} * {ap} + {n} exceeds 65535")]
    AddressSpaceExhausted { ap: u16, n: u32, mc: u16 },
    #[error("the coordinator has no parent")]
    NoParent,
    #[error("address {address} is not at depth {depth}")]
    InvalidDestination { address: u16, depth: u32 },
    #[error("current node {address} is not at depth {depth}")]
    InvalidNode { address: u16, depth: u32 },
    #[error("parent {0} is not part of the tree")]
    UnknownParent(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilowConfig {
    pub mc: u16,
}

impl HilowConfig {
    pub fn new(mc: u16) -> Result<Self, HilowError> {
        if mc == 0 {
            return Err(HilowError::InvalidConfig);
        }
        Ok(Self { mc })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilowNode {
    pub address: u16,
    pub depth: u32,
    pub children_count: u16,
}

pub fn allocate_child(ap: u16, n: u32, cfg: HilowConfig) -> Result<u16, HilowError> {
    if n == 0 || n > cfg.mc as u32 {
        return Err(HilowError::ChildIndex { n, mc: cfg.mc });
    }
    let c = cfg.mc as u64 * ap as u64 + n as u64;
    u16::try_from(c).map_err(|_| HilowError::AddressSpaceExhausted { ap, n, mc: cfg.mc })
}

pub fn parent_of(ac: u16, cfg: HilowConfig) -> Result<u16, HilowError> {
    if ac == 0 {
        return Err(HilowError::NoParent);
    }
    Ok((ac - 1) / cfg.mc)
}

/// Depth implied by the address alone (number of parent steps to the root).
pub fn depth_of(address: u16, cfg: HilowConfig) -> u32 {
    let mut depth = 0;
    let mut a = address;
    while a != 0 {
        a = (a - 1) / cfg.mc;
        depth += 1;
    }
    depth
}

/// `AA(depth, k)`: the ascendant of `k` at `depth`, reached by applying
/// `parent_of` exactly `depth(k) - depth` times. `None` if `depth > depth(k)`.
pub fn ascendant_at(k: u16, k_depth: u32, depth: u32, cfg: HilowConfig) -> Option<u16> {
    if depth > k_depth {
        return None;
    }
    let mut a = k;
    for _ in 0..(k_depth - depth) {
        a = parent_of(a, cfg).ok()?;
    }
    Some(a)
}

/// All proper ascendants of `address`, nearest first, ending at the root.
pub fn ascendants(address: u16, cfg: HilowConfig) -> Vec<u16> {
    let mut out = Vec::new();
    let mut a = address;
    while let Ok(p) = parent_of(a, cfg) {
        out.push(p);
        a = p;
    }
    out
}

pub fn is_ascendant(candidate: u16, of: u16, cfg: HilowConfig) -> bool {
    ascendants(of, cfg).contains(&candidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextHop {
    /// The current node is the destination.
    Deliver,
    Forward(u16),
}

pub fn next_hop(current: HilowNode, dest: u16, dest_depth: u32, cfg: HilowConfig) -> Result<NextHop, HilowError> {
    if depth_of(current.address, cfg) != current.depth {
        return Err(HilowError::InvalidNode {
            address: current.address,
            depth: current.depth,
        });
    }
    if depth_of(dest, cfg) != dest_depth {
        return Err(HilowError::InvalidDestination {
            address: dest,
            depth: dest_depth,
        });
    }
    if current.address == dest {
        return Ok(NextHop::Deliver);
    }
    let dc = current.depth;
    let current_is_ascendant = dc < dest_depth && ascendant_at(dest, dest_depth, dc, cfg) == Some(current.address);
    if current_is_ascendant {
        let down = ascendant_at(dest, dest_depth, dc + 1, cfg).expect("dc + 1 <= dest depth");
        return Ok(NextHop::Forward(down));
    }
    // Descendant of the destination or an unrelated branch: both rules
    // step up to AA(DC - 1, C).
    Ok(NextHop::Forward(parent_of(current.address, cfg)?))
}

/// Full hop sequence from `current` to `dest`, both endpoints included.
pub fn route(current: u16, dest: u16, cfg: HilowConfig) -> Result<Vec<u16>, HilowError> {
    let dest_depth = depth_of(dest, cfg);
    let mut path = vec![current];
    let mut node = current;
    // Any tree path is at most depth(current) + depth(dest) hops long.
    let bound = depth_of(current, cfg) + dest_depth;
    for _ in 0..=bound {
        let here = HilowNode {
            address: node,
            depth: depth_of(node, cfg),
            children_count: 0,
        };
        match next_hop(here, dest, dest_depth, cfg)? {
            NextHop::Deliver => return Ok(path),
            NextHop::Forward(n) => {
                path.push(n);
                node = n;
            }
        }
    }
    unreachable!("tree routing always converges")
}

/// Ascendant and descendant sets of a destination within a concrete tree.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AncestorSets {
    pub sa: BTreeSet<u16>,
    pub sd: BTreeSet<u16>,
}

/// A HiLow tree built by successive child association.
#[derive(Debug, Clone)]
pub struct HilowTree {
    cfg: HilowConfig,
    nodes: BTreeMap<u16, HilowNode>,
}

impl HilowTree {
    pub fn new(cfg: HilowConfig) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            0,
            HilowNode {
                address: 0,
                depth: 0,
                children_count: 0,
            },
        );
        Self { cfg, nodes }
    }

    pub fn config(&self) -> HilowConfig {
        self.cfg
    }

    pub fn get(&self, address: u16) -> Option<&HilowNode> {
        self.nodes.get(&address)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &HilowNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Associates a new child under `parent` with the next free index.
    pub fn attach(&mut self, parent: u16) -> Result<HilowNode, HilowError> {
        let p = *self.nodes.get(&parent).ok_or(HilowError::UnknownParent(parent))?;
        let n = p.children_count as u32 + 1;
        let address = allocate_child(parent, n, self.cfg)?;
        let child = HilowNode {
            address,
            depth: p.depth + 1,
            children_count: 0,
        };
        self.nodes.get_mut(&parent).expect("present").children_count += 1;
        self.nodes.insert(address, child);
        Ok(child)
    }

    pub fn ancestor_sets(&self, dest: u16) -> AncestorSets {
        let sa = ascendants(dest, self.cfg).into_iter().collect();
        let sd = self
            .nodes
            .keys()
            .copied()
            .filter(|&a| a != dest && is_ascendant(dest, a, self.cfg))
            .collect();
        AncestorSets { sa, sd }
    }
}

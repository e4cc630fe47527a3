//! Planar geometry for node placement and geographic forwarding.

use serde::{Deserialize, Serialize};

/// A point in the deployment field, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Rectangular deployment field anchored at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub width: f64,
    pub height: f64,
}

impl Terrain {
    pub const fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn center(&self) -> Location {
        Location::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn contains(&self, loc: Location) -> bool {
        (0.0..=self.width).contains(&loc.x) && (0.0..=self.height).contains(&loc.y)
    }

    pub fn is_valid(&self) -> bool {
        self.width.is_finite() && self.height.is_finite() && self.width > 0.0 && self.height > 0.0
    }
}

pub fn euclidean_distance(a: Location, b: Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Signed geographic progress made by handing a packet from `current` to
/// `candidate`: positive iff the candidate is closer to `destination`.
pub fn progress_toward(current: Location, candidate: Location, destination: Location) -> f64 {
    euclidean_distance(current, destination) - euclidean_distance(candidate, destination)
}

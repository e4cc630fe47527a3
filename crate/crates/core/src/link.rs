//! Link quality model and the location-aware routing metric.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 802.15.4 link quality indicator, 0 (worst) to 255 (best).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct LqiValue(pub u8);

impl LqiValue {
    pub const MAX: LqiValue = LqiValue(255);

    pub fn raw(self) -> u8 {
        self.0
    }

    pub fn fraction(self) -> f64 {
        self.0 as f64 / 255.0
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("distance {distance} m exceeds radio range {range} m")]
pub struct OutOfRange {
    pub distance: f64,
    pub range: f64,
}

/// Rounds halves away from zero for non-negative input (`2.5 -> 3`).
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// LQI for a link of the given length: linear in distance, plus symmetric
/// integer noise drawn from `rng`, clamped to `[0, 255]`.
pub fn link_lqi<R: Rng + ?Sized>(
    distance: f64,
    radio_range: f64,
    noise_amplitude: u32,
    rng: &mut R,
) -> Result<LqiValue, OutOfRange> {
    if !(distance <= radio_range) {
        return Err(OutOfRange {
            distance,
            range: radio_range,
        });
    }
    let base = round_half_up(255.0 * (1.0 - distance.max(0.0) / radio_range)) as i64;
    let noise = if noise_amplitude == 0 {
        0
    } else {
        let a = noise_amplitude as i64;
        rng.gen_range(-a..=a)
    };
    Ok(LqiValue((base + noise).clamp(0, 255) as u8))
}

/// Normalized product of geographic progress and link quality, in `[0, 1]`.
/// Zero whenever the candidate makes no progress or the link is dead.
pub fn route_metric(progress: f64, radio_range: f64, lqi: LqiValue) -> f64 {
    let p = (progress.max(0.0) / radio_range).min(1.0);
    p * lqi.fraction()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lqi_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(link_lqi(0.0, 40.0, 0, &mut rng), Ok(LqiValue(255)));
        assert_eq!(link_lqi(40.0, 40.0, 0, &mut rng), Ok(LqiValue(0)));
        assert_eq!(link_lqi(20.0, 40.0, 0, &mut rng), Ok(LqiValue(128)));
        assert!(link_lqi(40.01, 40.0, 0, &mut rng).is_err());
    }

    #[test]
    fn lqi_noise_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let v = link_lqi(20.0, 40.0, 10, &mut rng).unwrap().raw() as i32;
            assert!((118..=138).contains(&v));
        }
        // Clamped at both ends.
        for _ in 0..100 {
            let _ = link_lqi(0.0, 40.0, 300, &mut rng).unwrap();
        }
    }

    #[test]
    fn lqi_monotone_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let range = 37.5;
        let mut prev = 255u8;
        for i in 0..1000 {
            let d = range * i as f64 / 999.0;
            let v = link_lqi(d, range, 0, &mut rng).unwrap().raw();
            assert!(v <= prev, "lqi rose at d={d}");
            prev = v;
        }
    }

    #[test]
    fn metric_examples() {
        assert_eq!(route_metric(40.0, 40.0, LqiValue(255)), 1.0);
        assert_eq!(route_metric(30.0, 40.0, LqiValue(0)), 0.0);
        assert_eq!(route_metric(-3.0, 40.0, LqiValue(200)), 0.0);
        let m = route_metric(20.0, 40.0, LqiValue(128));
        assert!((m - 0.250_980_392_156_862_7).abs() < 1e-15);
    }

    #[test]
    fn metric_monotone() {
        let range = 40.0;
        for lqi in (0..=255u8).step_by(5) {
            let mut prev = -1.0;
            for i in -10..=50 {
                let m = route_metric(i as f64, range, LqiValue(lqi));
                assert!(m >= prev);
                assert!((0.0..=1.0).contains(&m));
                prev = m;
            }
        }
        for i in 0..=40 {
            let mut prev = -1.0;
            for lqi in 0..=255u8 {
                let m = route_metric(i as f64, range, LqiValue(lqi));
                assert!(m >= prev);
                prev = m;
            }
        }
    }
}

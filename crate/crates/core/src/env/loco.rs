//! One-dimensional locomotion over piecewise terrain.
//!
//! `v' = v + dt (a F/m - g sin(phi(x)) - c(x) v)`, `x' = x + dt v'`, reward
//! `x' - x - 0.05 a^2`. Slope terrain varies the incline per segment (rise
//! `h` over a 15-unit segment, so `phi = atan(h / 15)`) with fixed damping;
//! Pier terrain is flat and varies the damping per 4-unit block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOCO_DT: f64 = 0.05;
pub const LOCO_MASS: f64 = 1.0;
pub const MAX_FORCE: f64 = 2.0;
pub const LOCO_GRAVITY: f64 = 1.0;
pub const ACTION_COST: f64 = 0.05;
pub const SLOPE_DAMPING: f64 = 0.3;
pub const LOCO_STATE_DIM: usize = 2;
pub const LOCO_ACTION_DIM: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocoVariant {
    Slope,
    Pier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl LocoVariant {
    pub fn segment_len(self) -> f64 {
        match self {
            LocoVariant::Slope => 15.0,
            LocoVariant::Pier => 4.0,
        }
    }

    /// Parameter intervals of a split (segment height or damping).
    pub fn ranges(self, split: Split) -> &'static [(f64, f64)] {
        match (self, split) {
            (LocoVariant::Slope, Split::Train) => &[(0.5, 3.5)],
            (LocoVariant::Slope, Split::Test) => &[(0.0, 0.25), (3.75, 4.0)],
            (LocoVariant::Pier, Split::Train) => &[(0.2, 0.8)],
            (LocoVariant::Pier, Split::Test) => &[(0.0, 0.1), (0.9, 1.0)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LocoVariant::Slope => "slope",
            LocoVariant::Pier => "pier",
        }
    }
}

pub fn in_ranges(x: f64, ranges: &[(f64, f64)]) -> bool {
    ranges.iter().any(|&(lo, hi)| (lo..=hi).contains(&x))
}

/// Uniform draw over a union of intervals, weighted by length.
pub fn sample_ranges<R: Rng + ?Sized>(rng: &mut R, ranges: &[(f64, f64)]) -> f64 {
    let total: f64 = ranges.iter().map(|(lo, hi)| hi - lo).sum();
    let mut u = rng.gen_range(0.0..total);
    for &(lo, hi) in ranges {
        if u < hi - lo {
            return lo + u;
        }
        u -= hi - lo;
    }
    ranges.last().map(|r| r.1).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocoSystem {
    pub variant: LocoVariant,
    /// Per-segment parameter, contiguous from x = 0: height for Slope,
    /// damping for Pier.
    pub segments: Vec<f64>,
}

impl LocoSystem {
    pub fn new(variant: LocoVariant, segments: Vec<f64>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("terrain needs at least one segment".into()));
        }
        if segments.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("terrain parameters must be finite and >= 0".into()));
        }
        Ok(Self { variant, segments })
    }

    /// Single-parameter terrain.
    pub fn uniform(variant: LocoVariant, param: f64) -> Result<Self> {
        Self::new(variant, vec![param])
    }

    pub fn segment_index(&self, x: f64) -> usize {
        let k = (x / self.variant.segment_len()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.segments.len() - 1)
        }
    }

    pub fn param_at(&self, x: f64) -> f64 {
        self.segments[self.segment_index(x)]
    }

    pub fn slope_angle_at(&self, x: f64) -> f64 {
        match self.variant {
            LocoVariant::Slope => (self.param_at(x) / self.variant.segment_len()).atan(),
            LocoVariant::Pier => 0.0,
        }
    }

    pub fn damping_at(&self, x: f64) -> f64 {
        match self.variant {
            LocoVariant::Slope => SLOPE_DAMPING,
            LocoVariant::Pier => self.param_at(x),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocoState {
    pub x: f64,
    pub v: f64,
}

impl LocoState {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.x, self.v]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self { x: s[0], v: s[1] }
    }
}

pub fn loco_reward(x: f64, x_next: f64, a: f64) -> f64 {
    (x_next - x) - ACTION_COST * a * a
}

/// One step; `a` is clamped to [-1, 1].
pub fn loco_step(sys: &LocoSystem, s: &LocoState, a: f64) -> (LocoState, f64) {
    let a = a.clamp(-1.0, 1.0);
    let phi = sys.slope_angle_at(s.x);
    let c = sys.damping_at(s.x);
    let acc = a * MAX_FORCE / LOCO_MASS - LOCO_GRAVITY * phi.sin() - c * s.v;
    let v = s.v + LOCO_DT * acc;
    let x = s.x + LOCO_DT * v;
    (LocoState { x, v }, loco_reward(s.x, x, a))
}

pub fn sample_loco_system<R: Rng + ?Sized>(
    rng: &mut R,
    variant: LocoVariant,
    split: Split,
    n_segments: usize,
) -> LocoSystem {
    let ranges = variant.ranges(split);
    let segments = (0..n_segments.max(1)).map(|_| sample_ranges(rng, ranges)).collect();
    LocoSystem { variant, segments }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn idle_on_flat_is_still() {
        let sys = LocoSystem::uniform(LocoVariant::Pier, 0.5).unwrap();
        let (s, r) = loco_step(&sys, &LocoState::default(), 0.0);
        assert_eq!(s, LocoState::default());
        assert_eq!(r, 0.0);
    }

    #[test]
    fn constant_push_reaches_terminal_velocity() {
        let c = 0.5;
        let sys = LocoSystem::uniform(LocoVariant::Pier, c).unwrap();
        let mut s = LocoState::default();
        for _ in 0..4000 {
            s = loco_step(&sys, &s, 0.7).0;
        }
        assert!((s.v - 0.7 * MAX_FORCE / (LOCO_MASS * c)).abs() < 1e-9);
    }

    #[test]
    fn reward_is_displacement_minus_action_cost() {
        let sys = LocoSystem::uniform(LocoVariant::Slope, 1.0).unwrap();
        let s = LocoState { x: 3.0, v: 1.0 };
        let (n, r) = loco_step(&sys, &s, -0.4);
        assert_eq!(r, (n.x - s.x) - 0.05 * 0.16);
    }

    #[test]
    fn segments_are_contiguous() {
        let sys = LocoSystem::new(LocoVariant::Pier, vec![0.2, 0.4, 0.6]).unwrap();
        assert_eq!(sys.param_at(-1.0), 0.2);
        assert_eq!(sys.param_at(3.99), 0.2);
        assert_eq!(sys.param_at(4.0), 0.4);
        assert_eq!(sys.param_at(100.0), 0.6);
    }

    #[test]
    fn test_split_is_disjoint_from_train() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in [LocoVariant::Slope, LocoVariant::Pier] {
            let sys = sample_loco_system(&mut rng, v, Split::Test, 500);
            for p in sys.segments {
                assert!(!in_ranges(p, v.ranges(Split::Train)));
                assert!(in_ranges(p, v.ranges(Split::Test)));
            }
        }
    }
}

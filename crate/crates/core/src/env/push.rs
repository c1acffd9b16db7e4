//! Planar pushing world.
//!
//! One step: the effector sweeps from `e` to `e + delta` over `DT` seconds.
//! The first sampled point of the sweep inside the object is the contact; it
//! delivers an impulse, the object is then shifted along the push direction
//! until the rest of the sweep is clear of it, and finally the object slides
//! freely, decelerating under Coulomb friction, for the time left in the step.
//!
//! Units: the source simulator's mass range [300, 1000] maps to kilograms by
//! dividing by 1000, and its friction range [8e-4, 12e-4] (scaled by a table
//! friction of 10) becomes the deceleration coefficient `mu` in
//! [0.008, 0.012], so objects decelerate at `mu * g`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::grid::{cell_center, rotate_grid, Grid, CELL_SIZE};
use super::shapes::ShapeSpec;
use crate::error::{Error, Result};

pub const DT: f64 = 0.8;
pub const GRAVITY: f64 = 9.81;
pub const EFFECTOR_MASS: f64 = 0.5;
pub const TABLE_SIZE: f64 = 0.6;
pub const MASS_RANGE: (f64, f64) = (0.3, 1.0);
pub const MU_RANGE: (f64, f64) = (0.008, 0.012);
pub const PUSH_RANGE: (f64, f64) = (0.03, 0.06);
/// Sampling step along the effector sweep: a tenth of a cell.
pub const CONTACT_STEP: f64 = 0.1 * CELL_SIZE;

pub const STATE_DIM: usize = 8;
pub const OBS_DIM: usize = 7;
pub const ACTION_DIM: usize = 2;
pub const THETA_INDEX: usize = 2;

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let w = x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

fn rot(theta: f64, x: f64, y: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * x - s * y, s * x + c * y]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushSystem {
    pub shape: ShapeSpec,
    pub mass: f64,
    pub mu: f64,
    grid: Grid,
    /// Centroid of occupied cells, cell units, grid-centred.
    centroid: (f64, f64),
    inertia: f64,
    radius: f64,
}

impl PushSystem {
    pub fn new(shape: ShapeSpec, mass: f64, mu: f64) -> Result<Self> {
        Self::with_grid(shape, shape.grid(), mass, mu)
    }

    /// Builds a system over an explicit grid; `shape` is kept as a label.
    pub fn with_grid(shape: ShapeSpec, grid: Grid, mass: f64, mu: f64) -> Result<Self> {
        if !(MASS_RANGE.0..=MASS_RANGE.1).contains(&mass) {
            return Err(Error::Config(format!("mass {mass} outside {MASS_RANGE:?}")));
        }
        if !(MU_RANGE.0..=MU_RANGE.1).contains(&mu) {
            return Err(Error::Config(format!("friction {mu} outside {MU_RANGE:?}")));
        }
        let centroid = grid
            .centroid()
            .ok_or_else(|| Error::Config("empty occupancy grid".into()))?;
        let mut sys = Self {
            shape,
            mass,
            mu,
            grid,
            centroid,
            inertia: 0.0,
            radius: 0.0,
        };
        sys.inertia = moment_of_inertia(&sys);
        let half_diag = CELL_SIZE * std::f64::consts::FRAC_1_SQRT_2;
        sys.radius = sys
            .local_cells()
            .map(|[x, y]| x.hypot(y) + half_diag)
            .fold(0.0, f64::max);
        Ok(sys)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Canonical grid rotated to orientation `theta`.
    pub fn oriented_grid(&self, theta: f64) -> Grid {
        rotate_grid(&self.grid, theta)
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn radius_of_gyration(&self) -> f64 {
        (self.inertia / self.mass).sqrt()
    }

    /// Distance from the centroid to the farthest occupied cell corner (m).
    pub fn bounding_radius(&self) -> f64 {
        self.radius
    }

    /// Occupied cell centres relative to the centroid, metres.
    pub fn local_cells(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        let (cx, cy) = self.centroid;
        self.grid.occupied().map(move |(i, j)| {
            let (x, y) = cell_center(i, j);
            [(x - cx) * CELL_SIZE, (y - cy) * CELL_SIZE]
        })
    }

    /// Axis-aligned bounds of the occupied cells in the object frame (m).
    pub fn local_bbox(&self) -> ([f64; 2], [f64; 2]) {
        let h = CELL_SIZE / 2.0;
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in self.local_cells() {
            for k in 0..2 {
                lo[k] = lo[k].min(c[k] - h);
                hi[k] = hi[k].max(c[k] + h);
            }
        }
        (lo, hi)
    }

    /// Whether world point `w` is inside the object placed at `(p, theta)`.
    pub fn contains(&self, p: [f64; 2], theta: f64, w: [f64; 2]) -> bool {
        let q = rot(-theta, w[0] - p[0], w[1] - p[1]);
        self.grid.occupied_at(
            q[0] / CELL_SIZE + self.centroid.0,
            q[1] / CELL_SIZE + self.centroid.1,
        )
    }
}

/// `m * mean(|r|^2 + cs^2 / 6)` over occupied cells: each cell is a uniform
/// square plate offset from the centroid by `r`.
pub fn moment_of_inertia(sys: &PushSystem) -> f64 {
    let mut n = 0usize;
    let mut acc = 0.0;
    for [x, y] in sys.local_cells() {
        acc += x * x + y * y + CELL_SIZE * CELL_SIZE / 6.0;
        n += 1;
    }
    sys.mass * acc / n as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PushState {
    pub p: [f64; 2],
    pub theta: f64,
    pub v: [f64; 2],
    pub omega: f64,
    pub e: [f64; 2],
}

impl PushState {
    /// `[px, py, theta, vx, vy, omega, ex, ey]`.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.p[0], self.p[1], self.theta, self.v[0], self.v[1], self.omega, self.e[0], self.e[1],
        ]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        assert_eq!(s.len(), STATE_DIM);
        Self {
            p: [s[0], s[1]],
            theta: s[2],
            v: [s[3], s[4]],
            omega: s[5],
            e: [s[6], s[7]],
        }
    }

    /// State without orientation: `[px, py, vx, vy, omega, ex, ey]`.
    pub fn obs(&self) -> Vec<f64> {
        obs_of(&self.to_vec())
    }

    pub fn kinetic_energy(&self, sys: &PushSystem) -> f64 {
        0.5 * sys.mass * (self.v[0] * self.v[0] + self.v[1] * self.v[1])
            + 0.5 * sys.inertia() * self.omega * self.omega
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }
}

/// Drops the orientation entry from a full state vector.
pub fn obs_of(state: &[f64]) -> Vec<f64> {
    let mut o = Vec::with_capacity(OBS_DIM);
    o.extend_from_slice(&state[..THETA_INDEX]);
    o.extend_from_slice(&state[THETA_INDEX + 1..]);
    o
}

fn clamp_table(x: [f64; 2]) -> [f64; 2] {
    [x[0].clamp(0.0, TABLE_SIZE), x[1].clamp(0.0, TABLE_SIZE)]
}

/// Decelerates a speed at rate `a` for time `t`; returns (distance, new speed).
fn decelerate(speed: f64, a: f64, t: f64) -> (f64, f64) {
    if speed <= 0.0 || t <= 0.0 {
        return (0.0, speed.max(0.0));
    }
    let t_stop = speed / a;
    if t >= t_stop {
        (speed * speed / (2.0 * a), 0.0)
    } else {
        (speed * t - 0.5 * a * t * t, speed - a * t)
    }
}

fn slide(sys: &PushSystem, s: &mut PushState, t: f64) {
    let a = sys.mu * GRAVITY;
    let speed = s.v[0].hypot(s.v[1]);
    if speed > 0.0 {
        let dir = [s.v[0] / speed, s.v[1] / speed];
        let (dist, new_speed) = decelerate(speed, a, t);
        s.p = [s.p[0] + dir[0] * dist, s.p[1] + dir[1] * dist];
        s.v = [dir[0] * new_speed, dir[1] * new_speed];
    }
    if s.omega != 0.0 {
        let alpha = a / sys.radius_of_gyration();
        let (ang, new_rate) = decelerate(s.omega.abs(), alpha, t);
        let sign = s.omega.signum();
        s.theta = wrap_angle(s.theta + sign * ang);
        s.omega = sign * new_rate;
    }
}

struct Contact {
    /// Path parameter of the first sampled point inside the object.
    t: f64,
    point: [f64; 2],
    /// Path parameter of the boundary crossing, refined from the outside.
    t_entry: Option<f64>,
}

/// First sampled point of the sweep `from -> from + d` inside the object.
fn first_contact(sys: &PushSystem, s: &PushState, from: [f64; 2], d: [f64; 2]) -> Option<Contact> {
    let at = |t: f64| [from[0] + t * d[0], from[1] + t * d[1]];
    let inside = |t: f64| sys.contains(s.p, s.theta, at(t));
    let len = d[0].hypot(d[1]);
    let n = ((len / CONTACT_STEP).ceil() as usize).max(1);
    let i = (0..=n).find(|&i| inside(i as f64 / n as f64))?;
    let t = i as f64 / n as f64;
    let t_entry = (i > 0).then(|| {
        let (mut lo, mut hi) = ((i - 1) as f64 / n as f64, t);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if inside(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    });
    Some(Contact {
        t,
        point: at(t),
        t_entry,
    })
}

/// Smallest shift of the object along `n` that moves it off the point `w`.
fn clearing_shift(sys: &PushSystem, s: &PushState, w: [f64; 2], n: [f64; 2]) -> f64 {
    let blocked = |d: f64| sys.contains([s.p[0] + d * n[0], s.p[1] + d * n[1]], s.theta, w);
    if !blocked(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = CONTACT_STEP;
    while blocked(hi) {
        lo = hi;
        hi += CONTACT_STEP;
        if hi > TABLE_SIZE {
            return TABLE_SIZE;
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if blocked(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Advances the pushing world by one step.
pub fn push_step(sys: &PushSystem, s: &PushState, delta: [f64; 2]) -> PushState {
    let mut out = *s;
    let e0 = s.e;
    let e1 = clamp_table([e0[0] + delta[0], e0[1] + delta[1]]);
    out.e = e1;
    let d = [e1[0] - e0[0], e1[1] - e0[1]];
    let len = d[0].hypot(d[1]);
    let mut t_free = DT;
    if len > 0.0 {
        if let Some(contact) = first_contact(sys, s, e0, d) {
            let c = contact.point;
            let n = [d[0] / len, d[1] / len];
            let u = len / DT;
            let k = u * EFFECTOR_MASS / (sys.mass + EFFECTOR_MASS);
            let dv = [k * n[0], k * n[1]];
            out.v = [out.v[0] + dv[0], out.v[1] + dv[1]];
            let r = [c[0] - s.p[0], c[1] - s.p[1]];
            out.omega += (r[0] * sys.mass * dv[1] - r[1] * sys.mass * dv[0]) / sys.inertia();
            // quasi-static: the object is carried so the effector stays at
            // its entry point for the rest of the sweep
            let shift = match contact.t_entry {
                Some(te) => (1.0 - te) * len,
                None => clearing_shift(sys, &out, e1, n),
            };
            out.p = [out.p[0] + shift * n[0], out.p[1] + shift * n[1]];
            t_free = DT * (1.0 - contact.t);
        }
    }
    slide(sys, &mut out, t_free);
    // spin while sliding can swing the object onto the effector
    if sys.contains(out.p, out.theta, e1) {
        let away = [out.p[0] - e1[0], out.p[1] - e1[1]];
        let l = away[0].hypot(away[1]);
        let n = if l > 0.0 { [away[0] / l, away[1] / l] } else { [1.0, 0.0] };
        let shift = clearing_shift(sys, &out, e1, n);
        out.p = [out.p[0] + shift * n[0], out.p[1] + shift * n[1]];
    }
    let clamped = clamp_table(out.p);
    for k in 0..2 {
        if clamped[k] != out.p[k] {
            out.v[k] = 0.0;
        }
    }
    out.p = clamped;
    out
}

/// Full-state difference `next - state` with the angle entry wrapped.
pub fn push_diff(next: &[f64], state: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = next.iter().zip(state).map(|(a, b)| a - b).collect();
    d[THETA_INDEX] = wrap_angle(d[THETA_INDEX]);
    d
}

/// `state ⊕ delta`: plain sums with the angle wrapped.
pub fn push_compose(state: &[f64], delta: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = state.iter().zip(delta).map(|(a, b)| a + b).collect();
    s[THETA_INDEX] = wrap_angle(s[THETA_INDEX]);
    s
}

/// Random start: object near the table centre at rest, effector just outside
/// its bounding circle.
pub fn sample_push_start<R: Rng + ?Sized>(sys: &PushSystem, rng: &mut R) -> PushState {
    let p = [rng.gen_range(0.2..0.4), rng.gen_range(0.2..0.4)];
    let theta = wrap_angle(rng.gen_range(-PI..PI));
    let phi = rng.gen_range(-PI..PI);
    let dist = sys.bounding_radius() + rng.gen_range(0.005..0.03);
    PushState {
        p,
        theta,
        v: [0.0; 2],
        omega: 0.0,
        e: [p[0] + dist * phi.cos(), p[1] + dist * phi.sin()],
    }
}

/// Data-collection push: with probability 0.2 a uniformly random direction,
/// otherwise toward a random point of the object's bounding box.
pub fn sample_push_action<R: Rng + ?Sized>(sys: &PushSystem, s: &PushState, rng: &mut R) -> [f64; 2] {
    let mag = rng.gen_range(PUSH_RANGE.0..PUSH_RANGE.1);
    let random_dir = rng.gen_bool(0.2);
    let phi = rng.gen_range(-PI..PI);
    let (lo, hi) = sys.local_bbox();
    let q = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
    let dir = if random_dir {
        [phi.cos(), phi.sin()]
    } else {
        let w = rot(s.theta, q[0], q[1]);
        let t = [s.p[0] + w[0] - s.e[0], s.p[1] + w[1] - s.e[1]];
        let l = t[0].hypot(t[1]);
        if l > 1e-12 {
            [t[0] / l, t[1] / l]
        } else {
            [phi.cos(), phi.sin()]
        }
    };
    [mag * dir[0], mag * dir[1]]
}

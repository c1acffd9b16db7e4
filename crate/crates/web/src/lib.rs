//! Browser bindings for the toy worlds: oriented shape grids, an
//! interactive pushing table with an optional oracle planner, and terrain
//! rollouts for the locomotion variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use hyperdyn::env::*;
use hyperdyn::model::EnvOracle;
use hyperdyn::planner::{random_shooting, MpcConfig};

fn kind(name: &str) -> Result<ShapeKind, String> {
    ShapeKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| format!("unknown shape {name:?}"))
}

/// Shape kinds accepted by [`shape_grid`] and [`PushWorld::new`].
#[wasm_bindgen]
pub fn shape_kinds() -> Vec<String> {
    ShapeKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

/// Side length of every occupancy grid.
#[wasm_bindgen]
pub fn grid_side() -> usize {
    GRID_SIDE
}

/// Row-major occupancy of shape `kind` with box `a` x `b` metres, rotated by
/// `theta` radians.
#[wasm_bindgen]
pub fn shape_grid(kind_name: &str, a: f64, b: f64, theta: f64) -> Result<Vec<f64>, String> {
    let g = ShapeSpec::new(kind(kind_name)?, a, b).grid();
    if g.occupied_count() == 0 {
        return Err("shape is too small to occupy any cell".into());
    }
    Ok(rotate_grid(&g, theta).cells().to_vec())
}

/// A pushing table with one object and the effector.
#[wasm_bindgen]
pub struct PushWorld {
    sys: PushSystem,
    state: PushState,
    rng: ChaCha8Rng,
}

#[wasm_bindgen]
impl PushWorld {
    #[wasm_bindgen(constructor)]
    pub fn new(kind_name: &str, a: f64, b: f64, mass: f64, mu: f64, seed: u64) -> Result<PushWorld, String> {
        let sys = PushSystem::new(ShapeSpec::new(kind(kind_name)?, a, b), mass, mu).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = sample_push_start(&sys, &mut rng);
        Ok(PushWorld { sys, state, rng })
    }

    /// `[px, py, theta, vx, vy, omega, ex, ey]`.
    pub fn state(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    pub fn table_size(&self) -> f64 {
        TABLE_SIZE
    }

    /// Occupancy at the object's current orientation.
    pub fn oriented_grid(&self) -> Vec<f64> {
        self.sys.oriented_grid(self.state.theta).cells().to_vec()
    }

    /// Moves the effector by `(dx, dy)` metres over one step.
    pub fn push(&mut self, dx: f64, dy: f64) -> Vec<f64> {
        self.state = push_step(&self.sys, &self.state, [dx, dy]);
        self.state()
    }

    /// Moves the effector up to `reach` metres toward `(x, y)`.
    pub fn push_toward(&mut self, x: f64, y: f64, reach: f64) -> Vec<f64> {
        let d = [x - self.state.e[0], y - self.state.e[1]];
        let l = d[0].hypot(d[1]);
        if l < 1e-9 {
            return self.state();
        }
        let s = reach.min(l) / l;
        self.push(d[0] * s, d[1] * s)
    }

    /// One random-shooting step toward `(gx, gy)` using the true dynamics as
    /// the model; returns the executed push.
    pub fn plan_step(&mut self, gx: f64, gy: f64, sequences: usize, horizon: usize) -> Result<Vec<f64>, String> {
        let cfg = MpcConfig {
            n_sequences: sequences.max(1),
            horizon: horizon.max(1),
            replan_every: 1,
        };
        let sys = self.sys.clone();
        let mut oracle = EnvOracle {
            system: SystemSpec::Push(sys.clone()),
        };
        let plan = random_shooting(
            &mut oracle,
            EnvKind::Push,
            &self.state.to_vec(),
            &cfg,
            |s: &[f64], r: &mut ChaCha8Rng| sample_push_action(&sys, &PushState::from_slice(s), r).to_vec(),
            |states: &[Vec<f64>], _: &[Vec<f64>]| {
                let last = states.last().expect("horizon is at least one");
                (last[0] - gx).hypot(last[1] - gy)
            },
            &mut self.rng,
        )
        .map_err(|e| e.to_string())?;
        let a = plan.actions[0].clone();
        self.push(a[0], a[1]);
        Ok(a)
    }
}

/// `steps` steps of constant `force` on a terrain drawn from `seed`:
/// flattened `[x, v, reward, terrain_param]` per step.
#[wasm_bindgen]
pub fn loco_rollout(variant: &str, novel: bool, seed: u64, force: f64, steps: usize) -> Result<Vec<f64>, String> {
    let v = match variant {
        "slope" => LocoVariant::Slope,
        "pier" => LocoVariant::Pier,
        _ => return Err(format!("unknown terrain {variant:?}")),
    };
    let split = if novel { Split::Test } else { Split::Train };
    let sys = sample_loco_system(&mut ChaCha8Rng::seed_from_u64(seed), v, split, 10);
    let a = force.clamp(-MAX_FORCE, MAX_FORCE);
    let mut s = LocoState::default();
    let mut out = Vec::with_capacity(4 * steps);
    for _ in 0..steps {
        let (n, r) = loco_step(&sys, &s, a);
        out.extend([n.x, n.v, r, sys.param_at(n.x)]);
        s = n;
    }
    Ok(out)
}

//! Random-shooting MPC over any [`DynamicsModel`].

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    collect_push_trajectory, loco_reward, loco_step, push_step, sample_push_action, EnvKind,
    LocoState, LocoSystem, PushState, PushSystem, Transition, TABLE_SIZE,
};
use crate::error::{Error, Result};
use crate::model::{Context, DynamicsModel};

/// Added to the cost of any plan whose predicted object disc meets an obstacle.
pub const COLLISION_PENALTY: f64 = 1e6;
pub const PUSH_TOLERANCE: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub n_sequences: usize,
    pub horizon: usize,
    pub replan_every: usize,
}

impl MpcConfig {
    pub fn push() -> Self {
        Self {
            n_sequences: 30,
            horizon: 1,
            replan_every: 1,
        }
    }

    pub fn push_obstacles() -> Self {
        Self {
            n_sequences: 30,
            horizon: 10,
            replan_every: 1,
        }
    }

    pub fn loco() -> Self {
        Self {
            n_sequences: 500,
            horizon: 20,
            replan_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 || self.horizon == 0 || self.replan_every == 0 {
            return Err(Error::Config("MPC sizes must be at least 1".into()));
        }
        if self.replan_every > self.horizon {
            return Err(Error::Config("replan_every exceeds the horizon".into()));
        }
        Ok(())
    }
}

/// Result of one planning call.
#[derive(Clone, Debug)]
pub struct Plan {
    pub index: usize,
    pub cost: f64,
    /// Cost of every sampled sequence, in sampling order.
    pub costs: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    /// Predicted `s_1 .. s_H` of every sequence.
    pub traces: Vec<Vec<Vec<f64>>>,
    pub all_actions: Vec<Vec<Vec<f64>>>,
}

/// Index of the smallest value; the first one wins ties.
pub fn argmin(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    best
}

/// Samples `n_sequences` action sequences step by step (the sampler sees
/// each sequence's predicted state), unrolls them through `model` in lock
/// step, and returns the cheapest.
pub fn random_shooting<R, S, C>(
    model: &mut dyn DynamicsModel,
    env: EnvKind,
    s0: &[f64],
    cfg: &MpcConfig,
    mut sampler: S,
    cost: C,
    rng: &mut R,
) -> Result<Plan>
where
    R: Rng + ?Sized,
    S: FnMut(&[f64], &mut R) -> Vec<f64>,
    C: Fn(&[Vec<f64>], &[Vec<f64>]) -> f64,
{
    cfg.validate()?;
    let n = cfg.n_sequences;
    let mut states = vec![s0.to_vec(); n];
    let mut actions: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(cfg.horizon); n];
    let mut traces: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(cfg.horizon); n];
    for _ in 0..cfg.horizon {
        let step: Vec<Vec<f64>> = states.iter().map(|s| sampler(s, rng)).collect();
        let deltas = model.predict(&states, &step)?;
        for i in 0..n {
            states[i] = env.compose(&states[i], &deltas[i]);
            traces[i].push(states[i].clone());
        }
        for (seq, a) in actions.iter_mut().zip(step) {
            seq.push(a);
        }
    }
    let costs: Vec<f64> = traces.iter().zip(&actions).map(|(t, a)| cost(t, a)).collect();
    let index = argmin(&costs);
    Ok(Plan {
        index,
        cost: costs[index],
        actions: actions[index].clone(),
        costs,
        traces,
        all_actions: actions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushTask {
    pub goal: [f64; 2],
    pub tolerance: f64,
    pub obstacles: Vec<Obstacle>,
    pub max_steps: usize,
    /// Bounding radius of the pushed object, from its grid.
    pub object_radius: f64,
}

impl PushTask {
    pub fn validate(&self) -> Result<()> {
        let on_table = |p: [f64; 2]| (0.0..=TABLE_SIZE).contains(&p[0]) && (0.0..=TABLE_SIZE).contains(&p[1]);
        if !on_table(self.goal) {
            return Err(Error::Config("goal off the table".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Whether an object centred at `p` overlaps any obstacle.
    pub fn collides(&self, p: [f64; 2]) -> bool {
        self.obstacles.iter().any(|o| {
            let d = (p[0] - o.center[0]).hypot(p[1] - o.center[1]);
            d < o.radius + self.object_radius
        })
    }
}

/// Distance of the final predicted object position from the goal, plus the
/// collision penalty if any predicted object disc meets an obstacle.
pub fn push_cost(states: &[Vec<f64>], task: &PushTask) -> f64 {
    let Some(last) = states.last() else {
        return 0.0;
    };
    let d = (last[0] - task.goal[0]).hypot(last[1] - task.goal[1]);
    if states.iter().any(|s| task.collides([s[0], s[1]])) {
        d + COLLISION_PENALTY
    } else {
        d
    }
}

/// Negative sum of rewards along a predicted locomotion trace from `s0`.
pub fn loco_cost(s0: &[f64], states: &[Vec<f64>], actions: &[Vec<f64>]) -> f64 {
    let mut x = s0[0];
    let mut total = 0.0;
    for (s, a) in states.iter().zip(actions) {
        total += loco_reward(x, s[0], a[0]);
        x = s[0];
    }
    -total
}

/// Goal distances for pushing without and with obstacles.
pub const GOAL_RANGE: (f64, f64) = (0.1, 0.25);
pub const OBSTACLE_GOAL_RANGE: (f64, f64) = (0.24, 0.40);

/// Obstacle disc radii.
pub const OBSTACLE_RADIUS: (f64, f64) = (0.02, 0.04);

/// A start state (object at rest, effector just behind it as seen from the
/// goal) and a task for `sys`. With obstacles, one or two discs are placed
/// near the straight line from start to goal.
pub fn sample_push_task<R: Rng + ?Sized>(sys: &PushSystem, obstacles: bool, rng: &mut R) -> (PushState, PushTask) {
    let r_obj = sys.bounding_radius();
    let margin = r_obj + 0.02;
    let (lo, hi) = if obstacles { OBSTACLE_GOAL_RANGE } else { GOAL_RANGE };
    let inside = |p: [f64; 2]| p.iter().all(|&c| c >= margin && c <= TABLE_SIZE - margin);
    let (p, task) = 'outer: loop {
        let p = [rng.gen_range(margin..TABLE_SIZE - margin), rng.gen_range(margin..TABLE_SIZE - margin)];
        let dist = rng.gen_range(lo..hi);
        let phi = rng.gen_range(-PI..PI);
        let goal = [p[0] + dist * phi.cos(), p[1] + dist * phi.sin()];
        if !inside(goal) {
            continue;
        }
        let mut task = PushTask {
            goal,
            tolerance: PUSH_TOLERANCE,
            obstacles: Vec::new(),
            max_steps: if obstacles { 60 } else { 40 },
            object_radius: r_obj,
        };
        if obstacles {
            let n = rng.gen_range(1..=2);
            let mut attempts = 0;
            while task.obstacles.len() < n {
                attempts += 1;
                if attempts > 50 {
                    continue 'outer;
                }
                let radius = rng.gen_range(OBSTACLE_RADIUS.0..OBSTACLE_RADIUS.1);
                let t = rng.gen_range(0.3..0.7);
                let side = rng.gen_range(-0.03..0.03);
                let (dx, dy) = (goal[0] - p[0], goal[1] - p[1]);
                let c = [p[0] + t * dx - side * dy / dist, p[1] + t * dy + side * dx / dist];
                let probe = PushTask {
                    obstacles: vec![Obstacle { center: c, radius }],
                    ..task.clone()
                };
                // Keep a tolerance-sized clearance around the goal.
                let goal_clear = (c[0] - goal[0]).hypot(c[1] - goal[1]) > radius + r_obj + PUSH_TOLERANCE;
                if !probe.collides(p) && goal_clear {
                    task.obstacles.push(Obstacle { center: c, radius });
                }
            }
        }
        break (p, task);
    };
    let d = [task.goal[0] - p[0], task.goal[1] - p[1]];
    let l = d[0].hypot(d[1]);
    let back = r_obj + 0.01;
    let start = PushState {
        p,
        theta: rng.gen_range(-PI..PI),
        v: [0.0; 2],
        omega: 0.0,
        e: [p[0] - back * d[0] / l, p[1] - back * d[1] / l],
    };
    (start, task)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushEpisode {
    pub success: bool,
    pub steps: usize,
    pub final_distance: f64,
    /// The real object met an obstacle at some step.
    pub collided: bool,
    /// Every selected plan was collision-free whenever a free one existed.
    pub collision_sound: bool,
    pub trace: Vec<Vec<f64>>,
}

/// Probe context: `k` data-collection pushes from a fresh start of `sys`.
pub fn push_probe_context<R: Rng + ?Sized>(sys: &PushSystem, system_id: usize, k: usize, rng: &mut R) -> Context {
    let probe = collect_push_trajectory(sys, system_id, rng, k);
    Context {
        env: EnvKind::Push,
        system_id,
        window: probe.steps,
        grid: Some(sys.grid().clone()),
        side: vec![sys.mass, sys.mu],
    }
}

/// Closed-loop pushing: plan, execute the first action, replan. The model
/// is conditioned once per episode on `ctx`.
pub fn mpc_push_episode<R: Rng + ?Sized>(
    model: &mut dyn DynamicsModel,
    sys: &PushSystem,
    ctx: &Context,
    start: &PushState,
    task: &PushTask,
    cfg: &MpcConfig,
    rng: &mut R,
) -> Result<PushEpisode> {
    task.validate()?;
    model.prepare(ctx)?;
    let mut s = *start;
    let mut trace = vec![s.to_vec()];
    let mut collided = false;
    let mut sound = true;
    let dist = |s: &PushState| (s.p[0] - task.goal[0]).hypot(s.p[1] - task.goal[1]);
    let mut steps = 0;
    while steps < task.max_steps && dist(&s) > task.tolerance {
        let plan = random_shooting(
            model,
            EnvKind::Push,
            &s.to_vec(),
            cfg,
            |st: &[f64], r: &mut R| sample_push_action(sys, &PushState::from_slice(st), r).to_vec(),
            |states: &[Vec<f64>], _: &[Vec<f64>]| push_cost(states, task),
            rng,
        )?;
        if !task.obstacles.is_empty() {
            let hits: Vec<bool> = plan
                .traces
                .iter()
                .map(|t| t.iter().any(|x| task.collides([x[0], x[1]])))
                .collect();
            if hits[plan.index] && hits.iter().any(|h| !h) {
                sound = false;
            }
        }
        for a in plan.actions.iter().take(cfg.replan_every) {
            s = push_step(sys, &s, [a[0], a[1]]);
            steps += 1;
            collided |= task.collides(s.p);
            trace.push(s.to_vec());
            if dist(&s) <= task.tolerance {
                break;
            }
        }
    }
    let final_distance = dist(&s);
    Ok(PushEpisode {
        success: final_distance <= task.tolerance && !collided,
        steps,
        final_distance,
        collided,
        collision_sound: sound,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocoEpisode {
    pub total_return: f64,
    pub steps: Vec<Transition>,
    pub rewards: Vec<f64>,
}

/// Context for a locomotion step: the last `k` transitions and the true
/// terrain parameter under the current position.
pub fn loco_context(env: EnvKind, sys: &LocoSystem, history: &[Transition], state: &LocoState, k: usize) -> Context {
    Context {
        env,
        system_id: 0,
        window: history[history.len().saturating_sub(k)..].to_vec(),
        grid: None,
        side: vec![sys.param_at(state.x)],
    }
}

/// `T` steps of MPC on `sys`; `z` is recomputed from the most recent `k`
/// steps before every plan and held fixed over the planning horizon.
#[allow(clippy::too_many_arguments)]
pub fn mpc_loco_episode<R: Rng + ?Sized>(
    model: &mut dyn DynamicsModel,
    env: EnvKind,
    sys: &LocoSystem,
    cfg: &MpcConfig,
    k: usize,
    t_max: usize,
    rng: &mut R,
) -> Result<LocoEpisode> {
    let mut s = LocoState::default();
    let mut steps: Vec<Transition> = Vec::with_capacity(t_max);
    let mut rewards = Vec::with_capacity(t_max);
    while steps.len() < t_max {
        let ctx = loco_context(env, sys, &steps, &s, k);
        model.prepare(&ctx)?;
        let s0 = s.to_vec();
        let plan = random_shooting(
            model,
            env,
            &s0,
            cfg,
            |_: &[f64], r: &mut R| vec![r.gen_range(-1.0..=1.0)],
            |states: &[Vec<f64>], actions: &[Vec<f64>]| loco_cost(&s0, states, actions),
            rng,
        )?;
        for a in plan.actions.iter().take(cfg.replan_every) {
            if steps.len() >= t_max {
                break;
            }
            let (next, r) = loco_step(sys, &s, a[0]);
            let cur = s.to_vec();
            let delta = env.diff(&next.to_vec(), &cur);
            steps.push(Transition {
                state: cur.clone(),
                action: a.clone(),
                delta: delta.clone(),
            });
            rewards.push(r);
            s = LocoState::from_slice(&env.compose(&cur, &delta));
        }
    }
    Ok(LocoEpisode {
        total_return: rewards.iter().sum(),
        steps,
        rewards,
    })
}

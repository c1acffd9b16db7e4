//! Evaluation: prediction error, pushing MPC and locomotion returns.

use std::collections::HashMap;

use crate::env::{sample_loco_system, sample_push_system, EnvKind, SystemSpec};
use crate::error::{Error, Result};
use crate::model::{euclid, Context, DynamicsModel, EnvOracle};
use crate::planner::{mpc_loco_episode, mpc_push_episode, push_probe_context, sample_push_task, MpcConfig, PushEpisode};
use crate::rng::{stream_rng, streams};

use super::data::{Episodes, EvalSplit};
use super::metrics::MetricsRow;

/// Mean errors of `h`-step open-loop predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionError {
    pub horizon: usize,
    /// Euclidean error of the position components.
    pub position: f64,
    /// Euclidean error of the full state residual.
    pub full: f64,
    pub count: usize,
}

fn position_dims(env: EnvKind) -> usize {
    match env {
        EnvKind::Push => 2,
        _ => 1,
    }
}

/// For every trajectory and every supervised start `t` with `t + h` in
/// range, conditions on the context, rolls the model through the recorded
/// actions from the true `s_t` and compares with the true `s_{t+h}`.
pub fn eval_prediction(model: &mut dyn DynamicsModel, eps: &Episodes, horizons: &[usize]) -> Result<Vec<PredictionError>> {
    let env = eps.env.ok_or_else(|| Error::Config("episodes without an environment".into()))?;
    let pd = position_dims(env);
    let mut sums = vec![(0.0, 0.0, 0usize); horizons.len()];
    for (traj, ctx) in eps.trajectories.iter().zip(&eps.contexts) {
        model.prepare(ctx)?;
        let states = traj.states(env);
        for (hi, &h) in horizons.iter().enumerate() {
            if h == 0 {
                return Err(Error::Config("horizon must be positive".into()));
            }
            let starts: Vec<usize> = (eps.first..traj.len()).filter(|t| t + h <= traj.len()).collect();
            if starts.is_empty() {
                continue;
            }
            let mut cur: Vec<Vec<f64>> = starts.iter().map(|&t| states[t].clone()).collect();
            for j in 0..h {
                let actions: Vec<Vec<f64>> = starts.iter().map(|&t| traj.steps[t + j].action.clone()).collect();
                let d = model.predict(&cur, &actions)?;
                for (s, d) in cur.iter_mut().zip(&d) {
                    *s = env.compose(s, d);
                }
            }
            for (s, &t) in cur.iter().zip(&starts) {
                let truth = &states[t + h];
                let r = env.diff(s, truth);
                let acc = &mut sums[hi];
                acc.0 += euclid(&r[..pd], &vec![0.0; pd]);
                acc.1 += euclid(&r, &vec![0.0; r.len()]);
                acc.2 += 1;
            }
        }
    }
    Ok(horizons
        .iter()
        .zip(sums)
        .map(|(&horizon, (p, f, n))| PredictionError {
            horizon,
            position: p / n.max(1) as f64,
            full: f / n.max(1) as f64,
            count: n,
        })
        .collect())
}

/// Outcome of repeated pushing MPC trials.
#[derive(Clone, Debug, PartialEq)]
pub struct PushMpcReport {
    pub trials: usize,
    pub successes: usize,
    /// Real-environment obstacle contacts.
    pub collisions: usize,
    /// Every selected plan avoided predicted collisions when it could.
    pub collision_sound: bool,
    pub final_distances: Vec<f64>,
}

impl PushMpcReport {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }

    /// Reduces per-trial episodes, in trial order.
    pub fn from_episodes(eps: &[PushEpisode]) -> Self {
        Self {
            trials: eps.len(),
            successes: eps.iter().filter(|e| e.success).count(),
            collisions: eps.iter().filter(|e| e.collided).count(),
            collision_sound: eps.iter().all(|e| e.collision_sound),
            final_distances: eps.iter().map(|e| e.final_distance).collect(),
        }
    }
}

/// System ids used by evaluation episodes start here, far from dataset ids.
pub const EVAL_ID_BASE: usize = 1 << 30;

fn split_salt(split: EvalSplit) -> usize {
    match split {
        EvalSplit::Seen => 0,
        EvalSplit::Novel => 1 << 20,
    }
}

/// Pushing trial `i` of `split`. The system, probe context, task and
/// planner noise come from streams keyed by `(seed, i)`, so every model
/// faces the same tasks and trials can run in any order.
#[allow(clippy::too_many_arguments)]
pub fn push_mpc_trial(
    model: &mut dyn DynamicsModel,
    split: EvalSplit,
    obstacles: bool,
    i: usize,
    k: usize,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<PushEpisode> {
    mpc.validate()?;
    let salt = split_salt(split) + if obstacles { 1 << 21 } else { 0 };
    let key = (salt + i) as u64;
    let mut rng = stream_rng(seed, streams::EVAL, key);
    let sys = sample_push_system(&mut rng, split.env_split());
    let ctx = push_probe_context(&sys, EVAL_ID_BASE + salt + i, k, &mut stream_rng(seed, streams::PROBE, key));
    let (start, task) = sample_push_task(&sys, obstacles, &mut rng);
    let mut plan_rng = stream_rng(seed, streams::PLANNER, key);
    mpc_push_episode(model, &sys, &ctx, &start, &task, mpc, &mut plan_rng)
}

/// Trials `0..trials` of [`push_mpc_trial`].
pub fn eval_push_mpc(
    model: &mut dyn DynamicsModel,
    split: EvalSplit,
    obstacles: bool,
    trials: usize,
    k: usize,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<PushMpcReport> {
    let eps = (0..trials)
        .map(|i| push_mpc_trial(model, split, obstacles, i, k, mpc, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(PushMpcReport::from_episodes(&eps))
}

/// Total return of locomotion episode `i` on a fresh terrain of `split`.
#[allow(clippy::too_many_arguments)]
pub fn loco_episode_return(
    model: &mut dyn DynamicsModel,
    env: EnvKind,
    split: EvalSplit,
    i: usize,
    len: usize,
    segments: usize,
    k: usize,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<f64> {
    let variant = env
        .loco_variant()
        .ok_or_else(|| Error::Config("locomotion evaluation needs slope or pier".into()))?;
    mpc.validate()?;
    let key = (split_salt(split) + i) as u64;
    let mut rng = stream_rng(seed, streams::EVAL, key);
    let sys = sample_loco_system(&mut rng, variant, split.env_split(), segments);
    let mut plan_rng = stream_rng(seed, streams::PLANNER, key);
    Ok(mpc_loco_episode(model, env, &sys, mpc, k, len, &mut plan_rng)?.total_return)
}

/// Returns of episodes `0..episodes` of [`loco_episode_return`].
#[allow(clippy::too_many_arguments)]
pub fn eval_loco(
    model: &mut dyn DynamicsModel,
    env: EnvKind,
    split: EvalSplit,
    episodes: usize,
    len: usize,
    segments: usize,
    k: usize,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|i| loco_episode_return(model, env, split, i, len, segments, k, mpc, seed))
        .collect()
}

/// Prediction errors as metrics rows (`pos_err_t{h}` and `state_err_t{h}`).
/// Pushing position errors are reported in centimetres; everything else
/// stays in environment units.
pub fn prediction_rows(method: &str, env: EnvKind, split: EvalSplit, errs: &[PredictionError], seed: u64, step: u64) -> Vec<MetricsRow> {
    let pos_scale = if env == EnvKind::Push { 100.0 } else { 1.0 };
    errs.iter()
        .flat_map(|e| {
            [
                MetricsRow::new(method, split.name(), &format!("pos_err_t{}", e.horizon), e.position * pos_scale, seed, step),
                MetricsRow::new(method, split.name(), &format!("state_err_t{}", e.horizon), e.full, seed, step),
            ]
        })
        .collect()
}

/// Ground-truth dynamics for any system in a set of episodes, selected by
/// the context's system id on `prepare`.
#[derive(Clone, Debug)]
pub struct EpisodeOracle {
    systems: HashMap<usize, SystemSpec>,
    current: Option<EnvOracle>,
}

impl EpisodeOracle {
    pub fn new<'a>(eps: impl IntoIterator<Item = &'a Episodes>) -> Self {
        let mut systems = HashMap::new();
        for e in eps {
            for (ctx, sys) in e.contexts.iter().zip(&e.systems) {
                systems.insert(ctx.system_id, SystemSpec::Push(sys.clone()));
            }
        }
        Self { systems, current: None }
    }
}

impl DynamicsModel for EpisodeOracle {
    fn prepare(&mut self, ctx: &Context) -> Result<()> {
        let system = self
            .systems
            .get(&ctx.system_id)
            .ok_or_else(|| Error::Config(format!("oracle has no system {}", ctx.system_id)))?
            .clone();
        self.current = Some(EnvOracle { system });
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.current
            .as_mut()
            .ok_or_else(|| Error::Config("oracle used before prepare".into()))?
            .predict(states, actions)
    }
}

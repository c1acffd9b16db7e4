//! Shared plumbing for learned dynamics models: observation contexts,
//! training items, the inference adapter, and rollouts through a model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, AdamState, Bound, Graph, NodeId, ParamSet, Tensor};
use crate::env::{
    interaction_window, loco_step, obs_of, push_step, EnvKind, Grid, LocoState, PushState,
    SystemSpec, Transition, THETA_INDEX,
};
use crate::error::{Error, Result};
use crate::norm::Normalizer;

/// Everything a model may observe about a system besides the current state.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub env: EnvKind,
    pub system_id: usize,
    /// Most recent interaction steps, oldest first (at most `k` are used).
    pub window: Vec<Transition>,
    /// Canonical occupancy grid (pushing only).
    pub grid: Option<Grid>,
    /// Ground-truth physical parameters, only read by the oracle ensemble:
    /// `[mass, mu]` for pushing, the local terrain parameter for locomotion.
    pub side: Vec<f64>,
}

impl Context {
    /// Flattened, front-padded window of the last `k` steps.
    pub fn flat_window(&self, k: usize) -> Vec<f64> {
        interaction_window(&self.window, self.window.len(), k, self.env.window_step_dim())
    }
}

/// One supervised transition together with its system context.
#[derive(Clone, Debug)]
pub struct Item {
    pub ctx: Arc<Context>,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub delta: Vec<f64>,
}

/// A training batch: transitions plus shape-only grids for the
/// reconstruction auxiliary (ignored by models without a decoder).
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub items: Vec<Item>,
    pub aux_grids: Vec<Grid>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean squared error (default training objective).
    Mse,
    /// Mean unsquared Euclidean norm per sample.
    L2,
}

/// Prediction loss on normalised targets.
pub fn prediction_loss(g: &mut Graph, pred: NodeId, target: NodeId, obj: Objective) -> NodeId {
    match obj {
        Objective::Mse => g.mse(pred, target),
        Objective::L2 => {
            let d = g.sub(pred, target);
            let n = g.row_norm(d);
            g.mean(n)
        }
    }
}

/// Euclidean norm of a residual.
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Losses {
    pub total: Option<NodeId>,
    pub pred: Option<NodeId>,
    pub aux: Option<NodeId>,
}

impl Losses {
    pub fn total(&self) -> NodeId {
        self.total.expect("loss graph built")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hyperdynamics,
    Xyz,
    Direct,
    Recurrent,
    Fomaml,
    ExpertEns,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Hyperdynamics,
        Method::Xyz,
        Method::Direct,
        Method::Recurrent,
        Method::Fomaml,
        Method::ExpertEns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hyperdynamics => "hyperdynamics",
            Method::Xyz => "xyz",
            Method::Direct => "direct",
            Method::Recurrent => "recurrent",
            Method::Fomaml => "fomaml",
            Method::ExpertEns => "expert_ens",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Inference adapter used by planning and evaluation.
pub trait DynamicsModel {
    /// Conditions the model on a system (encodes latents, adapts, retrieves).
    fn prepare(&mut self, ctx: &Context) -> Result<()>;
    /// Full-state deltas for a batch of (state, action) pairs.
    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// A trainable model.
pub trait Model: DynamicsModel {
    fn method(&self) -> Method;
    fn env(&self) -> EnvKind;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Fits input/output/window normalisers on training items.
    fn fit_normalizers(&mut self, items: &[Item]);
    /// Differentiable training loss.
    fn loss(&self, g: &mut Graph, bound: &Bound, batch: &Batch) -> Result<Losses>;
    /// Normalisers and any other non-trainable state, as named tensors.
    fn aux_state(&self) -> ParamSet;
    fn load_aux_state(&mut self, state: &ParamSet) -> Result<()>;
    /// Hidden sizes of the network that maps (state, action) to a delta.
    fn forward_hidden(&self) -> Vec<usize>;

    /// Models made of independently trained parts report which part an
    /// item belongs to, so batches can be drawn per part.
    fn group_of(&self, _item: &Item) -> Option<usize> {
        None
    }

    /// One optimizer step on `batch`.
    fn train_step(&mut self, batch: &Batch, adam: &mut AdamState, clip: f64) -> Result<StepStats> {
        gradient_step(self, batch, adam, clip)
    }
}

/// Loss values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub total: f64,
    pub pred: f64,
    pub aux: Option<f64>,
}

impl StepStats {
    pub fn from_graph(g: &Graph, l: &Losses) -> Self {
        let v = |n: NodeId| g.value(n).data()[0];
        Self {
            total: v(l.total()),
            pred: l.pred.map_or(f64::NAN, v),
            aux: l.aux.map(v),
        }
    }
}

/// Backprop through `model.loss`, global-norm clipping, one Adam update.
pub fn gradient_step<M: Model + ?Sized>(
    model: &mut M,
    batch: &Batch,
    adam: &mut AdamState,
    clip: f64,
) -> Result<StepStats> {
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let losses = model.loss(&mut g, &bound, batch)?;
    let stats = StepStats::from_graph(&g, &losses);
    if !stats.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    g.backward(losses.total());
    let mut grads = model.params().grads(&g, &bound);
    if clip > 0.0 {
        clip_global_norm(&mut grads, clip);
    }
    adam.step(model.params_mut(), &grads)?;
    Ok(stats)
}

/// State features for models that see orientation explicitly:
/// pushing -> `[obs, cos theta, sin theta]`, locomotion -> state as is.
pub fn state_features(env: EnvKind, state: &[f64]) -> Vec<f64> {
    match env {
        EnvKind::Push => {
            let mut f = obs_of(state);
            let th = state[THETA_INDEX];
            f.push(th.cos());
            f.push(th.sin());
            f
        }
        _ => state.to_vec(),
    }
}

pub fn state_features_dim(env: EnvKind) -> usize {
    match env {
        EnvKind::Push => env.state_dim() + 1,
        _ => env.state_dim(),
    }
}

/// Normalisers carried by every model.
#[derive(Clone, Debug, PartialEq)]
pub struct Norms {
    pub x: Normalizer,
    pub y: Normalizer,
    pub w: Normalizer,
}

impl Norms {
    pub fn identity(x: usize, y: usize, w: usize) -> Self {
        Self {
            x: Normalizer::identity(x),
            y: Normalizer::identity(y),
            w: Normalizer::identity(w),
        }
    }

    pub fn to_params(&self, prefix: &str) -> ParamSet {
        let mut p = ParamSet::new();
        for (name, n) in [("x", &self.x), ("y", &self.y), ("w", &self.w)] {
            p.insert(format!("{prefix}.{name}"), Tensor::vector(n.to_flat()));
        }
        p
    }

    pub fn from_params(&mut self, prefix: &str, p: &ParamSet) -> Result<()> {
        for (name, n) in [("x", &mut self.x), ("y", &mut self.y), ("w", &mut self.w)] {
            let key = format!("{prefix}.{name}");
            let t = p
                .get(&key)
                .ok_or_else(|| Error::Format(format!("missing tensor {key}")))?;
            if t.len() != 2 * n.dim() {
                return Err(Error::Format(format!("tensor {key} has wrong length")));
            }
            *n = Normalizer::from_flat(t.data());
        }
        Ok(())
    }
}

/// Rolls `actions` through the model from `s0`; returns `s_1 .. s_H`.
pub fn unroll(
    model: &mut dyn DynamicsModel,
    env: EnvKind,
    s0: &[f64],
    actions: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut s = s0.to_vec();
    let mut out = Vec::with_capacity(actions.len());
    for a in actions {
        let d = model.predict(std::slice::from_ref(&s), std::slice::from_ref(a))?;
        s = env.compose(&s, &d[0]);
        out.push(s.clone());
    }
    Ok(out)
}

/// Unrolls many action sequences of equal length in lock step.
/// Returns `[sequence][step]` states.
pub fn unroll_batch(
    model: &mut dyn DynamicsModel,
    env: EnvKind,
    s0: &[f64],
    seqs: &[Vec<Vec<f64>>],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let h = seqs.first().map_or(0, Vec::len);
    if seqs.iter().any(|s| s.len() != h) {
        return Err(Error::Config("action sequences differ in length".into()));
    }
    let mut states = vec![s0.to_vec(); seqs.len()];
    let mut out = vec![Vec::with_capacity(h); seqs.len()];
    for t in 0..h {
        let actions: Vec<Vec<f64>> = seqs.iter().map(|s| s[t].clone()).collect();
        let d = model.predict(&states, &actions)?;
        for (i, s) in states.iter_mut().enumerate() {
            *s = env.compose(s, &d[i]);
            out[i].push(s.clone());
        }
    }
    Ok(out)
}

/// The true environment behind the model interface.
#[derive(Clone, Debug)]
pub struct EnvOracle {
    pub system: SystemSpec,
}

impl DynamicsModel for EnvOracle {
    fn prepare(&mut self, _: &Context) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(states
            .iter()
            .zip(actions)
            .map(|(s, a)| match &self.system {
                SystemSpec::Push(sys) => {
                    let next = push_step(sys, &PushState::from_slice(s), [a[0], a[1]]);
                    EnvKind::Push.diff(&next.to_vec(), s)
                }
                SystemSpec::Loco(sys) => {
                    let (next, _) = loco_step(sys, &LocoState::from_slice(s), a[0]);
                    EnvKind::Slope.diff(&next.to_vec(), s)
                }
            })
            .collect())
    }
}

/// Predicts a zero delta for everything.
#[derive(Clone, Debug)]
pub struct ZeroModel {
    pub dim: usize,
}

impl DynamicsModel for ZeroModel {
    fn prepare(&mut self, _: &Context) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], _: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![0.0; self.dim]; states.len()])
    }
}

/// Builds `[rows, cols]` from per-row feature vectors.
pub fn rows_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows)
}

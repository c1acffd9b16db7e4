//! Comparison models. All of them map (state, action) to a delta through an
//! MLP with the same hidden sizes as the generated expert.
//!
//! * XYZ: one global MLP over the state and action only.
//! * Direct: the same encoders as HyperDynamics, with `z` appended to the
//!   input of one global MLP.
//! * Recurrent: a GRU over the interaction window, final state appended.
//! * FOMAML: meta-learned MLP adapted by SGD on the window, first-order
//!   outer updates.
//! * Expert-Ens: one MLP per training shape (pushing) or terrain bin
//!   (locomotion), fed ground-truth side information, retrieved by nearest
//!   canonical grid or by the true local terrain parameter.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    clip_global_norm, flatten_mlp, gru_unroll, init_gru, init_mlp, mlp_apply_flat, mlp_forward,
    AdamState, Bound, Graph, GruSpec, MlpSpec, NodeId, ParamSet, Tensor,
};
use crate::encoders::{ContextCode, SystemEncoder};
use crate::env::{EnvKind, Grid, Split, Transition, THETA_INDEX, TRAIN_SHAPES};
use crate::error::{Error, Result};
use crate::hypernet::HyperConfig;
use crate::model::{
    prediction_loss, state_features, state_features_dim, Batch, Context, DynamicsModel, Item,
    Losses, Method, Model, Norms, Objective, StepStats,
};
use crate::norm::Normalizer;

pub const HEAD: &str = "head";
pub const GRU: &str = "gru";
pub const META: &str = "meta";

/// Settings that only concern the baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub gru_hidden: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
    /// Locomotion experts, evenly spaced over the training range.
    pub loco_experts: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            gru_hidden: 16,
            inner_lr: 0.01,
            inner_steps: 5,
            loco_experts: 5,
        }
    }
}

/// `[state features, action]`.
pub fn base_input(env: EnvKind, state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut x = state_features(env, state);
    x.extend_from_slice(action);
    x
}

pub fn base_input_dim(env: EnvKind) -> usize {
    state_features_dim(env) + env.action_dim()
}

fn head_spec(input: usize, hidden: &[usize], output: usize) -> Result<MlpSpec> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    MlpSpec::leaky(s)
}

fn check_batch(batch: &Batch) -> Result<()> {
    if batch.items.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    Ok(())
}

fn not_prepared() -> Error {
    Error::Config("model used before prepare()".into())
}

fn target_rows(norms: &Norms, items: &[Item]) -> Tensor {
    let ys: Vec<Vec<f64>> = items.iter().map(|it| norms.y.apply(&it.delta)).collect();
    Tensor::from_rows(&ys)
}

fn fit_xy(norms: &mut Norms, dim: usize, xs: &[Vec<f64>], items: &[Item]) {
    norms.x = Normalizer::fit(dim, xs.iter().map(Vec::as_slice));
    let sd = items.first().map_or(0, |it| it.delta.len());
    norms.y = Normalizer::fit(sd, items.iter().map(|it| it.delta.as_slice()));
}

/// Graph-free evaluation of a head over normalised inputs.
fn apply_head(spec: &MlpSpec, flat: &[f64], norms: &Norms, xs: &[f64]) -> Vec<Vec<f64>> {
    mlp_apply_flat(spec, flat, xs)
        .chunks(spec.output_dim())
        .map(|r| norms.y.invert(r))
        .collect()
}

// ---------------------------------------------------------------- XYZ

pub struct Xyz {
    pub env: EnvKind,
    pub objective: Objective,
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub norms: Norms,
    flat: Option<Vec<f64>>,
}

impl Xyz {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Self> {
        let env = cfg.env;
        let spec = head_spec(base_input_dim(env), &cfg.target_hidden, env.state_dim())?;
        let mut params = ParamSet::new();
        init_mlp(&spec, HEAD, &mut params, rng, 1.0);
        Ok(Self {
            env,
            objective: cfg.objective,
            norms: Norms::identity(spec.input_dim(), env.state_dim(), 0),
            spec,
            params,
            flat: None,
        })
    }
}

impl DynamicsModel for Xyz {
    fn prepare(&mut self, _: &Context) -> Result<()> {
        self.flat = Some(flatten_mlp(&self.spec, HEAD, &self.params)?);
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let flat = self.flat.as_ref().ok_or_else(not_prepared)?;
        let mut xs = Vec::with_capacity(states.len() * self.spec.input_dim());
        for (s, a) in states.iter().zip(actions) {
            self.norms.x.apply_into(&base_input(self.env, s, a), &mut xs);
        }
        Ok(apply_head(&self.spec, flat, &self.norms, &xs))
    }
}

impl Model for Xyz {
    fn method(&self) -> Method {
        Method::Xyz
    }

    fn env(&self) -> EnvKind {
        self.env
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.flat = None;
        &mut self.params
    }

    fn fit_normalizers(&mut self, items: &[Item]) {
        let xs: Vec<Vec<f64>> = items.iter().map(|it| base_input(self.env, &it.state, &it.action)).collect();
        fit_xy(&mut self.norms, self.spec.input_dim(), &xs, items);
        self.flat = None;
    }

    fn loss(&self, g: &mut Graph, bound: &Bound, batch: &Batch) -> Result<Losses> {
        check_batch(batch)?;
        let xs: Vec<Vec<f64>> = batch
            .items
            .iter()
            .map(|it| self.norms.x.apply(&base_input(self.env, &it.state, &it.action)))
            .collect();
        let x = g.leaf(Tensor::from_rows(&xs));
        let pred = mlp_forward(g, &self.spec, HEAD, bound, x)?;
        let y = g.leaf(target_rows(&self.norms, &batch.items));
        let l = prediction_loss(g, pred, y, self.objective);
        Ok(Losses {
            total: Some(l),
            pred: Some(l),
            aux: None,
        })
    }

    fn aux_state(&self) -> ParamSet {
        self.norms.to_params("norm")
    }

    fn load_aux_state(&mut self, state: &ParamSet) -> Result<()> {
        self.flat = None;
        self.norms.from_params("norm", state)
    }

    fn forward_hidden(&self) -> Vec<usize> {
        self.spec.hidden().to_vec()
    }
}

// ---------------------------------------------------------------- Direct

struct DirectPrepared {
    code: ContextCode,
    head: Vec<f64>,
}

pub struct Direct {
    pub env: EnvKind,
    pub cfg: HyperConfig,
    pub encoder: SystemEncoder,
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub norms: Norms,
    prepared: Option<DirectPrepared>,
}

impl Direct {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let cfg = HyperConfig {
            canonical_shape: false,
            ..cfg.clone()
        };
        let env = cfg.env;
        let encoder = cfg.system_encoder()?;
        let spec = head_spec(base_input_dim(env) + cfg.z_dim(), &cfg.target_hidden, env.state_dim())?;
        let mut params = ParamSet::new();
        encoder.init(&mut params, rng);
        init_mlp(&spec, HEAD, &mut params, rng, 1.0);
        Ok(Self {
            env,
            norms: Norms::identity(base_input_dim(env), env.state_dim(), encoder.eint.window_len()),
            cfg,
            encoder,
            spec,
            params,
            prepared: None,
        })
    }
}

impl DynamicsModel for Direct {
    fn prepare(&mut self, ctx: &Context) -> Result<()> {
        self.prepared = Some(DirectPrepared {
            code: self.encoder.encode_context(&self.params, ctx, &self.norms.w)?,
            head: flatten_mlp(&self.spec, HEAD, &self.params)?,
        });
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let prep = self.prepared.as_mut().ok_or_else(not_prepared)?;
        let mut xs = Vec::with_capacity(states.len() * self.spec.input_dim());
        for (s, a) in states.iter().zip(actions) {
            let theta = if self.env == EnvKind::Push { s[THETA_INDEX] } else { 0.0 };
            self.norms.x.apply_into(&base_input(self.env, s, a), &mut xs);
            xs.extend(prep.code.z(&self.encoder, theta)?);
        }
        Ok(apply_head(&self.spec, &prep.head, &self.norms, &xs))
    }
}

impl Model for Direct {
    fn method(&self) -> Method {
        Method::Direct
    }

    fn env(&self) -> EnvKind {
        self.env
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.prepared = None;
        &mut self.params
    }

    fn fit_normalizers(&mut self, items: &[Item]) {
        let xs: Vec<Vec<f64>> = items.iter().map(|it| base_input(self.env, &it.state, &it.action)).collect();
        fit_xy(&mut self.norms, base_input_dim(self.env), &xs, items);
        let ws: Vec<Vec<f64>> = items.iter().map(|it| it.ctx.flat_window(self.cfg.k)).collect();
        self.norms.w = Normalizer::fit(self.encoder.eint.window_len(), ws.iter().map(Vec::as_slice));
        self.prepared = None;
    }

    fn loss(&self, g: &mut Graph, bound: &Bound, batch: &Batch) -> Result<Losses> {
        check_batch(batch)?;
        let enc = self.encoder.encode_items(g, bound, &batch.items, &self.norms.w)?;
        let xs: Vec<Vec<f64>> = batch
            .items
            .iter()
            .map(|it| self.norms.x.apply(&base_input(self.env, &it.state, &it.action)))
            .collect();
        let x = g.leaf(Tensor::from_rows(&xs));
        let xz = g.concat(&[x, enc.z]);
        let pred = mlp_forward(g, &self.spec, HEAD, bound, xz)?;
        let y = g.leaf(target_rows(&self.norms, &batch.items));
        let pred_loss = prediction_loss(g, pred, y, self.cfg.objective);
        let aux = self.encoder.aux_loss(g, bound, &enc, &batch.aux_grids)?;
        let total = match aux {
            Some(a) => {
                let w = g.scale(a, self.cfg.aux_weight);
                g.add(pred_loss, w)
            }
            None => pred_loss,
        };
        Ok(Losses {
            total: Some(total),
            pred: Some(pred_loss),
            aux,
        })
    }

    fn aux_state(&self) -> ParamSet {
        self.norms.to_params("norm")
    }

    fn load_aux_state(&mut self, state: &ParamSet) -> Result<()> {
        self.prepared = None;
        self.norms.from_params("norm", state)
    }

    fn forward_hidden(&self) -> Vec<usize> {
        self.spec.hidden().to_vec()
    }
}

// ---------------------------------------------------------------- Recurrent

pub struct Recurrent {
    pub env: EnvKind,
    pub objective: Objective,
    pub k: usize,
    pub gru: GruSpec,
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub norms: Norms,
    prepared: Option<(Vec<f64>, Vec<f64>)>,
}

impl Recurrent {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, extra: &BaselineConfig, rng: &mut R) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::Config("the recurrent baseline needs a non-empty history".into()));
        }
        let env = cfg.env;
        let gru = GruSpec {
            input: env.window_step_dim(),
            hidden: extra.gru_hidden,
        };
        let spec = head_spec(extra.gru_hidden + base_input_dim(env), &cfg.target_hidden, env.state_dim())?;
        let mut params = ParamSet::new();
        init_gru(gru, GRU, &mut params, rng);
        init_mlp(&spec, HEAD, &mut params, rng, 1.0);
        Ok(Self {
            env,
            objective: cfg.objective,
            k: cfg.k,
            norms: Norms::identity(base_input_dim(env), env.state_dim(), cfg.k * env.window_step_dim()),
            gru,
            spec,
            params,
            prepared: None,
        })
    }

    /// Final GRU state `[B, hidden]` over the normalised windows.
    fn encode(&self, g: &mut Graph, bound: &Bound, windows: &[Vec<f64>]) -> Result<NodeId> {
        let w = g.leaf(Tensor::from_rows(windows));
        let sd = self.gru.input;
        let xs: Vec<NodeId> = (0..self.k).map(|t| g.slice(w, t * sd, sd)).collect();
        let h0 = g.leaf(Tensor::zeros(&[windows.len(), self.gru.hidden]));
        gru_unroll(g, self.gru, GRU, bound, h0, &xs)
    }
}

impl DynamicsModel for Recurrent {
    fn prepare(&mut self, ctx: &Context) -> Result<()> {
        let window = self.norms.w.apply(&ctx.flat_window(self.k));
        let gp = self.params.with_prefix(GRU);
        let mut g = Graph::new();
        let b = gp.bind(&mut g);
        let h = self.encode(&mut g, &b, &[window])?;
        let h = g.value(h).data().to_vec();
        self.prepared = Some((h, flatten_mlp(&self.spec, HEAD, &self.params)?));
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (h, head) = self.prepared.as_ref().ok_or_else(not_prepared)?;
        let mut xs = Vec::with_capacity(states.len() * self.spec.input_dim());
        for (s, a) in states.iter().zip(actions) {
            xs.extend_from_slice(h);
            self.norms.x.apply_into(&base_input(self.env, s, a), &mut xs);
        }
        Ok(apply_head(&self.spec, head, &self.norms, &xs))
    }
}

impl Model for Recurrent {
    fn method(&self) -> Method {
        Method::Recurrent
    }

    fn env(&self) -> EnvKind {
        self.env
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.prepared = None;
        &mut self.params
    }

    fn fit_normalizers(&mut self, items: &[Item]) {
        let xs: Vec<Vec<f64>> = items.iter().map(|it| base_input(self.env, &it.state, &it.action)).collect();
        fit_xy(&mut self.norms, base_input_dim(self.env), &xs, items);
        let ws: Vec<Vec<f64>> = items.iter().map(|it| it.ctx.flat_window(self.k)).collect();
        self.norms.w = Normalizer::fit(self.k * self.gru.input, ws.iter().map(Vec::as_slice));
        self.prepared = None;
    }

    fn loss(&self, g: &mut Graph, bound: &Bound, batch: &Batch) -> Result<Losses> {
        check_batch(batch)?;
        let windows: Vec<Vec<f64>> = batch
            .items
            .iter()
            .map(|it| self.norms.w.apply(&it.ctx.flat_window(self.k)))
            .collect();
        let h = self.encode(g, bound, &windows)?;
        let xs: Vec<Vec<f64>> = batch
            .items
            .iter()
            .map(|it| self.norms.x.apply(&base_input(self.env, &it.state, &it.action)))
            .collect();
        let x = g.leaf(Tensor::from_rows(&xs));
        let hx = g.concat(&[h, x]);
        let pred = mlp_forward(g, &self.spec, HEAD, bound, hx)?;
        let y = g.leaf(target_rows(&self.norms, &batch.items));
        let l = prediction_loss(g, pred, y, self.objective);
        Ok(Losses {
            total: Some(l),
            pred: Some(l),
            aux: None,
        })
    }

    fn aux_state(&self) -> ParamSet {
        self.norms.to_params("norm")
    }

    fn load_aux_state(&mut self, state: &ParamSet) -> Result<()> {
        self.prepared = None;
        self.norms.from_params("norm", state)
    }

    fn forward_hidden(&self) -> Vec<usize> {
        self.spec.hidden().to_vec()
    }
}

// ---------------------------------------------------------------- FOMAML

/// `steps` plain gradient steps of size `lr` on `loss`, starting at `params`.
pub fn sgd_adapt<F>(params: &ParamSet, loss: F, lr: f64, steps: usize) -> Result<ParamSet>
where
    F: Fn(&mut Graph, &Bound) -> Result<NodeId>,
{
    let mut p = params.clone();
    if lr == 0.0 {
        return Ok(p);
    }
    for _ in 0..steps {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let l = loss(&mut g, &b)?;
        g.backward(l);
        let grads = p.grads(&g, &b);
        for ((_, t), gr) in p.iter_mut().zip(&grads) {
            for (v, d) in t.data_mut().iter_mut().zip(gr.data()) {
                *v -= lr * d;
            }
        }
    }
    Ok(p)
}

pub struct Fomaml {
    pub env: EnvKind,
    pub objective: Objective,
    pub k: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub norms: Norms,
    prepared: Option<Vec<f64>>,
}

impl Fomaml {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, extra: &BaselineConfig, rng: &mut R) -> Result<Self> {
        let env = cfg.env;
        let spec = head_spec(base_input_dim(env), &cfg.target_hidden, env.state_dim())?;
        let mut params = ParamSet::new();
        init_mlp(&spec, META, &mut params, rng, 1.0);
        Ok(Self {
            env,
            objective: cfg.objective,
            k: cfg.k,
            inner_lr: extra.inner_lr,
            inner_steps: extra.inner_steps,
            norms: Norms::identity(spec.input_dim(), env.state_dim(), 0),
            spec,
            params,
            prepared: None,
        })
    }

    fn rows(&self, data: impl Iterator<Item = (Vec<f64>, Vec<f64>, Vec<f64>)>) -> (Tensor, Tensor) {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (s, a, d) in data {
            xs.push(self.norms.x.apply(&base_input(self.env, &s, &a)));
            ys.push(self.norms.y.apply(&d));
        }
        (Tensor::from_rows(&xs), Tensor::from_rows(&ys))
    }

    fn support<'a>(&self, window: &'a [Transition]) -> &'a [Transition] {
        &window[window.len().saturating_sub(self.k)..]
    }

    /// Inner-loop adaptation of `meta` on the last `k` window transitions.
    pub fn adapt(&self, meta: &ParamSet, window: &[Transition]) -> Result<ParamSet> {
        let support = self.support(window);
        if support.is_empty() {
            return Ok(meta.clone());
        }
        let (x, y) = self.rows(support.iter().map(|t| (t.state.clone(), t.action.clone(), t.delta.clone())));
        sgd_adapt(
            meta,
            |g, b| {
                let xn = g.leaf(x.clone());
                let yn = g.leaf(y.clone());
                let pred = mlp_forward(g, &self.spec, META, b, xn)?;
                Ok(prediction_loss(g, pred, yn, self.objective))
            },
            self.inner_lr,
            self.inner_steps,
        )
    }

    /// Prediction loss on the window itself under `params`.
    pub fn support_loss(&self, params: &ParamSet, window: &[Transition]) -> Result<f64> {
        let support = self.support(window);
        let (x, y) = self.rows(support.iter().map(|t| (t.state.clone(), t.action.clone(), t.delta.clone())));
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let xn = g.leaf(x);
        let yn = g.leaf(y);
        let pred = mlp_forward(&mut g, &self.spec, META, &b, xn)?;
        let l = prediction_loss(&mut g, pred, yn, self.objective);
        Ok(g.value(l).data()[0])
    }
}

/// Items grouped by shared context, in order of first appearance.
fn tasks(items: &[Item]) -> Vec<Vec<&Item>> {
    let mut index: HashMap<*const Context, usize> = HashMap::new();
    let mut out: Vec<Vec<&Item>> = Vec::new();
    for it in items {
        let key = Arc::as_ptr(&it.ctx);
        let i = *index.entry(key).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[i].push(it);
    }
    out
}

impl DynamicsModel for Fomaml {
    fn prepare(&mut self, ctx: &Context) -> Result<()> {
        let adapted = self.adapt(&self.params, &ctx.window)?;
        self.prepared = Some(flatten_mlp(&self.spec, META, &adapted)?);
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let flat = self.prepared.as_ref().ok_or_else(not_prepared)?;
        let mut xs = Vec::with_capacity(states.len() * self.spec.input_dim());
        for (s, a) in states.iter().zip(actions) {
            self.norms.x.apply_into(&base_input(self.env, s, a), &mut xs);
        }
        Ok(apply_head(&self.spec, flat, &self.norms, &xs))
    }
}

impl Model for Fomaml {
    fn method(&self) -> Method {
        Method::Fomaml
    }

    fn env(&self) -> EnvKind {
        self.env
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.prepared = None;
        &mut self.params
    }

    fn fit_normalizers(&mut self, items: &[Item]) {
        let xs: Vec<Vec<f64>> = items.iter().map(|it| base_input(self.env, &it.state, &it.action)).collect();
        fit_xy(&mut self.norms, self.spec.input_dim(), &xs, items);
        self.prepared = None;
    }

    /// First-order meta objective: each task's query loss evaluated at
    /// `meta + (adapted - meta)` with the adaptation offset held constant,
    /// so backprop yields the query gradient at the adapted parameters.
    fn loss(&self, g: &mut Graph, bound: &Bound, batch: &Batch) -> Result<Losses> {
        check_batch(batch)?;
        let groups = tasks(&batch.items);
        let mut task_losses = Vec::with_capacity(groups.len());
        for group in &groups {
            let adapted = self.adapt(&self.params, &group[0].ctx.window)?;
            let tb = bound.map(|name, id| {
                let off: Vec<f64> = adapted
                    .get(name)
                    .expect("same names")
                    .data()
                    .iter()
                    .zip(self.params.get(name).expect("bound from params").data())
                    .map(|(a, m)| a - m)
                    .collect();
                let shape = g.value(id).shape().to_vec();
                let c = g.leaf(Tensor::new(shape, off).expect("same shape"));
                g.add(id, c)
            });
            let (x, y) = self.rows(group.iter().map(|it| (it.state.clone(), it.action.clone(), it.delta.clone())));
            let xn = g.leaf(x);
            let yn = g.leaf(y);
            let pred = mlp_forward(g, &self.spec, META, &tb, xn)?;
            task_losses.push(prediction_loss(g, pred, yn, self.objective));
        }
        let stacked = g.concat(&task_losses);
        let l = g.mean(stacked);
        Ok(Losses {
            total: Some(l),
            pred: Some(l),
            aux: None,
        })
    }

    fn aux_state(&self) -> ParamSet {
        self.norms.to_params("norm")
    }

    fn load_aux_state(&mut self, state: &ParamSet) -> Result<()> {
        self.prepared = None;
        self.norms.from_params("norm", state)
    }

    fn forward_hidden(&self) -> Vec<usize> {
        self.spec.hidden().to_vec()
    }
}

// ---------------------------------------------------------------- Expert-Ens

/// Index of the grid nearest to `query` in L2; ties go to the lowest index.
pub fn expert_retrieve(keys: &[Grid], query: &Grid) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, k) in keys.iter().enumerate() {
        let d = k.dist2(query);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Index of the nearest centre; ties go to the lowest index.
pub fn nearest_center(centers: &[f64], x: f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = (c - x).abs();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExpertKeys {
    /// Canonical grids of the training shapes.
    Shapes(Vec<Grid>),
    /// Terrain parameter each expert is responsible for.
    Params(Vec<f64>),
}

pub struct ExpertEns {
    pub env: EnvKind,
    pub objective: Objective,
    pub keys: ExpertKeys,
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub norms: Norms,
    opts: Vec<Option<AdamState>>,
    prepared: Option<(Vec<f64>, Vec<f64>)>,
}

fn expert_prefix(i: usize) -> String {
    format!("exp{i}")
}

impl ExpertEns {
    pub fn new<R: Rng + ?Sized>(cfg: &HyperConfig, extra: &BaselineConfig, rng: &mut R) -> Result<Self> {
        let env = cfg.env;
        let keys = match env.loco_variant() {
            None => ExpertKeys::Shapes(TRAIN_SHAPES.iter().map(|s| s.grid()).collect()),
            Some(v) => {
                if extra.loco_experts == 0 {
                    return Err(Error::Config("loco_experts must be positive".into()));
                }
                let r = v.ranges(Split::Train);
                let (lo, hi) = (r[0].0, r[r.len() - 1].1);
                let n = extra.loco_experts;
                ExpertKeys::Params((0..n).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / n as f64).collect())
            }
        };
        let n = match &keys {
            ExpertKeys::Shapes(g) => g.len(),
            ExpertKeys::Params(p) => p.len(),
        };
        let spec = head_spec(Self::input_dim(env), &cfg.target_hidden, env.state_dim())?;
        let mut params = ParamSet::new();
        for i in 0..n {
            init_mlp(&spec, &expert_prefix(i), &mut params, rng, 1.0);
        }
        Ok(Self {
            env,
            objective: cfg.objective,
            keys,
            norms: Norms::identity(spec.input_dim(), env.state_dim(), 0),
            spec,
            params,
            opts: vec![None; n],
            prepared: None,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.opts.len()
    }

    /// `[state features, mass, mu, action]` for pushing, `[x, v, a]` otherwise.
    pub fn input_dim(env: EnvKind) -> usize {
        base_input_dim(env) + if env == EnvKind::Push { 2 } else { 0 }
    }

    fn input(&self, ctx: &Context, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = state_features(self.env, state);
        if self.env == EnvKind::Push {
            x.extend_from_slice(&ctx.side[..2]);
        }
        x.extend_from_slice(action);
        x
    }

    /// Expert responsible for a context.
    pub fn expert_for(&self, ctx: &Context) -> Result<usize> {
        match &self.keys {
            ExpertKeys::Shapes(grids) => {
                let g = ctx
                    .grid
                    .as_ref()
                    .ok_or_else(|| Error::Config("pushing context without a shape grid".into()))?;
                Ok(expert_retrieve(grids, g))
            }
            ExpertKeys::Params(c) => {
                let p = ctx
                    .side
                    .first()
                    .ok_or_else(|| Error::Config("locomotion context without terrain parameter".into()))?;
                Ok(nearest_center(c, *p))
            }
        }
    }

    fn group_loss(&self, g: &mut Graph, bound: &Bound, expert: usize, items: &[&Item]) -> Result<NodeId> {
        let xs: Vec<Vec<f64>> = items
            .iter()
            .map(|it| self.norms.x.apply(&self.input(&it.ctx, &it.state, &it.action)))
            .collect();
        let ys: Vec<Vec<f64>> = items.iter().map(|it| self.norms.y.apply(&it.delta)).collect();
        let x = g.leaf(Tensor::from_rows(&xs));
        let y = g.leaf(Tensor::from_rows(&ys));
        let pred = mlp_forward(g, &self.spec, &expert_prefix(expert), bound, x)?;
        Ok(prediction_loss(g, pred, y, self.objective))
    }

    fn groups<'a>(&self, items: &'a [Item]) -> Result<Vec<(usize, Vec<&'a Item>)>> {
        let mut out: Vec<(usize, Vec<&Item>)> = Vec::new();
        for it in items {
            let e = self.expert_for(&it.ctx)?;
            match out.iter_mut().find(|(k, _)| *k == e) {
                Some((_, v)) => v.push(it),
                None => out.push((e, vec![it])),
            }
        }
        Ok(out)
    }
}

impl DynamicsModel for ExpertEns {
    fn prepare(&mut self, ctx: &Context) -> Result<()> {
        let e = self.expert_for(ctx)?;
        let side = if self.env == EnvKind::Push { ctx.side[..2].to_vec() } else { Vec::new() };
        self.prepared = Some((side, flatten_mlp(&self.spec, &expert_prefix(e), &self.params)?));
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (side, flat) = self.prepared.as_ref().ok_or_else(not_prepared)?;
        let mut xs = Vec::with_capacity(states.len() * self.spec.input_dim());
        for (s, a) in states.iter().zip(actions) {
            let mut x = state_features(self.env, s);
            x.extend_from_slice(side);
            x.extend_from_slice(a);
            self.norms.x.apply_into(&x, &mut xs);
        }
        Ok(apply_head(&self.spec, flat, &self.norms, &xs))
    }
}

impl Model for ExpertEns {
    fn method(&self) -> Method {
        Method::ExpertEns
    }

    fn env(&self) -> EnvKind {
        self.env
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.prepared = None;
        &mut self.params
    }

    fn fit_normalizers(&mut self, items: &[Item]) {
        let xs: Vec<Vec<f64>> = items.iter().map(|it| self.input(&it.ctx, &it.state, &it.action)).collect();
        fit_xy(&mut self.norms, self.spec.input_dim(), &xs, items);
        self.prepared = None;
    }

    /// Mean over the experts present in the batch of each expert's loss.
    fn loss(&self, g: &mut Graph, bound: &Bound, batch: &Batch) -> Result<Losses> {
        check_batch(batch)?;
        let mut parts = Vec::new();
        for (e, items) in self.groups(&batch.items)? {
            parts.push(self.group_loss(g, bound, e, &items)?);
        }
        let stacked = g.concat(&parts);
        let l = g.mean(stacked);
        Ok(Losses {
            total: Some(l),
            pred: Some(l),
            aux: None,
        })
    }

    fn aux_state(&self) -> ParamSet {
        self.norms.to_params("norm")
    }

    fn load_aux_state(&mut self, state: &ParamSet) -> Result<()> {
        self.prepared = None;
        self.norms.from_params("norm", state)
    }

    fn forward_hidden(&self) -> Vec<usize> {
        self.spec.hidden().to_vec()
    }

    fn group_of(&self, item: &Item) -> Option<usize> {
        self.expert_for(&item.ctx).ok()
    }

    /// Each expert present in the batch takes one step with its own Adam
    /// state, so experts absent from a batch do not drift on stale moments.
    fn train_step(&mut self, batch: &Batch, adam: &mut AdamState, clip: f64) -> Result<StepStats> {
        check_batch(batch)?;
        let groups = self.groups(&batch.items)?;
        let mut total = 0.0;
        for (e, items) in &groups {
            let prefix = format!("{}.", expert_prefix(*e));
            let mut sub = self.params.with_prefix(&prefix);
            let mut g = Graph::new();
            let b = sub.bind(&mut g);
            let l = self.group_loss(&mut g, &b, *e, items)?;
            let v = g.value(l).data()[0];
            if !v.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            total += v;
            g.backward(l);
            let mut grads = sub.grads(&g, &b);
            if clip > 0.0 {
                clip_global_norm(&mut grads, clip);
            }
            let opt = self.opts[*e].get_or_insert_with(|| {
                let mut o = AdamState::new(&sub, adam.lr);
                o.beta1 = adam.beta1;
                o.beta2 = adam.beta2;
                o.eps = adam.eps;
                o
            });
            opt.step(&mut sub, &grads)?;
            for (name, t) in sub.iter() {
                *self.params.get_mut(name).expect("subset of params") = t.clone();
            }
        }
        self.prepared = None;
        let mean = total / groups.len() as f64;
        Ok(StepStats {
            total: mean,
            pred: mean,
            aux: None,
        })
    }
}

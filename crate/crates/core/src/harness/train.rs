//! Training loops.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::autodiff::AdamState;
use crate::baselines::{Direct, ExpertEns, Fomaml, Recurrent, Xyz};
use crate::env::{collect_loco_rollout, sample_loco_system, EnvKind, LocoState, LocoSystem, RandomLocoPolicy, Split, Transition};
use crate::error::{Error, Result};
use crate::hypernet::HyperDynamics;
use crate::model::{Item, Method, Model, StepStats};
use crate::planner::{loco_context, mpc_loco_episode};
use crate::rng::{stream_rng, streams};

use super::config::ExperimentConfig;
use super::data::{Batcher, PushData};

/// Fresh model for `cfg.method`, initialised from the seed's init stream.
pub fn build_model(cfg: &ExperimentConfig) -> Result<Box<dyn Model>> {
    let hyper = cfg.hyper()?;
    let extra = cfg.baseline();
    let mut rng = stream_rng(cfg.seed, streams::INIT, 0);
    Ok(match cfg.method {
        Method::Hyperdynamics => Box::new(HyperDynamics::new(hyper, &mut rng)?),
        Method::Xyz => Box::new(Xyz::new(&hyper, &mut rng)?),
        Method::Direct => Box::new(Direct::new(&hyper, &mut rng)?),
        Method::Recurrent => Box::new(Recurrent::new(&hyper, &extra, &mut rng)?),
        Method::Fomaml => Box::new(Fomaml::new(&hyper, &extra, &mut rng)?),
        Method::ExpertEns => Box::new(ExpertEns::new(&hyper, &extra, &mut rng)?),
    })
}

/// Mean losses over one logging interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub total: f64,
    pub pred: f64,
    pub aux: Option<f64>,
}

#[derive(Default)]
struct Accum {
    n: usize,
    total: f64,
    pred: f64,
    aux: f64,
    n_aux: usize,
}

impl Accum {
    fn add(&mut self, s: &StepStats) {
        self.n += 1;
        self.total += s.total;
        self.pred += s.pred;
        if let Some(a) = s.aux {
            self.aux += a;
            self.n_aux += 1;
        }
    }

    fn flush(&mut self, step: usize) -> Option<LossPoint> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let p = LossPoint {
            step,
            total: self.total / n,
            pred: self.pred / n,
            aux: (self.n_aux > 0).then(|| self.aux / self.n_aux as f64),
        };
        *self = Accum::default();
        Some(p)
    }
}

fn guard(step: usize, s: Result<StepStats>) -> Result<StepStats> {
    match s {
        Ok(s) if s.total.is_finite() => Ok(s),
        Ok(s) => Err(Error::Diverged { step, loss: s.total }),
        Err(Error::NonFinite(_)) => Err(Error::Diverged { step, loss: f64::NAN }),
        Err(e) => Err(e),
    }
}

/// Loss curve and final batch-sampler state of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub history: Vec<LossPoint>,
    pub steps: usize,
    pub rng: ChaCha8Rng,
}

/// Fixed-dataset training on pushing data. Every step sees `cfg.batch`
/// whole trajectories plus `cfg.aux_batch` shape-only grids; grouped models
/// run `cfg.steps` per group. A non-finite loss aborts with
/// [`Error::Diverged`].
pub fn train_offline(model: &mut dyn Model, data: &PushData, cfg: &ExperimentConfig) -> Result<TrainRun> {
    let train_items: Vec<Item> = data.train.all_items().cloned().collect();
    model.fit_normalizers(&train_items);
    let mut batcher = Batcher::new(&*model, &data.train.items, cfg.batch, cfg.aux_batch)?;
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut rng = stream_rng(cfg.seed, streams::BATCHES, 0);
    let mut history = Vec::new();
    let mut acc = Accum::default();
    let every = cfg.log_every.max(1);
    // Independently trained parts each get the full step budget.
    let total = cfg.steps * batcher.groups();
    for step in 0..total {
        let batch = batcher.next(&data.train.items, cfg.aux_batch > 0, &mut rng);
        let s = guard(step, model.train_step(&batch, &mut adam, cfg.clip))?;
        acc.add(&s);
        if (step + 1) % every == 0 || step + 1 == total {
            history.extend(acc.flush(step + 1));
        }
    }
    Ok(TrainRun {
        history,
        steps: total,
        rng,
    })
}

/// `n` optimizer steps per group on random minibatches from a flat item
/// buffer. Grouped models draw each batch from a single group.
pub fn fit_items<R: Rng + ?Sized>(
    model: &mut dyn Model,
    adam: &mut AdamState,
    items: &[Item],
    batch: usize,
    n: usize,
    clip: f64,
    step0: usize,
    rng: &mut R,
) -> Result<Vec<StepStats>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let g = model.group_of(it).unwrap_or(0);
        if groups.len() <= g {
            groups.resize(g + 1, Vec::new());
        }
        groups[g].push(i);
    }
    groups.retain(|g| !g.is_empty());
    if groups.is_empty() {
        return Err(Error::Config("no training items".into()));
    }
    let n = n * groups.len();
    let mut out = Vec::with_capacity(n);
    for step in 0..n {
        let g = &groups[step % groups.len()];
        let b = crate::model::Batch {
            items: (0..batch).map(|_| items[g[rng.gen_range(0..g.len())]].clone()).collect(),
            aux_grids: Vec::new(),
        };
        out.push(guard(step0 + step, model.train_step(&b, adam, clip))?);
    }
    Ok(out)
}

/// Items of a locomotion rollout, each with the preceding `k` steps as its
/// context.
pub fn loco_items(env: EnvKind, sys: &LocoSystem, system_id: usize, steps: &[Transition], k: usize) -> Vec<Item> {
    steps
        .iter()
        .enumerate()
        .map(|(t, tr)| {
            let mut ctx = loco_context(env, sys, &steps[..t], &LocoState::from_slice(&tr.state), k);
            ctx.system_id = system_id;
            Item {
                ctx: Arc::new(ctx),
                state: tr.state.clone(),
                action: tr.action.clone(),
                delta: tr.delta.clone(),
            }
        })
        .collect()
}

/// Per-iteration record of on-policy training.
#[derive(Clone, Debug)]
pub struct OnPolicyRun {
    /// Mean total return of each iteration's collection rollouts.
    pub returns: Vec<f64>,
    pub history: Vec<LossPoint>,
    /// Largest buffer size observed.
    pub buffer_peak: usize,
    /// Iteration whose parameters were kept.
    pub kept_iteration: usize,
    pub stopped_early: bool,
    pub steps: usize,
    pub rng: ChaCha8Rng,
}

fn rolling_mean(xs: &[f64], w: usize) -> Option<f64> {
    (xs.len() >= w).then(|| xs[xs.len() - w..].iter().sum::<f64>() / w as f64)
}

/// Alternates data collection and training on locomotion terrains drawn
/// from the training range. The first iteration acts randomly; later ones
/// plan with the current model. The buffer is capped by random
/// subsampling. Training stops when the rolling mean of collection returns
/// over `early_stop_window` iterations falls, and the parameters from the
/// iteration with the best rolling mean are restored.
pub fn train_onpolicy(model: &mut dyn Model, cfg: &ExperimentConfig) -> Result<OnPolicyRun> {
    let env = cfg.env;
    let variant = env
        .loco_variant()
        .ok_or_else(|| Error::Config("on-policy training needs slope or pier".into()))?;
    let collect = cfg.collect_mpc()?;
    let mut rng = stream_rng(cfg.seed, streams::BATCHES, 0);
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut buffer: Vec<Item> = Vec::new();
    let mut run = OnPolicyRun {
        returns: Vec::new(),
        history: Vec::new(),
        buffer_peak: 0,
        kept_iteration: 0,
        stopped_early: false,
        steps: 0,
        rng: rng.clone(),
    };
    let mut best: Option<(f64, usize, crate::autodiff::ParamSet)> = None;
    let mut prev_rm: Option<f64> = None;
    for it in 0..cfg.iterations {
        let mut total = 0.0;
        for r in 0..cfg.rollouts {
            let id = it * cfg.rollouts + r;
            let mut sys_rng = stream_rng(cfg.seed, streams::SYSTEMS, id as u64);
            let sys = sample_loco_system(&mut sys_rng, variant, Split::Train, cfg.terrain_segments);
            let mut act_rng = stream_rng(cfg.seed, streams::TRAJECTORIES, id as u64);
            let (steps, ret) = if it == 0 {
                let t = collect_loco_rollout(&sys, id, &mut RandomLocoPolicy(act_rng), cfg.rollout_len);
                let ret = t.rewards.iter().sum();
                (t.steps, ret)
            } else {
                let ep = mpc_loco_episode(model, env, &sys, &collect, cfg.k, cfg.rollout_len, &mut act_rng)?;
                (ep.steps, ep.total_return)
            };
            total += ret;
            buffer.extend(loco_items(env, &sys, id, &steps, cfg.k));
        }
        run.returns.push(total / cfg.rollouts as f64);
        if buffer.len() > cfg.buffer_cap {
            buffer.shuffle(&mut rng);
            buffer.truncate(cfg.buffer_cap);
        }
        run.buffer_peak = run.buffer_peak.max(buffer.len());

        // Early stopping looks at returns collected with the model trained
        // so far, before this iteration's updates.
        let rm = rolling_mean(&run.returns, cfg.early_stop_window);
        if let (Some(rm), Some(prev)) = (rm, prev_rm) {
            if rm < prev {
                if let Some((_, kept, params)) = best.take() {
                    *model.params_mut() = params;
                    run.kept_iteration = kept;
                }
                run.stopped_early = true;
                break;
            }
        }
        if let Some(rm) = rm {
            if best.as_ref().is_none_or(|(b, _, _)| rm > *b) {
                best = Some((rm, it, model.params().clone()));
            }
        }
        prev_rm = rm;

        if it == 0 {
            model.fit_normalizers(&buffer);
        }
        let stats = fit_items(model, &mut adam, &buffer, cfg.batch, cfg.updates_per_iteration, cfg.clip, run.steps, &mut rng)?;
        run.steps += stats.len();
        let mut acc = Accum::default();
        for s in &stats {
            acc.add(s);
        }
        run.history.extend(acc.flush(run.steps));
        run.kept_iteration = it + 1;
    }
    run.rng = rng;
    Ok(run)
}

//! End-to-end experiment runs producing metrics rows and checkpoints.

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, Model};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::data::{gen_push_dataset, EvalSplit, PushData};
use super::eval::{eval_loco, eval_prediction, eval_push_mpc, prediction_rows, PushMpcReport};
use super::metrics::{stats, MetricsRow};
use super::train::{build_model, train_offline, train_onpolicy};

pub const HORIZONS: [usize; 2] = [1, 5];

/// Trained model with its checkpoint and metrics.
pub struct Run {
    pub model: Box<dyn Model>,
    pub checkpoint: Checkpoint,
    pub rows: Vec<MetricsRow>,
}

/// Label for metrics rows: the method name, with ablation suffix if any.
pub fn run_label(cfg: &ExperimentConfig, ablation: Option<&Ablation>) -> String {
    match ablation {
        None => cfg.method.name().to_string(),
        Some(a) => format!("{}+{}", cfg.method.name(), a.name()),
    }
}

fn loss_rows(label: &str, cfg: &ExperimentConfig, history: &[super::train::LossPoint]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for p in history {
        rows.push(MetricsRow::new(label, "train", "loss", p.total, cfg.seed, p.step as u64));
        if let Some(a) = p.aux {
            rows.push(MetricsRow::new(label, "train", "aux_loss", a, cfg.seed, p.step as u64));
        }
    }
    rows
}

/// Prediction error rows on both held-out splits.
pub fn push_prediction_rows(
    model: &mut dyn DynamicsModel,
    data: &PushData,
    label: &str,
    seed: u64,
    step: u64,
    horizons: &[usize],
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for split in EvalSplit::BOTH {
        let errs = eval_prediction(model, data.split(split), horizons)?;
        rows.extend(prediction_rows(label, EnvKind::Push, split, &errs, seed, step));
    }
    Ok(rows)
}

/// Trains `cfg.method` on pushing data and evaluates prediction error.
pub fn run_push(cfg: &ExperimentConfig, data: &PushData, label: &str) -> Result<Run> {
    if cfg.env != EnvKind::Push {
        return Err(Error::Config("run_push needs env = push".into()));
    }
    let mut model = build_model(cfg)?;
    let tr = train_offline(model.as_mut(), data, cfg)?;
    let step = tr.steps as u64;
    let mut rows = loss_rows(label, cfg, &tr.history);
    rows.extend(push_prediction_rows(model.as_mut(), data, label, cfg.seed, step, &HORIZONS)?);
    let checkpoint = Checkpoint::from_model(model.as_ref(), cfg, step, &tr.rng);
    Ok(Run {
        model,
        checkpoint,
        rows,
    })
}

/// Rows for one pushing MPC report: `push_success` (suffixed `_obstacles`
/// with obstacles), plus `collision_sound` and `collisions` with obstacles.
pub fn push_report_rows(label: &str, split: EvalSplit, obstacles: bool, rep: &PushMpcReport, seed: u64, step: u64) -> Vec<MetricsRow> {
    let s = split.name();
    let suffix = if obstacles { "_obstacles" } else { "" };
    let mut rows = vec![MetricsRow::new(label, s, &format!("push_success{suffix}"), rep.success_rate(), seed, step)];
    if obstacles {
        rows.push(MetricsRow::new(label, s, "collision_sound", rep.collision_sound as u8 as f64, seed, step));
        rows.push(MetricsRow::new(label, s, "collisions", rep.collisions as f64, seed, step));
    }
    rows
}

/// Pushing MPC rows for each split under `cfg`'s planner settings.
pub fn push_mpc_rows(
    model: &mut dyn DynamicsModel,
    cfg: &ExperimentConfig,
    label: &str,
    splits: &[EvalSplit],
    step: u64,
) -> Result<Vec<MetricsRow>> {
    let mpc = cfg.mpc()?;
    let mut rows = Vec::new();
    for &split in splits {
        let rep = eval_push_mpc(model, split, cfg.obstacles, cfg.push_trials, cfg.k, &mpc, cfg.seed)?;
        rows.extend(push_report_rows(label, split, cfg.obstacles, &rep, cfg.seed, step));
    }
    Ok(rows)
}

/// `return_mean` and `return_std` rows for one split.
pub fn loco_rows(label: &str, split: EvalSplit, returns: &[f64], seed: u64, step: u64) -> Vec<MetricsRow> {
    let st = stats(returns);
    vec![
        MetricsRow::new(label, split.name(), "return_mean", st.mean, seed, step),
        MetricsRow::new(label, split.name(), "return_std", st.std, seed, step),
    ]
}

/// Locomotion return rows (`return_mean`, `return_std`) for both splits.
pub fn loco_return_rows(
    model: &mut dyn DynamicsModel,
    cfg: &ExperimentConfig,
    label: &str,
    step: u64,
) -> Result<Vec<MetricsRow>> {
    let mpc = cfg.mpc()?;
    let mut rows = Vec::new();
    for split in EvalSplit::BOTH {
        let r = eval_loco(
            model,
            cfg.env,
            split,
            cfg.eval_episodes,
            cfg.eval_len,
            cfg.terrain_segments,
            cfg.k,
            &mpc,
            cfg.seed,
        )?;
        rows.extend(loco_rows(label, split, &r, cfg.seed, step));
    }
    Ok(rows)
}

/// On-policy locomotion training followed by return evaluation.
pub fn run_loco(cfg: &ExperimentConfig, label: &str) -> Result<Run> {
    if cfg.env == EnvKind::Push {
        return Err(Error::Config("run_loco needs env = slope or pier".into()));
    }
    let mut model = build_model(cfg)?;
    let op = train_onpolicy(model.as_mut(), cfg)?;
    let step = op.steps as u64;
    let mut rows = loss_rows(label, cfg, &op.history);
    for (i, r) in op.returns.iter().enumerate() {
        rows.push(MetricsRow::new(label, "train", "collect_return", *r, cfg.seed, i as u64));
    }
    rows.push(MetricsRow::new(label, "train", "buffer_peak", op.buffer_peak as f64, cfg.seed, step));
    rows.extend(loco_return_rows(model.as_mut(), cfg, label, step)?);
    let checkpoint = Checkpoint::from_model(model.as_ref(), cfg, step, &op.rng);
    Ok(Run {
        model,
        checkpoint,
        rows,
    })
}

/// Trains on whichever loop fits the environment, generating pushing data
/// from the config's seed when needed.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Run> {
    let label = run_label(cfg, None);
    if cfg.env == EnvKind::Push {
        let data = gen_push_dataset(&cfg.push_data()?, cfg.seed)?;
        run_push(cfg, &data, &label)
    } else {
        run_loco(cfg, &label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoDecoder,
    CanonicalShape,
    ZInt(usize),
    ZVis(usize),
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown ablation {s:?} (no_decoder, canonical_shape, z_int=N, z_vis=N)"));
        match s {
            "no_decoder" => Ok(Ablation::NoDecoder),
            "canonical_shape" => Ok(Ablation::CanonicalShape),
            _ => {
                let (k, v) = s.split_once('=').ok_or_else(bad)?;
                let n: usize = v.parse().map_err(|_| bad())?;
                match k {
                    "z_int" | "z_int_dim" if [2, 4, 8].contains(&n) => Ok(Ablation::ZInt(n)),
                    "z_vis" | "z_vis_dim" if [8, 16, 32].contains(&n) => Ok(Ablation::ZVis(n)),
                    _ => Err(bad()),
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Ablation::NoDecoder => "no_decoder".into(),
            Ablation::CanonicalShape => "canonical_shape".into(),
            Ablation::ZInt(n) => format!("z_int_{n}"),
            Ablation::ZVis(n) => format!("z_vis_{n}"),
        }
    }

    pub fn apply(&self, cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match *self {
            Ablation::NoDecoder => c.no_decoder = true,
            Ablation::CanonicalShape => c.canonical_shape = true,
            Ablation::ZInt(n) => c.z_int = n,
            Ablation::ZVis(n) => c.z_vis = n,
        }
        if c.env != EnvKind::Push && !matches!(self, Ablation::ZInt(_)) {
            return Err(Error::Config(format!("ablation {} applies to pushing only", self.name())));
        }
        c.validate()?;
        Ok(c)
    }
}

/// Trains the default model and the ablated one under the same seed and
/// data; rows are labelled `method` and `method+ablation`.
pub fn run_ablation(cfg: &ExperimentConfig, mode: Ablation) -> Result<Vec<MetricsRow>> {
    let ablated = mode.apply(cfg)?;
    let base_label = run_label(cfg, None);
    let abl_label = run_label(cfg, Some(&mode));
    let mut rows = Vec::new();
    if cfg.env == EnvKind::Push {
        let data = gen_push_dataset(&cfg.push_data()?, cfg.seed)?;
        rows.extend(run_push(cfg, &data, &base_label)?.rows);
        rows.extend(run_push(&ablated, &data, &abl_label)?.rows);
    } else {
        rows.extend(run_loco(cfg, &base_label)?.rows);
        rows.extend(run_loco(&ablated, &abl_label)?.rows);
    }
    Ok(rows)
}

//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::baselines::BaselineConfig;
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::hypernet::HyperConfig;
use crate::model::{Method, Objective};
use crate::planner::MpcConfig;

use super::data::PushDataSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub paper_scale: bool,

    // data
    pub train_trajectories: usize,
    pub test_trajectories: usize,
    pub trajectory_len: usize,
    pub k: usize,

    // optimisation
    pub steps: usize,
    pub batch: usize,
    pub aux_batch: usize,
    pub lr: f64,
    pub clip: f64,
    pub log_every: usize,

    // architecture
    pub eint_hidden: Vec<usize>,
    pub z_int: usize,
    pub z_vis: usize,
    pub hyper_hidden: usize,
    pub target_hidden: Vec<usize>,
    pub decoder_hidden: usize,
    pub no_decoder: bool,
    pub canonical_shape: bool,
    pub aux_weight: f64,
    pub gru_hidden: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub loco_experts: usize,

    // planning
    pub mpc_sequences: usize,
    pub mpc_horizon: usize,
    pub obstacles: bool,
    pub push_trials: usize,

    // on-policy locomotion
    pub iterations: usize,
    pub rollouts: usize,
    pub rollout_len: usize,
    pub buffer_cap: usize,
    pub updates_per_iteration: usize,
    pub terrain_segments: usize,
    pub collect_sequences: usize,
    pub collect_horizon: usize,
    pub early_stop_window: usize,
    pub eval_episodes: usize,
    pub eval_len: usize,
}

/// Keys accepted in config files and `--set` overrides, in documentation order.
pub const KEYS: [&str; 42] = [
    "env",
    "method",
    "seed",
    "paper_scale",
    "train_trajectories",
    "test_trajectories",
    "trajectory_len",
    "k",
    "steps",
    "batch",
    "aux_batch",
    "lr",
    "clip",
    "log_every",
    "eint_hidden",
    "z_int",
    "z_vis",
    "hyper_hidden",
    "target_hidden",
    "decoder_hidden",
    "no_decoder",
    "canonical_shape",
    "aux_weight",
    "gru_hidden",
    "inner_lr",
    "inner_steps",
    "loco_experts",
    "mpc_sequences",
    "mpc_horizon",
    "obstacles",
    "push_trials",
    "iterations",
    "rollouts",
    "rollout_len",
    "buffer_cap",
    "updates_per_iteration",
    "terrain_segments",
    "collect_sequences",
    "collect_horizon",
    "early_stop_window",
    "eval_episodes",
    "eval_len",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Desk-scale defaults for `env`.
    pub fn defaults(env: EnvKind) -> Self {
        let push = env == EnvKind::Push;
        let hyper = if push {
            HyperConfig::push_default()
        } else {
            HyperConfig::loco_default(env)
        };
        let extra = BaselineConfig::default();
        let mpc = if push { MpcConfig::push() } else { MpcConfig::loco() };
        Self {
            env,
            method: Method::Hyperdynamics,
            seed: 0,
            paper_scale: false,
            train_trajectories: 5000,
            test_trajectories: 200,
            trajectory_len: 10,
            k: hyper.k,
            steps: 3000,
            batch: if push { 8 } else { 128 },
            aux_batch: 8,
            lr: 1e-3,
            clip: 10.0,
            log_every: 100,
            eint_hidden: hyper.eint_hidden,
            z_int: hyper.z_int,
            z_vis: hyper.z_vis,
            hyper_hidden: hyper.hyper_hidden,
            target_hidden: hyper.target_hidden,
            decoder_hidden: hyper.decoder_hidden,
            no_decoder: !hyper.use_decoder,
            canonical_shape: hyper.canonical_shape,
            aux_weight: hyper.aux_weight,
            gru_hidden: extra.gru_hidden,
            inner_lr: extra.inner_lr,
            inner_steps: extra.inner_steps,
            loco_experts: extra.loco_experts,
            mpc_sequences: mpc.n_sequences,
            mpc_horizon: mpc.horizon,
            obstacles: false,
            push_trials: 50,
            iterations: 10,
            rollouts: 4,
            rollout_len: 200,
            buffer_cap: 8000,
            updates_per_iteration: 200,
            terrain_segments: 10,
            collect_sequences: 100,
            collect_horizon: 10,
            early_stop_window: 5,
            eval_episodes: 5,
            eval_len: 200,
        }
    }

    /// Restores the full-size experiment settings.
    pub fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        if self.env == EnvKind::Push {
            self.train_trajectories = 50_000;
            self.test_trajectories = 1000;
            self.steps = 100_000;
            self.push_trials = 50;
        } else {
            self.target_hidden = vec![128, 128];
            self.iterations = 150;
            self.rollouts = 10;
            self.rollout_len = 500;
            self.buffer_cap = 50_000;
            self.updates_per_iteration = 100 * 50_000 / self.batch;
            self.collect_sequences = 500;
            self.collect_horizon = 20;
            self.eval_episodes = 500;
            self.eval_len = 500;
        }
    }

    /// Parses config text over the defaults for its `env` (push when absent).
    /// `paper_scale` applies before any other key, whatever its position.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
            map.insert(k, v);
        }
        let env = match map.get("env") {
            Some(v) => EnvKind::parse(v).ok_or_else(|| Error::Config(format!("env: unknown {v:?}")))?,
            None => EnvKind::Push,
        };
        let mut cfg = Self::defaults(env);
        if let Some(v) = map.get("paper_scale") {
            if parse_bool("paper_scale", v)? {
                cfg.apply_paper_scale();
            }
        }
        // later pairs override earlier ones
        for (k, v) in pairs {
            if k != "env" && k != "paper_scale" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "env" => {
                let env = EnvKind::parse(v).ok_or_else(|| Error::Config(format!("env: unknown {v:?}")))?;
                if env != self.env {
                    return Err(Error::Config("env must be set before other keys".into()));
                }
            }
            "method" => {
                self.method = Method::parse(v).ok_or_else(|| Error::Config(format!("method: unknown {v:?}")))?
            }
            "seed" => self.seed = parse_num(key, v)?,
            "paper_scale" => {
                if parse_bool(key, v)? && !self.paper_scale {
                    self.apply_paper_scale();
                }
            }
            "train_trajectories" => self.train_trajectories = parse_num(key, v)?,
            "test_trajectories" => self.test_trajectories = parse_num(key, v)?,
            "trajectory_len" => self.trajectory_len = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "aux_batch" => self.aux_batch = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "clip" => self.clip = parse_num(key, v)?,
            "log_every" => self.log_every = parse_num(key, v)?,
            "eint_hidden" => self.eint_hidden = parse_list(key, v)?,
            "z_int" => self.z_int = parse_num(key, v)?,
            "z_vis" => self.z_vis = parse_num(key, v)?,
            "hyper_hidden" => self.hyper_hidden = parse_num(key, v)?,
            "target_hidden" => self.target_hidden = parse_list(key, v)?,
            "decoder_hidden" => self.decoder_hidden = parse_num(key, v)?,
            "no_decoder" => self.no_decoder = parse_bool(key, v)?,
            "canonical_shape" => self.canonical_shape = parse_bool(key, v)?,
            "aux_weight" => self.aux_weight = parse_num(key, v)?,
            "gru_hidden" => self.gru_hidden = parse_num(key, v)?,
            "inner_lr" => self.inner_lr = parse_num(key, v)?,
            "inner_steps" => self.inner_steps = parse_num(key, v)?,
            "loco_experts" => self.loco_experts = parse_num(key, v)?,
            "mpc_sequences" => self.mpc_sequences = parse_num(key, v)?,
            "mpc_horizon" => self.mpc_horizon = parse_num(key, v)?,
            "obstacles" => self.obstacles = parse_bool(key, v)?,
            "push_trials" => self.push_trials = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "rollouts" => self.rollouts = parse_num(key, v)?,
            "rollout_len" => self.rollout_len = parse_num(key, v)?,
            "buffer_cap" => self.buffer_cap = parse_num(key, v)?,
            "updates_per_iteration" => self.updates_per_iteration = parse_num(key, v)?,
            "terrain_segments" => self.terrain_segments = parse_num(key, v)?,
            "collect_sequences" => self.collect_sequences = parse_num(key, v)?,
            "collect_horizon" => self.collect_horizon = parse_num(key, v)?,
            "early_stop_window" => self.early_stop_window = parse_num(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "eval_len" => self.eval_len = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.steps == 0 && self.env == EnvKind::Push {
            return bad("steps must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.clip < 0.0 {
            return bad("clip must be non-negative");
        }
        if self.env == EnvKind::Push {
            self.push_data().map(|_| ())?;
            if self.trajectory_len <= self.k {
                return bad("trajectory_len must exceed k");
            }
        } else if self.rollouts == 0 || self.rollout_len == 0 || self.buffer_cap == 0 {
            return bad("rollouts, rollout_len and buffer_cap must be positive");
        }
        if self.early_stop_window == 0 {
            return bad("early_stop_window must be positive");
        }
        self.hyper()?.validate()?;
        self.mpc()?;
        self.collect_mpc()?;
        Ok(())
    }

    pub fn push_data(&self) -> Result<PushDataSpec> {
        if self.train_trajectories == 0 || self.test_trajectories == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        Ok(PushDataSpec {
            train: self.train_trajectories,
            test: self.test_trajectories,
            len: self.trajectory_len,
            k: self.k,
        })
    }

    pub fn hyper(&self) -> Result<HyperConfig> {
        let cfg = HyperConfig {
            env: self.env,
            k: self.k,
            eint_hidden: self.eint_hidden.clone(),
            z_int: self.z_int,
            z_vis: self.z_vis,
            hyper_hidden: self.hyper_hidden,
            target_hidden: self.target_hidden.clone(),
            decoder_hidden: self.decoder_hidden,
            use_decoder: !self.no_decoder && self.z_vis > 0,
            canonical_shape: self.canonical_shape,
            aux_weight: self.aux_weight,
            objective: Objective::Mse,
        };
        Ok(cfg)
    }

    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            gru_hidden: self.gru_hidden,
            inner_lr: self.inner_lr,
            inner_steps: self.inner_steps,
            loco_experts: self.loco_experts,
        }
    }

    /// Planner settings for evaluation.
    pub fn mpc(&self) -> Result<MpcConfig> {
        let cfg = MpcConfig {
            n_sequences: self.mpc_sequences,
            horizon: if self.env == EnvKind::Push && self.obstacles && self.mpc_horizon == 1 {
                MpcConfig::push_obstacles().horizon
            } else {
                self.mpc_horizon
            },
            replan_every: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Planner settings for on-policy data collection.
    pub fn collect_mpc(&self) -> Result<MpcConfig> {
        let cfg = MpcConfig {
            n_sequences: self.collect_sequences,
            horizon: self.collect_horizon,
            replan_every: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields this config again.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.name().into());
        kv("method", self.method.name().into());
        kv("seed", self.seed.to_string());
        kv("paper_scale", self.paper_scale.to_string());
        kv("train_trajectories", self.train_trajectories.to_string());
        kv("test_trajectories", self.test_trajectories.to_string());
        kv("trajectory_len", self.trajectory_len.to_string());
        kv("k", self.k.to_string());
        kv("steps", self.steps.to_string());
        kv("batch", self.batch.to_string());
        kv("aux_batch", self.aux_batch.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("clip", format!("{:?}", self.clip));
        kv("log_every", self.log_every.to_string());
        kv("eint_hidden", list(&self.eint_hidden));
        kv("z_int", self.z_int.to_string());
        kv("z_vis", self.z_vis.to_string());
        kv("hyper_hidden", self.hyper_hidden.to_string());
        kv("target_hidden", list(&self.target_hidden));
        kv("decoder_hidden", self.decoder_hidden.to_string());
        kv("no_decoder", self.no_decoder.to_string());
        kv("canonical_shape", self.canonical_shape.to_string());
        kv("aux_weight", format!("{:?}", self.aux_weight));
        kv("gru_hidden", self.gru_hidden.to_string());
        kv("inner_lr", format!("{:?}", self.inner_lr));
        kv("inner_steps", self.inner_steps.to_string());
        kv("loco_experts", self.loco_experts.to_string());
        kv("mpc_sequences", self.mpc_sequences.to_string());
        kv("mpc_horizon", self.mpc_horizon.to_string());
        kv("obstacles", self.obstacles.to_string());
        kv("push_trials", self.push_trials.to_string());
        kv("iterations", self.iterations.to_string());
        kv("rollouts", self.rollouts.to_string());
        kv("rollout_len", self.rollout_len.to_string());
        kv("buffer_cap", self.buffer_cap.to_string());
        kv("updates_per_iteration", self.updates_per_iteration.to_string());
        kv("terrain_segments", self.terrain_segments.to_string());
        kv("collect_sequences", self.collect_sequences.to_string());
        kv("collect_horizon", self.collect_horizon.to_string());
        kv("early_stop_window", self.early_stop_window.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("eval_len", self.eval_len.to_string());
        s
    }
}

/// Splits config text into `(key, value)` pairs. Blank lines and `#`
/// comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

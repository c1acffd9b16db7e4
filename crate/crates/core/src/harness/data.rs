//! Dataset generation and batching.
//!
//! Every pushing trajectory is drawn from its own system (a library shape
//! with fresh mass and friction). Its first `k` steps form the interaction
//! context and the remaining steps are the supervised transitions.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{
    collect_push_trajectory, sample_aux_shape, sample_push_system, EnvKind, Grid, PushSystem, Split,
    Trajectory, Transition, TEST_SHAPES, TRAIN_SHAPES,
};
use crate::error::{Error, Result};
use crate::model::{Batch, Context, Item, Model};
use crate::rng::{stream_rng, streams};

/// Seen systems reuse training shapes with fresh parameters; novel systems
/// use held-out shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalSplit {
    Seen,
    Novel,
}

impl EvalSplit {
    pub const BOTH: [EvalSplit; 2] = [EvalSplit::Seen, EvalSplit::Novel];

    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Seen => "seen",
            EvalSplit::Novel => "novel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seen" => Some(EvalSplit::Seen),
            "novel" => Some(EvalSplit::Novel),
            _ => None,
        }
    }

    pub fn env_split(self) -> Split {
        match self {
            EvalSplit::Seen => Split::Train,
            EvalSplit::Novel => Split::Test,
        }
    }
}

/// Trajectories with their contexts and supervised items.
#[derive(Clone, Debug, Default)]
pub struct Episodes {
    pub env: Option<EnvKind>,
    pub systems: Vec<PushSystem>,
    pub trajectories: Vec<Trajectory>,
    pub contexts: Vec<Arc<Context>>,
    /// Supervised items of each trajectory.
    pub items: Vec<Vec<Item>>,
    /// Index of the first supervised step in each trajectory.
    pub first: usize,
}

impl Episodes {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn all_items(&self) -> impl Iterator<Item = &Item> {
        self.items.iter().flatten()
    }
}

#[derive(Clone, Debug)]
pub struct PushData {
    pub train: Episodes,
    pub seen: Episodes,
    pub novel: Episodes,
}

impl PushData {
    pub fn split(&self, s: EvalSplit) -> &Episodes {
        match s {
            EvalSplit::Seen => &self.seen,
            EvalSplit::Novel => &self.novel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushDataSpec {
    pub train: usize,
    pub test: usize,
    pub len: usize,
    pub k: usize,
}

pub fn push_context(sys: &PushSystem, system_id: usize, window: Vec<Transition>) -> Context {
    Context {
        env: EnvKind::Push,
        system_id,
        window,
        grid: Some(sys.grid().clone()),
        side: vec![sys.mass, sys.mu],
    }
}

fn push_episodes(spec: &PushDataSpec, seed: u64, split: Split, id0: usize, n: usize) -> Episodes {
    let mut ep = Episodes {
        env: Some(EnvKind::Push),
        first: spec.k,
        ..Default::default()
    };
    for i in 0..n {
        let id = id0 + i;
        let mut rng = stream_rng(seed, streams::TRAJECTORIES, id as u64);
        let sys = sample_push_system(&mut rng, split);
        let traj = collect_push_trajectory(&sys, id, &mut rng, spec.len);
        let ctx = Arc::new(push_context(&sys, id, traj.steps[..spec.k].to_vec()));
        let items = traj.steps[spec.k..]
            .iter()
            .map(|t| Item {
                ctx: ctx.clone(),
                state: t.state.clone(),
                action: t.action.clone(),
                delta: t.delta.clone(),
            })
            .collect();
        ep.systems.push(sys);
        ep.trajectories.push(traj);
        ep.contexts.push(ctx);
        ep.items.push(items);
    }
    ep
}

/// Training, seen-test and novel-test pushing data with disjoint system ids.
pub fn gen_push_dataset(spec: &PushDataSpec, seed: u64) -> Result<PushData> {
    if spec.k == 0 || spec.len <= spec.k || spec.train == 0 || spec.test == 0 {
        return Err(Error::Config(format!(
            "dataset needs train, test > 0 and len > k > 0 (got {spec:?})"
        )));
    }
    let data = PushData {
        train: push_episodes(spec, seed, Split::Train, 0, spec.train),
        seen: push_episodes(spec, seed, Split::Train, spec.train, spec.test),
        novel: push_episodes(spec, seed, Split::Test, spec.train + spec.test, spec.test),
    };
    check_split_hygiene(&data)?;
    Ok(data)
}

fn system_key(s: &PushSystem) -> (String, u64, u64) {
    (s.shape.label(), s.mass.to_bits(), s.mu.to_bits())
}

/// No evaluation system tuple or held-out shape appears in training data,
/// and system ids are disjoint across splits.
pub fn check_split_hygiene(data: &PushData) -> Result<()> {
    let train_ids: HashSet<usize> = data.train.contexts.iter().map(|c| c.system_id).collect();
    let train_keys: HashSet<_> = data.train.systems.iter().map(system_key).collect();
    for item in data.train.all_items() {
        if !train_ids.contains(&item.ctx.system_id) {
            return Err(Error::Config("training item from a foreign system".into()));
        }
    }
    for s in &data.train.systems {
        if TEST_SHAPES.contains(&s.shape) || !TRAIN_SHAPES.contains(&s.shape) {
            return Err(Error::Config(format!("training uses shape {}", s.shape.label())));
        }
    }
    for split in [&data.seen, &data.novel] {
        for (ctx, sys) in split.contexts.iter().zip(&split.systems) {
            if train_ids.contains(&ctx.system_id) || train_keys.contains(&system_key(sys)) {
                return Err(Error::Config(format!("system {} leaks into training", ctx.system_id)));
            }
        }
    }
    for s in &data.novel.systems {
        if TRAIN_SHAPES.contains(&s.shape) {
            return Err(Error::Config(format!("novel split uses training shape {}", s.shape.label())));
        }
    }
    Ok(())
}

/// Draws training batches: `n_traj` whole trajectories per batch, plus
/// `n_aux` random shape-only grids. Models split into independent parts
/// get batches drawn from one part at a time, cycling through the parts.
pub struct Batcher {
    groups: Vec<Vec<usize>>,
    n_traj: usize,
    n_aux: usize,
    step: usize,
}

impl Batcher {
    pub fn new(model: &dyn Model, items: &[Vec<Item>], n_traj: usize, n_aux: usize) -> Result<Self> {
        if n_traj == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, its) in items.iter().enumerate() {
            let Some(first) = its.first() else { continue };
            let gi = model.group_of(first).unwrap_or(0);
            if groups.len() <= gi {
                groups.resize(gi + 1, Vec::new());
            }
            groups[gi].push(i);
        }
        groups.retain(|g| !g.is_empty());
        if groups.is_empty() {
            return Err(Error::Config("no training items".into()));
        }
        Ok(Self {
            groups,
            n_traj,
            n_aux,
            step: 0,
        })
    }

    pub fn groups(&self) -> usize {
        self.groups.len()
    }

    pub fn next<R: Rng + ?Sized>(&mut self, items: &[Vec<Item>], with_aux: bool, rng: &mut R) -> Batch {
        let g = &self.groups[self.step % self.groups.len()];
        self.step += 1;
        let mut batch = Batch::default();
        for _ in 0..self.n_traj {
            let i = *g.choose(rng).expect("groups are non-empty");
            batch.items.extend(items[i].iter().cloned());
        }
        if with_aux {
            batch.aux_grids = (0..self.n_aux).map(|_| aux_grid(rng)).collect();
        }
        batch
    }
}

fn aux_grid<R: Rng + ?Sized>(rng: &mut R) -> Grid {
    sample_aux_shape(rng).1
}

/// Random minibatch of `n` individual items (locomotion buffers).
pub fn item_batch<R: Rng + ?Sized>(items: &[Item], n: usize, rng: &mut R) -> Batch {
    Batch {
        items: (0..n).map(|_| items[rng.gen_range(0..items.len())].clone()).collect(),
        aux_grids: Vec::new(),
    }
}

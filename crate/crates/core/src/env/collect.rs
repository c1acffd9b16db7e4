//! System sampling, trajectory collection and interaction windows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loco::{
    loco_step, sample_loco_system, LocoState, LocoSystem, LocoVariant, Split, LOCO_ACTION_DIM,
    LOCO_STATE_DIM,
};
use super::push::{
    push_compose, push_diff, push_step, sample_push_action, sample_push_start, PushState, PushSystem,
    ACTION_DIM, MASS_RANGE, MU_RANGE, STATE_DIM,
};
use super::shapes::{TEST_SHAPES, TRAIN_SHAPES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Push,
    Slope,
    Pier,
}

impl EnvKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "push" => Some(EnvKind::Push),
            "slope" => Some(EnvKind::Slope),
            "pier" => Some(EnvKind::Pier),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Push => "push",
            EnvKind::Slope => "slope",
            EnvKind::Pier => "pier",
        }
    }

    pub fn loco_variant(self) -> Option<LocoVariant> {
        match self {
            EnvKind::Push => None,
            EnvKind::Slope => Some(LocoVariant::Slope),
            EnvKind::Pier => Some(LocoVariant::Pier),
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Push => STATE_DIM,
            _ => LOCO_STATE_DIM,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Push => ACTION_DIM,
            _ => LOCO_ACTION_DIM,
        }
    }

    /// Width of one window entry: state, action and delta.
    pub fn window_step_dim(self) -> usize {
        2 * self.state_dim() + self.action_dim()
    }

    pub fn diff(self, next: &[f64], state: &[f64]) -> Vec<f64> {
        match self {
            EnvKind::Push => push_diff(next, state),
            _ => next.iter().zip(state).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn compose(self, state: &[f64], delta: &[f64]) -> Vec<f64> {
        match self {
            EnvKind::Push => push_compose(state, delta),
            _ => state.iter().zip(delta).map(|(a, b)| a + b).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SystemSpec {
    Push(PushSystem),
    Loco(LocoSystem),
}

/// Draws a system from the split's ranges. Pushing systems take their shape
/// from the split's library with mass and friction uniform in range;
/// locomotion terrains get `n_segments` independent segment parameters.
pub fn sample_system<R: Rng + ?Sized>(
    rng: &mut R,
    env: EnvKind,
    split: Split,
    n_segments: usize,
) -> SystemSpec {
    match env.loco_variant() {
        None => SystemSpec::Push(sample_push_system(rng, split)),
        Some(v) => SystemSpec::Loco(sample_loco_system(rng, v, split, n_segments)),
    }
}

pub fn sample_push_system<R: Rng + ?Sized>(rng: &mut R, split: Split) -> PushSystem {
    let lib: &[_] = match split {
        Split::Train => &TRAIN_SHAPES,
        Split::Test => &TEST_SHAPES,
    };
    let shape = lib[rng.gen_range(0..lib.len())];
    let mass = rng.gen_range(MASS_RANGE.0..=MASS_RANGE.1);
    let mu = rng.gen_range(MU_RANGE.0..=MU_RANGE.1);
    PushSystem::new(shape, mass, mu).expect("library shapes and ranges are valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub system_id: usize,
    pub steps: Vec<Transition>,
    /// Per-step rewards (locomotion only).
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `s_0 .. s_T` reconstructed by composing deltas.
    pub fn states(&self, env: EnvKind) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.steps.iter().map(|t| t.state.clone()).collect();
        if let Some(last) = self.steps.last() {
            out.push(env.compose(&last.state, &last.delta));
        }
        out
    }

    /// Every recorded next state equals `state ⊕ delta` bitwise.
    pub fn is_consistent(&self, env: EnvKind) -> bool {
        self.steps
            .windows(2)
            .all(|w| env.compose(&w[0].state, &w[0].delta) == w[1].state)
    }
}

/// Pushing trajectory from a fresh random start.
pub fn collect_push_trajectory<R: Rng + ?Sized>(
    sys: &PushSystem,
    system_id: usize,
    rng: &mut R,
    horizon: usize,
) -> Trajectory {
    let start = sample_push_start(sys, rng);
    collect_push_from(sys, system_id, start, rng, horizon)
}

pub fn collect_push_from<R: Rng + ?Sized>(
    sys: &PushSystem,
    system_id: usize,
    start: PushState,
    rng: &mut R,
    horizon: usize,
) -> Trajectory {
    let mut s = start.to_vec();
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let st = PushState::from_slice(&s);
        let a = sample_push_action(sys, &st, rng);
        let next = push_step(sys, &st, a).to_vec();
        let delta = push_diff(&next, &s);
        let s_next = push_compose(&s, &delta);
        steps.push(Transition {
            state: std::mem::replace(&mut s, s_next),
            action: a.to_vec(),
            delta,
        });
    }
    Trajectory {
        system_id,
        steps,
        rewards: Vec::new(),
    }
}

/// Chooses a scalar action given the rollout so far.
pub trait LocoPolicy {
    fn act(&mut self, history: &[Transition], state: &LocoState) -> f64;
}

/// I.i.d. uniform actions in [-1, 1].
pub struct RandomLocoPolicy<R: Rng>(pub R);

impl<R: Rng> LocoPolicy for RandomLocoPolicy<R> {
    fn act(&mut self, _: &[Transition], _: &LocoState) -> f64 {
        self.0.gen_range(-1.0..=1.0)
    }
}

pub fn collect_loco_rollout(
    sys: &LocoSystem,
    system_id: usize,
    policy: &mut dyn LocoPolicy,
    horizon: usize,
) -> Trajectory {
    let mut s = LocoState::default().to_vec();
    let mut traj = Trajectory {
        system_id,
        steps: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
    };
    for _ in 0..horizon {
        let st = LocoState::from_slice(&s);
        let a = policy.act(&traj.steps, &st).clamp(-1.0, 1.0);
        let (next, r) = loco_step(sys, &st, a);
        let next = next.to_vec();
        let delta = EnvKind::Slope.diff(&next, &s);
        let s_next = EnvKind::Slope.compose(&s, &delta);
        traj.steps.push(Transition {
            state: std::mem::replace(&mut s, s_next),
            action: vec![a],
            delta,
        });
        traj.rewards.push(r);
    }
    traj
}

/// Flattened `(state, action, delta)` entries of `steps[end - k .. end]`,
/// zero-padded at the front when fewer than `k` entries exist.
pub fn interaction_window(steps: &[Transition], end: usize, k: usize, step_dim: usize) -> Vec<f64> {
    let mut w = vec![0.0; k * step_dim];
    let end = end.min(steps.len());
    let start = end.saturating_sub(k);
    let pad = k - (end - start);
    for (slot, t) in steps[start..end].iter().enumerate() {
        let off = (pad + slot) * step_dim;
        let row = t.state.iter().chain(&t.action).chain(&t.delta);
        for (dst, v) in w[off..off + step_dim].iter_mut().zip(row) {
            *dst = *v;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collected_push_trajectories_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in 0..20 {
            let sys = sample_push_system(&mut rng, Split::Train);
            let t = collect_push_trajectory(&sys, id, &mut rng, 5);
            assert_eq!(t.len(), 5);
            assert!(t.is_consistent(EnvKind::Push));
        }
    }

    #[test]
    fn loco_rollout_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sys = sample_loco_system(&mut rng, LocoVariant::Slope, Split::Train, 4);
        let mut pol = RandomLocoPolicy(ChaCha8Rng::seed_from_u64(1));
        let t = collect_loco_rollout(&sys, 0, &mut pol, 100);
        assert!(t.is_consistent(EnvKind::Slope));
        assert_eq!(t.rewards.len(), 100);
    }

    #[test]
    fn window_pads_at_front() {
        let steps: Vec<Transition> = (0..3)
            .map(|i| Transition {
                state: vec![i as f64, 0.0],
                action: vec![1.0],
                delta: vec![0.5, 0.5],
            })
            .collect();
        let w = interaction_window(&steps, 2, 3, 5);
        assert_eq!(w.len(), 15);
        assert!(w[..5].iter().all(|&x| x == 0.0));
        assert_eq!(&w[5..10], &[0.0, 0.0, 1.0, 0.5, 0.5]);
        assert_eq!(&w[10..15], &[1.0, 0.0, 1.0, 0.5, 0.5]);
    }
}

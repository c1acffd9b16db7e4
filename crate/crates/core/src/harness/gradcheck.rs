//! Finite-difference checks of every learned module.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::*;
use crate::baselines::{BaselineConfig, Direct, ExpertEns, Fomaml, Recurrent, Xyz};
use crate::env::{
    collect_loco_rollout, collect_push_trajectory, sample_loco_system, sample_push_system, EnvKind,
    RandomLocoPolicy, Split, TRAIN_SHAPES,
};
use crate::hypernet::{HyperConfig, HyperDynamics};
use crate::model::{Batch, Context, Item, Method, Model};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sizes agree")
}

fn project(g: &mut Graph, y: NodeId, coeffs: &Tensor) -> NodeId {
    let c = g.leaf(coeffs.clone());
    let m = g.mul(y, c);
    g.sum(m)
}

fn jitter(p: &mut ParamSet, rng: &mut ChaCha8Rng) {
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
}

fn case(name: &str, seeds: u64, mut run: impl FnMut(&mut ChaCha8Rng) -> GradCheckReport) -> GradCase {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let r = run(&mut rng);
        worst = worst.max(if r.max_rel_error.is_nan() { f64::INFINITY } else { r.max_rel_error });
        checked += r.checked;
    }
    GradCase {
        name: name.into(),
        max_rel_error: worst,
        checked,
    }
}

fn push_batch(rng: &mut ChaCha8Rng) -> Batch {
    let mut items = Vec::new();
    for id in 0..3 {
        let sys = sample_push_system(rng, Split::Train);
        let traj = collect_push_trajectory(&sys, id, rng, 7);
        let ctx = Arc::new(Context {
            env: EnvKind::Push,
            system_id: id,
            window: traj.steps[..5].to_vec(),
            grid: Some(sys.grid().clone()),
            side: vec![sys.mass, sys.mu],
        });
        for t in &traj.steps[5..] {
            items.push(Item {
                ctx: ctx.clone(),
                state: t.state.clone(),
                action: t.action.clone(),
                delta: t.delta.clone(),
            });
        }
    }
    Batch {
        items,
        aux_grids: vec![TRAIN_SHAPES[3].grid()],
    }
}

fn loco_batch(rng: &mut ChaCha8Rng, env: EnvKind) -> Batch {
    let v = env.loco_variant().expect("locomotion env");
    let sys = sample_loco_system(rng, v, Split::Train, 20);
    let traj = collect_loco_rollout(&sys, 0, &mut RandomLocoPolicy(rng.clone()), 26);
    let items = (20..26)
        .map(|t| {
            let s = &traj.steps[t];
            Item {
                ctx: Arc::new(Context {
                    env,
                    system_id: 0,
                    window: traj.steps[..t].to_vec(),
                    grid: None,
                    side: vec![sys.param_at(s.state[0])],
                }),
                state: s.state.clone(),
                action: s.action.clone(),
                delta: s.delta.clone(),
            }
        })
        .collect();
    Batch {
        items,
        aux_grids: Vec::new(),
    }
}

/// Reduced architectures so each check stays small.
fn mini(env: EnvKind) -> HyperConfig {
    let base = if env == EnvKind::Push {
        HyperConfig::push_default()
    } else {
        HyperConfig::loco_default(env)
    };
    HyperConfig {
        eint_hidden: vec![3],
        z_int: 2,
        z_vis: if env == EnvKind::Push { 2 } else { 0 },
        hyper_hidden: 3,
        target_hidden: vec![5],
        decoder_hidden: 4,
        ..base
    }
}

fn mini_model(method: Method, cfg: &HyperConfig, rng: &mut ChaCha8Rng) -> crate::Result<Box<dyn Model>> {
    let extra = BaselineConfig {
        gru_hidden: 3,
        ..BaselineConfig::default()
    };
    Ok(match method {
        Method::Hyperdynamics => Box::new(HyperDynamics::new(cfg.clone(), rng)?),
        Method::Xyz => Box::new(Xyz::new(cfg, rng)?),
        Method::Direct => Box::new(Direct::new(cfg, rng)?),
        Method::Recurrent => Box::new(Recurrent::new(cfg, &extra, rng)?),
        Method::Fomaml => Box::new(Fomaml::new(cfg, &extra, rng)?),
        Method::ExpertEns => Box::new(ExpertEns::new(cfg, &extra, rng)?),
    })
}

fn model_case(method: Method, env: EnvKind) -> crate::Result<GradCase> {
    let name = if method == Method::Hyperdynamics {
        format!("hypernet_composition_{}", env.name())
    } else {
        format!("{}_loss_{}", method.name(), env.name())
    };
    let cfg = mini(env);
    let mut failure = None;
    let c = case(&name, 3, |rng| {
        let batch = if env == EnvKind::Push {
            push_batch(rng)
        } else {
            loco_batch(rng, env)
        };
        let mut m = match mini_model(method, &cfg, rng) {
            Ok(m) => m,
            Err(e) => {
                failure = Some(e);
                return GradCheckReport::default();
            }
        };
        m.fit_normalizers(&batch.items);
        jitter(m.params_mut(), rng);
        finite_diff_report(
            m.params(),
            |g, b| m.loss(g, b, &batch).expect("mini models build their loss").total(),
            STEP,
            12,
        )
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(c),
    }
}

/// Runs every check; each case reports its worst relative error.
pub fn gradcheck_suite() -> crate::Result<Vec<GradCase>> {
    let mut out = Vec::new();
    let spec = MlpSpec::leaky(vec![3, 5, 4, 2])?;
    out.push(case("mlp", 5, |rng| {
        let mut p = ParamSet::new();
        init_mlp(&spec, "f", &mut p, rng, 1.0);
        p.insert("x", rand_tensor(rng, &[4, 3]));
        let c = rand_tensor(rng, &[4, 2]);
        finite_diff_report(
            &p,
            |g, b| {
                let y = mlp_forward(g, &spec, "f", b, b.get("x")).expect("shapes agree");
                project(g, y, &c)
            },
            STEP,
            usize::MAX,
        )
    }));
    let ext = MlpSpec::leaky(vec![2, 3, 2])?;
    out.push(case("external_weight_mlp", 5, |rng| {
        let mut p = ParamSet::new();
        p.insert("flat", rand_tensor(rng, &[3, ext.param_count()]));
        p.insert("x", rand_tensor(rng, &[3, 2]));
        let c = rand_tensor(rng, &[3, 2]);
        finite_diff_report(
            &p,
            |g, b| {
                let y = mlp_forward_external(g, &ext, b.get("flat"), b.get("x")).expect("shapes agree");
                project(g, y, &c)
            },
            STEP,
            usize::MAX,
        )
    }));
    let conv = ConvStackSpec::shape_encoder(3);
    out.push(case("conv_stack", 3, |rng| {
        let mut p = ParamSet::new();
        init_conv_stack(&conv, "e", &mut p, rng);
        p.insert("x", rand_tensor(rng, &[2, 256]));
        let c = rand_tensor(rng, &[2, 3]);
        finite_diff_report(
            &p,
            |g, b| {
                let y = conv2d_forward(g, &conv, "e", b, b.get("x")).expect("shapes agree");
                project(g, y, &c)
            },
            STEP,
            24,
        )
    }));
    let gru = GruSpec { input: 3, hidden: 4 };
    out.push(case("gru_cell", 5, |rng| {
        let mut p = ParamSet::new();
        init_gru(gru, "g", &mut p, rng);
        jitter(&mut p, rng);
        p.insert("h", rand_tensor(rng, &[2, 4]));
        for i in 0..3 {
            p.insert(format!("x{i}"), rand_tensor(rng, &[2, 3]));
        }
        let c = rand_tensor(rng, &[2, 4]);
        finite_diff_report(
            &p,
            |g, b| {
                let xs: Vec<_> = (0..3).map(|i| b.get(&format!("x{i}"))).collect();
                let h = gru_unroll(g, gru, "g", b, b.get("h"), &xs).expect("shapes agree");
                project(g, h, &c)
            },
            STEP,
            usize::MAX,
        )
    }));
    for env in [EnvKind::Push, EnvKind::Slope] {
        for method in Method::ALL {
            out.push(model_case(method, env)?);
        }
    }
    Ok(out)
}

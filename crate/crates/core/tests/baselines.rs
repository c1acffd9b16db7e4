use std::sync::Arc;

use hyperdyn::autodiff::*;
use hyperdyn::baselines::*;
use hyperdyn::env::*;
use hyperdyn::hypernet::{HyperConfig, HyperDynamics};
use hyperdyn::model::*;
use hyperdyn::norm::Normalizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn push_batch(rng: &mut ChaCha8Rng, n_systems: usize, per: usize) -> Batch {
    let mut items = Vec::new();
    for id in 0..n_systems {
        let sys = sample_push_system(rng, Split::Train);
        let traj = collect_push_trajectory(&sys, id, rng, 5 + per);
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

fn loco_batch(rng: &mut ChaCha8Rng, env: EnvKind, n: usize) -> Batch {
    let v = env.loco_variant().unwrap();
    let sys = sample_loco_system(rng, v, Split::Train, 20);
    let traj = collect_loco_rollout(&sys, 0, &mut RandomLocoPolicy(rng.clone()), 20 + n);
    let items = (20..20 + n)
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
        target_hidden: vec![5],
        decoder_hidden: 4,
        ..base
    }
}

fn extra() -> BaselineConfig {
    BaselineConfig {
        gru_hidden: 3,
        ..BaselineConfig::default()
    }
}

fn jitter(p: &mut ParamSet, rng: &mut ChaCha8Rng) {
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
}

fn build(method: Method, cfg: &HyperConfig, rng: &mut ChaCha8Rng) -> Box<dyn Model> {
    match method {
        Method::Hyperdynamics => Box::new(HyperDynamics::new(cfg.clone(), rng).unwrap()),
        Method::Xyz => Box::new(Xyz::new(cfg, rng).unwrap()),
        Method::Direct => Box::new(Direct::new(cfg, rng).unwrap()),
        Method::Recurrent => Box::new(Recurrent::new(cfg, &extra(), rng).unwrap()),
        Method::Fomaml => Box::new(Fomaml::new(cfg, &extra(), rng).unwrap()),
        Method::ExpertEns => Box::new(ExpertEns::new(cfg, &extra(), rng).unwrap()),
    }
}

#[test]
fn losses_match_finite_differences() {
    for env in [EnvKind::Push, EnvKind::Slope] {
        for method in Method::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(20);
            let cfg = mini(env);
            let mut m = build(method, &cfg, &mut rng);
            let batch = if env == EnvKind::Push {
                push_batch(&mut rng, 3, 2)
            } else {
                loco_batch(&mut rng, env, 6)
            };
            m.fit_normalizers(&batch.items);
            jitter(m.params_mut(), &mut rng);
            let report = finite_diff_report(m.params(), |g, b| m.loss(g, b, &batch).unwrap().total(), 1e-5, 12);
            assert!(
                report.max_rel_error < 1e-4,
                "{} on {}: {report:?}",
                method.name(),
                env.name()
            );
        }
    }
}

#[test]
fn architectures_share_hidden_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for cfg in [
        HyperConfig::push_default(),
        HyperConfig::loco_default(EnvKind::Pier),
        HyperConfig {
            target_hidden: vec![128, 128],
            ..HyperConfig::loco_default(EnvKind::Slope)
        },
    ] {
        let want = cfg.target_hidden.clone();
        for method in Method::ALL {
            let m = build(method, &cfg, &mut rng);
            assert_eq!(m.forward_hidden(), want, "{}", method.name());
            assert_eq!(m.method(), method);
        }
    }
}

#[test]
fn zero_weight_xyz_predicts_zero_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut m = Xyz::new(&HyperConfig::push_default(), &mut rng).unwrap();
    let batch = push_batch(&mut rng, 2, 3);
    let ctx = batch.items[0].ctx.clone();
    let states: Vec<Vec<f64>> = batch.items.iter().map(|it| it.state.clone()).collect();
    let actions: Vec<Vec<f64>> = batch.items.iter().map(|it| it.action.clone()).collect();
    m.prepare(&ctx).unwrap();
    let a = m.predict(&states, &actions).unwrap();
    assert_eq!(a, m.predict(&states, &actions).unwrap());
    for (_, t) in m.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    m.prepare(&ctx).unwrap();
    for d in m.predict(&states, &actions).unwrap() {
        assert!(d.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn direct_with_zero_code_is_xyz_with_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = HyperConfig::push_default();
    let direct = Direct::new(&cfg, &mut rng).unwrap();
    let flat = flatten_mlp(&direct.spec, HEAD, &direct.params).unwrap();
    let n_in = base_input_dim(EnvKind::Push);
    let z = cfg.z_dim();
    // Drop the z columns of the first layer.
    let h0 = cfg.target_hidden[0];
    let mut trimmed = Vec::new();
    for r in 0..h0 {
        trimmed.extend_from_slice(&flat[r * (n_in + z)..r * (n_in + z) + n_in]);
    }
    trimmed.extend_from_slice(&flat[h0 * (n_in + z)..]);
    let mut sizes = vec![n_in];
    sizes.extend_from_slice(&cfg.target_hidden);
    sizes.push(8);
    let xyz = MlpSpec::leaky(sizes).unwrap();
    for _ in 0..50 {
        let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut padded = x.clone();
        padded.extend(std::iter::repeat(0.0).take(z));
        assert_eq!(mlp_apply_flat(&direct.spec, &flat, &padded), mlp_apply_flat(&xyz, &trimmed, &x));
    }
}

#[test]
fn recurrent_needs_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let cfg = HyperConfig {
        k: 0,
        ..HyperConfig::loco_default(EnvKind::Slope)
    };
    assert!(Recurrent::new(&cfg, &extra(), &mut rng).is_err());
}

#[test]
fn baselines_are_deterministic_after_prepare() {
    for env in [EnvKind::Push, EnvKind::Pier] {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let batch = if env == EnvKind::Push {
            push_batch(&mut rng, 3, 3)
        } else {
            loco_batch(&mut rng, env, 8)
        };
        let cfg = if env == EnvKind::Push {
            HyperConfig::push_default()
        } else {
            HyperConfig::loco_default(env)
        };
        for method in Method::ALL {
            let mut m = build(method, &cfg, &mut rng);
            m.fit_normalizers(&batch.items);
            let states: Vec<Vec<f64>> = batch.items.iter().map(|it| it.state.clone()).collect();
            let actions: Vec<Vec<f64>> = batch.items.iter().map(|it| it.action.clone()).collect();
            m.prepare(&batch.items[0].ctx).unwrap();
            let a = m.predict(&states, &actions).unwrap();
            m.prepare(&batch.items[0].ctx).unwrap();
            assert_eq!(a, m.predict(&states, &actions).unwrap(), "{}", method.name());
            assert_eq!(a.len(), states.len());
            assert!(a.iter().all(|d| d.len() == env.state_dim() && d.iter().all(|v| v.is_finite())));
        }
    }
}

#[test]
fn graph_and_inference_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let batch = push_batch(&mut rng, 1, 4);
    let cfg = HyperConfig::push_default();
    for method in Method::ALL {
        let mut m = build(method, &cfg, &mut rng);
        m.fit_normalizers(&batch.items);
        m.prepare(&batch.items[0].ctx).unwrap();
        let states: Vec<Vec<f64>> = batch.items.iter().map(|it| it.state.clone()).collect();
        let actions: Vec<Vec<f64>> = batch.items.iter().map(|it| it.action.clone()).collect();
        let pred = m.predict(&states, &actions).unwrap();
        // Loss recomputed from inference predictions must match the graph loss.
        let mut g = Graph::new();
        let b = m.params().bind(&mut g);
        let l = m.loss(&mut g, &b, &Batch { items: batch.items.clone(), aux_grids: Vec::new() }).unwrap();
        let graph_loss = g.value(l.pred.unwrap()).data()[0];
        let mut g2 = Graph::new();
        let mut norm_rows = Vec::new();
        let mut y_rows = Vec::new();
        let deltas: Vec<Vec<f64>> = batch.items.iter().map(|it| it.delta.clone()).collect();
        let ny = Normalizer::fit(8, deltas.iter().map(Vec::as_slice));
        for (p, d) in pred.iter().zip(&deltas) {
            norm_rows.push(ny.apply(p));
            y_rows.push(ny.apply(d));
        }
        let p = g2.leaf(Tensor::from_rows(&norm_rows));
        let y = g2.leaf(Tensor::from_rows(&y_rows));
        let lo = prediction_loss(&mut g2, p, y, Objective::Mse);
        let infer_loss = g2.value(lo).data()[0];
        assert!(
            (graph_loss - infer_loss).abs() < 1e-9 * graph_loss.abs().max(1.0),
            "{}: {graph_loss} vs {infer_loss}",
            method.name()
        );
    }
}

#[test]
fn fomaml_zero_rate_or_steps_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let batch = push_batch(&mut rng, 1, 2);
    let cfg = HyperConfig::push_default();
    for (lr, steps) in [(0.0, 5), (0.01, 0)] {
        let mut m = Fomaml::new(
            &cfg,
            &BaselineConfig {
                inner_lr: lr,
                inner_steps: steps,
                ..BaselineConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        m.fit_normalizers(&batch.items);
        let adapted = m.adapt(&m.params, &batch.items[0].ctx.window).unwrap();
        assert_eq!(adapted, m.params);
    }
}

#[test]
fn one_sgd_step_on_a_quadratic_is_exact() {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::vector(vec![1.0]));
    let lr = 0.1;
    let adapted = sgd_adapt(
        &p,
        |g, b| {
            let c = g.leaf(Tensor::vector(vec![3.0]));
            let d = g.sub(b.get("w"), c);
            let sq = g.square(d);
            Ok(g.sum(sq))
        },
        lr,
        1,
    )
    .unwrap();
    // d/dw (w - 3)^2 at 1 is -4.
    assert_eq!(adapted.get("w").unwrap().data()[0], 1.0 + lr * 4.0);
}

#[test]
fn adaptation_lowers_support_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let batch = push_batch(&mut rng, 4, 2);
    let mut m = Fomaml::new(
        &HyperConfig::push_default(),
        &BaselineConfig {
            inner_lr: 1e-3,
            ..BaselineConfig::default()
        },
        &mut rng,
    )
    .unwrap();
    m.fit_normalizers(&batch.items);
    for it in batch.items.iter().step_by(2) {
        let w = &it.ctx.window;
        let before = m.support_loss(&m.params, w).unwrap();
        let after = m.support_loss(&m.adapt(&m.params, w).unwrap(), w).unwrap();
        assert!(after <= before, "{after} > {before}");
    }
}

#[test]
fn fomaml_gradient_is_query_gradient_at_adapted_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let batch = push_batch(&mut rng, 1, 3);
    let mut m = Fomaml::new(&mini(EnvKind::Push), &extra(), &mut rng).unwrap();
    m.fit_normalizers(&batch.items);
    let mut g = Graph::new();
    let b = m.params.bind(&mut g);
    let l = m.loss(&mut g, &b, &batch).unwrap();
    g.backward(l.total());
    let meta_grads = m.params.grads(&g, &b);

    let adapted = m.adapt(&m.params, &batch.items[0].ctx.window).unwrap();
    let mut q = Xyz::new(&mini(EnvKind::Push), &mut rng).unwrap();
    q.norms = m.norms.clone();
    for (name, t) in adapted.iter() {
        *q.params.get_mut(&name.replacen("meta", "head", 1)).unwrap() = t.clone();
    }
    let mut g = Graph::new();
    let b = q.params.bind(&mut g);
    let l = q.loss(&mut g, &b, &batch).unwrap();
    g.backward(l.total());
    let query_grads = q.params.grads(&g, &b);
    for (a, b) in meta_grads.iter().zip(&query_grads) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }
}

#[test]
fn retrieval_finds_own_shape_and_breaks_ties_low() {
    let keys: Vec<Grid> = TRAIN_SHAPES.iter().map(|s| s.grid()).collect();
    for (i, g) in keys.iter().enumerate() {
        assert_eq!(expert_retrieve(&keys, g), i);
    }
    let dup = vec![keys[4].clone(), keys[4].clone(), keys[0].clone()];
    assert_eq!(expert_retrieve(&dup, &keys[4]), 0);
    let first: Vec<usize> = TEST_SHAPES.iter().map(|s| expert_retrieve(&keys, &s.grid())).collect();
    let second: Vec<usize> = TEST_SHAPES.iter().map(|s| expert_retrieve(&keys, &s.grid())).collect();
    assert_eq!(first, second);
    assert_eq!(nearest_center(&[1.0, 2.0], 1.5), 0);
    assert_eq!(nearest_center(&[1.0, 2.0], 1.6), 1);
}

#[test]
fn expert_steps_only_touch_present_experts() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let cfg = HyperConfig::push_default();
    let mut m = ExpertEns::new(&cfg, &extra(), &mut rng).unwrap();
    let batch = push_batch(&mut rng, 2, 3);
    m.fit_normalizers(&batch.items);
    let present: Vec<usize> = batch.items.iter().map(|it| m.group_of(it).unwrap()).collect();
    let before = m.params.clone();
    let mut adam = AdamState::new(&m.params, 1e-3);
    m.train_step(&batch, &mut adam, 0.0).unwrap();
    m.train_step(&batch, &mut adam, 0.0).unwrap();
    for (name, t) in m.params.iter() {
        let e: usize = name[3..name.find('.').unwrap()].parse().unwrap();
        let moved = t != before.get(name).unwrap();
        if !present.contains(&e) {
            assert!(!moved, "{name} moved");
        }
    }
    assert_eq!(m.n_experts(), 12);
}

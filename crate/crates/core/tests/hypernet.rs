use std::sync::Arc;

use hyperdyn::autodiff::*;
use hyperdyn::encoders::{InteractionEncoder, ShapeEncoder, EINT, EVIS};
use hyperdyn::env::*;
use hyperdyn::hypernet::*;
use hyperdyn::model::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn push_context(sys: &PushSystem, id: usize, rng: &mut ChaCha8Rng) -> (Arc<Context>, Trajectory) {
    let probe = collect_push_trajectory(sys, id, rng, 5);
    let ctx = Arc::new(Context {
        env: EnvKind::Push,
        system_id: id,
        window: probe.steps.clone(),
        grid: Some(sys.grid().clone()),
        side: vec![sys.mass, sys.mu],
    });
    let traj = collect_push_trajectory(sys, id, rng, 6);
    (ctx, traj)
}

fn push_batch(rng: &mut ChaCha8Rng, n_systems: usize) -> Batch {
    let mut items = Vec::new();
    for id in 0..n_systems {
        let sys = sample_push_system(rng, Split::Train);
        let (ctx, traj) = push_context(&sys, id, rng);
        for t in traj.steps.iter().take(2) {
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
        aux_grids: vec![TRAIN_SHAPES[0].grid(), TEST_SHAPES[1].grid()],
    }
}

/// Zero-initialised biases put the leaky ReLUs of empty grid regions exactly
/// on their kink; nudge every parameter off it before differencing.
fn jitter(p: &mut ParamSet, rng: &mut ChaCha8Rng) {
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
}

fn mini_push_config() -> HyperConfig {
    HyperConfig {
        eint_hidden: vec![3],
        z_int: 1,
        z_vis: 1,
        hyper_hidden: 3,
        target_hidden: vec![4],
        decoder_hidden: 4,
        ..HyperConfig::push_default()
    }
}

#[test]
fn generated_weight_count_matches_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfgs = [
        HyperConfig::push_default(),
        HyperConfig::loco_default(EnvKind::Slope),
        HyperConfig::loco_default(EnvKind::Pier),
        HyperConfig {
            target_hidden: vec![128, 128],
            ..HyperConfig::loco_default(EnvKind::Slope)
        },
    ];
    for cfg in cfgs {
        let m = HyperDynamics::new(cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g);
        let z = g.leaf(Tensor::matrix(2, m.cfg.z_dim(), vec![0.3; 2 * m.cfg.z_dim()]));
        let w = m.hyper.generate_weights(&mut g, &b, z).unwrap();
        assert_eq!(g.value(w).cols(), param_count(&m.target));
    }
}

#[test]
fn miniature_composition_matches_finite_differences() {
    // z = [z_int (1), z_vis (1)], target [3, 4, 2].
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eint = InteractionEncoder::new(2, 5, &[3], 1).unwrap();
        let evis = ShapeEncoder::new(1);
        let target = MlpSpec::leaky(vec![3, 4, 2]).unwrap();
        let hyper = HyperNet::new(2, 3, &target).unwrap();
        let mut p = ParamSet::new();
        eint.init(&mut p, &mut rng);
        evis.init(&mut p, &mut rng);
        hyper.init(&target, &mut p, &mut rng);
        jitter(&mut p, &mut rng);
        let windows: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grids: Vec<f64> = [ShapeKind::L, ShapeKind::T, ShapeKind::U]
            .iter()
            .flat_map(|&k| rotate_grid(&shape_grid(k, 0.1, 0.09), 0.4).cells().to_vec())
            .collect();
        let xs: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = finite_diff_report(
            &p,
            |g, b| {
                let w = g.leaf(Tensor::matrix(3, 10, windows.clone()));
                let zi = eint.encode(g, b, w).unwrap();
                let gr = g.leaf(Tensor::matrix(3, GRID_CELLS, grids.clone()));
                let zv = evis.encode(g, b, gr).unwrap();
                let z = g.concat(&[zi, zv]);
                let wt = hyper.generate_weights(g, b, z).unwrap();
                let x = g.leaf(Tensor::matrix(3, 3, xs.clone()));
                let pred = predict_delta(g, &target, wt, x).unwrap();
                let y = g.leaf(Tensor::matrix(3, 2, ys.clone()));
                prediction_loss(g, pred, y, Objective::Mse)
            },
            1e-5,
            usize::MAX,
        );
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn model_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = HyperDynamics::new(mini_push_config(), &mut rng).unwrap();
    let batch = push_batch(&mut rng, 3);
    m.fit_normalizers(&batch.items);
    jitter(&mut m.params, &mut rng);
    let report = finite_diff_report(
        &m.params,
        |g, b| m.loss(g, b, &batch).unwrap().total(),
        1e-5,
        16,
    );
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn euclidean_metric_and_mse_objective() {
    let mut g = Graph::new();
    let pred = g.leaf(Tensor::matrix(1, 8, vec![0.0; 8]));
    let mut t = vec![0.0; 8];
    t[0] = 3.0;
    t[1] = 4.0;
    let target = g.leaf(Tensor::matrix(1, 8, t));
    let l2 = prediction_loss(&mut g, pred, target, Objective::L2);
    let mse = prediction_loss(&mut g, pred, target, Objective::Mse);
    assert!((g.value(l2).data()[0] - 5.0).abs() < 1e-12);
    assert!((g.value(mse).data()[0] - 25.0 / 8.0).abs() < 1e-12);
    let same = prediction_loss(&mut g, target, target, Objective::L2);
    assert_eq!(g.value(same).data()[0], 0.0);
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let preds: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for obj in [Objective::Mse, Objective::L2] {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::matrix(4, 3, preds.clone()));
        let y = g.leaf(Tensor::matrix(4, 3, ys.clone()));
        let full = prediction_loss(&mut g, p, y, obj);
        let full = g.value(full).data()[0];
        let mut sum = 0.0;
        for r in 0..4 {
            let p = g.leaf(Tensor::matrix(1, 3, preds[3 * r..3 * r + 3].to_vec()));
            let y = g.leaf(Tensor::matrix(1, 3, ys[3 * r..3 * r + 3].to_vec()));
            let l = prediction_loss(&mut g, p, y, obj);
            sum += g.value(l).data()[0];
        }
        assert!((full - sum / 4.0).abs() < 1e-12);
    }
}

#[test]
fn zero_generated_weights_predict_zero() {
    let target = push_target(&[32, 32, 32]).unwrap();
    let mut g = Graph::new();
    let w = g.leaf(Tensor::matrix(1, 2696, vec![0.0; 2696]));
    let x = g.leaf(Tensor::matrix(1, 9, vec![0.5; 9]));
    let y = predict_delta(&mut g, &target, w, x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn orientation_changes_generated_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = HyperDynamics::new(HyperConfig::push_default(), &mut rng).unwrap();
    let sys = PushSystem::new(ShapeSpec::new(ShapeKind::L, 0.1, 0.12), 1.0, 0.01).unwrap();
    let zv0 = m.shape_code(&rotate_grid(sys.grid(), 0.0)).unwrap();
    let zv1 = m.shape_code(&rotate_grid(sys.grid(), std::f64::consts::FRAC_PI_2)).unwrap();
    assert!(euclid(&zv0, &zv1) > 0.0);
    let (ctx, _) = push_context(&sys, 0, &mut rng);
    m.prepare(&ctx).unwrap();
    let w0 = m.expert_weights(0.0).unwrap();
    let w1 = m.expert_weights(std::f64::consts::FRAC_PI_2).unwrap();
    assert_eq!(w0.len(), 2696);
    assert!(euclid(&w0, &w1) > 0.0);
}

#[test]
fn fixed_code_defines_a_fixed_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut m = HyperDynamics::new(HyperConfig::loco_default(EnvKind::Slope), &mut rng).unwrap();
    let sys = LocoSystem::uniform(LocoVariant::Slope, 1.0).unwrap();
    let traj = collect_loco_rollout(&sys, 0, &mut RandomLocoPolicy(rng.clone()), 16);
    let ctx = Context {
        env: EnvKind::Slope,
        system_id: 0,
        window: traj.steps,
        grid: None,
        side: vec![1.0],
    };
    m.prepare(&ctx).unwrap();
    let states: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(-1.0..3.0)]).collect();
    let actions: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
    let a = m.predict(&states, &actions).unwrap();
    let b = m.predict(&states, &actions).unwrap();
    assert_eq!(a, b);
    m.prepare(&ctx).unwrap();
    assert_eq!(a, m.predict(&states, &actions).unwrap());
}

#[test]
fn inference_path_agrees_with_training_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut m = HyperDynamics::new(HyperConfig::push_default(), &mut rng).unwrap();
    let batch = push_batch(&mut rng, 4);
    m.fit_normalizers(&batch.items);
    let mut g = Graph::new();
    let b = m.params.bind(&mut g);
    let (pred, _) = m.forward_batch(&mut g, &b, &batch.items).unwrap();
    let pred = g.value(pred).clone();
    for (r, it) in batch.items.iter().enumerate() {
        m.prepare(&it.ctx).unwrap();
        let d = m.predict(std::slice::from_ref(&it.state), std::slice::from_ref(&it.action)).unwrap();
        let want = m.norms.y.invert(pred.row(r));
        for (a, b) in d[0].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn unroll_composes_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut m = HyperDynamics::new(HyperConfig::push_default(), &mut rng).unwrap();
    let sys = sample_push_system(&mut rng, Split::Test);
    let (ctx, traj) = push_context(&sys, 0, &mut rng);
    m.prepare(&ctx).unwrap();
    let actions: Vec<Vec<f64>> = traj.steps.iter().map(|t| t.action.clone()).collect();
    let s0 = &traj.steps[0].state;
    let full = unroll(&mut m, EnvKind::Push, s0, &actions).unwrap();
    let head = unroll(&mut m, EnvKind::Push, s0, &actions[..2]).unwrap();
    let tail = unroll(&mut m, EnvKind::Push, &head[1], &actions[2..]).unwrap();
    assert_eq!(full[..2], head[..]);
    assert_eq!(full[2..], tail[..]);
    assert!(unroll(&mut m, EnvKind::Push, s0, &[]).unwrap().is_empty());
    let one = unroll(&mut m, EnvKind::Push, s0, &actions[..1]).unwrap();
    let d = m.predict(std::slice::from_ref(s0), &actions[..1]).unwrap();
    assert_eq!(one[0], EnvKind::Push.compose(s0, &d[0]));
}

#[test]
fn oracle_unroll_reproduces_environment() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let sys = sample_push_system(&mut rng, Split::Train);
        let traj = collect_push_trajectory(&sys, 0, &mut rng, 8);
        let mut oracle = EnvOracle {
            system: SystemSpec::Push(sys),
        };
        let actions: Vec<Vec<f64>> = traj.steps.iter().map(|t| t.action.clone()).collect();
        let pred = unroll(&mut oracle, EnvKind::Push, &traj.steps[0].state, &actions).unwrap();
        assert_eq!(pred, traj.states(EnvKind::Push)[1..]);
    }
    let sys = LocoSystem::uniform(LocoVariant::Pier, 0.4).unwrap();
    let traj = collect_loco_rollout(&sys, 0, &mut RandomLocoPolicy(rng.clone()), 30);
    let mut oracle = EnvOracle {
        system: SystemSpec::Loco(sys),
    };
    let actions: Vec<Vec<f64>> = traj.steps.iter().map(|t| t.action.clone()).collect();
    let pred = unroll(&mut oracle, EnvKind::Pier, &traj.steps[0].state, &actions).unwrap();
    assert_eq!(pred, traj.states(EnvKind::Pier)[1..]);
}

#[test]
fn every_branch_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut m = HyperDynamics::new(HyperConfig::push_default(), &mut rng).unwrap();
    let batch = push_batch(&mut rng, 4);
    m.fit_normalizers(&batch.items);
    let mut g = Graph::new();
    let b = m.params.bind(&mut g);
    let losses = m.loss(&mut g, &b, &batch).unwrap();
    g.backward(losses.total());
    let grads = m.params.grads(&g, &b);
    for prefix in [EINT, EVIS, HYPER, hyperdyn::encoders::DECODER] {
        let any = m
            .params
            .names()
            .zip(&grads)
            .any(|(n, t)| n.starts_with(prefix) && t.data().iter().any(|&v| v != 0.0));
        assert!(any, "no gradient reaches {prefix}");
    }

    // The reconstruction term alone leaves the interaction encoder untouched.
    let mut g = Graph::new();
    let b = m.params.bind(&mut g);
    let losses = m.loss(&mut g, &b, &batch).unwrap();
    g.backward(losses.aux.unwrap());
    let grads = m.params.grads(&g, &b);
    for (n, t) in m.params.names().zip(&grads) {
        if n.starts_with(EINT) || n.starts_with(HYPER) {
            assert!(t.data().iter().all(|&v| v == 0.0), "{n}");
        }
    }
}

#[test]
fn checks_configuration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bad = HyperConfig {
        z_vis: 0,
        ..HyperConfig::push_default()
    };
    assert!(HyperDynamics::new(bad, &mut rng).is_err());
    let mut m = HyperDynamics::new(HyperConfig::push_default(), &mut rng).unwrap();
    assert!(m.predict(&[vec![0.0; 8]], &[vec![0.0; 2]]).is_err());
    assert_eq!(m.forward_hidden(), vec![32, 32, 32]);
}


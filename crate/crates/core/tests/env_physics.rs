use hyperdyn::env::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn random_system(rng: &mut ChaCha8Rng) -> PushSystem {
    let split = if rng.gen_bool(0.5) { Split::Train } else { Split::Test };
    sample_push_system(rng, split)
}

#[test]
fn push_step_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let sys = random_system(&mut rng);
        let s = sample_push_start(&sys, &mut rng);
        let a = sample_push_action(&sys, &s, &mut rng);
        let x = push_step(&sys, &s, a);
        let y = push_step(&sys, &s, a);
        assert_eq!(x.to_vec(), y.to_vec());
        assert!(x.is_finite());
    }
}

#[test]
fn resting_object_without_contact_never_moves() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let sys = random_system(&mut rng);
        let mut s = sample_push_start(&sys, &mut rng);
        // effector retreats straight away from the object
        let away = [s.e[0] - s.p[0], s.e[1] - s.p[1]];
        let l = away[0].hypot(away[1]);
        for _ in 0..5 {
            let n = push_step(&sys, &s, [0.01 * away[0] / l, 0.01 * away[1] / l]);
            assert_eq!((n.p, n.theta, n.v, n.omega), (s.p, s.theta, s.v, s.omega));
            s = n;
        }
    }
}

#[test]
fn friction_dissipates_to_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let sys = random_system(&mut rng);
        let mut s = sample_push_start(&sys, &mut rng);
        s.e = [0.0, 0.0];
        s.p = [0.3, 0.3];
        s.v = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
        s.omega = rng.gen_range(-3.0..3.0);
        let mut ke = s.kinetic_energy(&sys);
        let mut steps = 0;
        while ke > 0.0 {
            s = push_step(&sys, &s, [0.0, 0.0]);
            let k = s.kinetic_energy(&sys);
            assert!(k <= ke);
            ke = k;
            steps += 1;
            assert!(steps < 20, "never came to rest");
        }
        assert_eq!(s.v, [0.0, 0.0]);
        assert_eq!(s.omega, 0.0);
    }
}

#[test]
fn impulse_is_bounded_and_decreasing_in_mass() {
    // Contact happens only at the final sample of the sweep, so no sliding
    // time remains and the post-step velocity is exactly the impulse.
    let shape = TRAIN_SHAPES[1];
    let s = PushState {
        p: [0.3, 0.3],
        e: [0.25, 0.3],
        ..Default::default()
    };
    let delta = [0.0105, 0.0];
    let u = 0.0105 / DT;
    let mut prev = f64::INFINITY;
    for k in 0..=14 {
        let m = MASS_RANGE.0 + (MASS_RANGE.1 - MASS_RANGE.0) * k as f64 / 14.0;
        let sys = PushSystem::new(shape, m, 0.01).unwrap();
        let n = push_step(&sys, &s, delta);
        let dv = n.v[0].hypot(n.v[1]);
        assert!(dv > 0.0 && dv <= u, "mass {m}: {dv}");
        assert!(dv < prev);
        assert!((dv - u * EFFECTOR_MASS / (m + EFFECTOR_MASS)).abs() < 1e-15);
        prev = dv;
    }
}

#[test]
fn sliding_distance_matches_kinematics_across_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let sys = random_system(&mut rng);
        let v0 = rng.gen_range(0.001..0.06);
        let phi: f64 = rng.gen_range(-3.0..3.0);
        let s = PushState {
            p: [0.3, 0.3],
            v: [v0 * phi.cos(), v0 * phi.sin()],
            e: [0.0, 0.0],
            ..Default::default()
        };
        assert!(v0 / (sys.mu * GRAVITY) < DT);
        let n = push_step(&sys, &s, [0.0, 0.0]);
        let d = (n.p[0] - 0.3).hypot(n.p[1] - 0.3);
        assert!((d - v0 * v0 / (2.0 * sys.mu * GRAVITY)).abs() < 1e-9);
    }
}

#[test]
fn rotation_round_trip_preserves_interior() {
    let shapes: Vec<_> = TRAIN_SHAPES.iter().chain(&TEST_SHAPES).collect();
    for shape in shapes {
        let g = shape.grid();
        for k in 1..12 {
            let th = 0.27 * k as f64;
            let back = rotate_grid(&rotate_grid(&g, th), -th);
            for i in 2..GRID_SIDE - 2 {
                for j in 2..GRID_SIDE - 2 {
                    let v = g.get(i, j);
                    let uniform = (i - 2..=i + 2).all(|a| (j - 2..=j + 2).all(|b| g.get(a, b) == v));
                    if uniform {
                        let err = (back.get(i, j) - v).abs();
                        assert!(err <= 0.15, "{} theta {th}: cell ({i},{j}) off by {err}", shape.label());
                    }
                }
            }
        }
    }
}

#[test]
fn every_collected_trajectory_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for id in 0..200 {
        let sys = random_system(&mut rng);
        let t = collect_push_trajectory(&sys, id, &mut rng, 5);
        assert!(t.is_consistent(EnvKind::Push));
        let states = t.states(EnvKind::Push);
        for s in &states {
            let st = PushState::from_slice(s);
            assert!(st.theta > -std::f64::consts::PI && st.theta <= std::f64::consts::PI);
            assert!(st.p.iter().all(|x| (0.0..=TABLE_SIZE).contains(x)));
        }
    }
}

#[test]
fn sampled_pushes_respect_magnitude_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sys = sample_push_system(&mut rng, Split::Train);
    let s = sample_push_start(&sys, &mut rng);
    for _ in 0..500 {
        let a = sample_push_action(&sys, &s, &mut rng);
        let m = a[0].hypot(a[1]);
        assert!((PUSH_RANGE.0..=PUSH_RANGE.1).contains(&m));
    }
}

#[test]
fn data_collection_pushes_usually_make_contact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut moved = 0;
    let n = 400;
    for id in 0..n {
        let sys = sample_push_system(&mut rng, Split::Train);
        let t = collect_push_trajectory(&sys, id, &mut rng, 5);
        if t.steps.iter().any(|s| s.delta[0] != 0.0 || s.delta[1] != 0.0) {
            moved += 1;
        }
    }
    assert!(moved * 10 > n * 7, "only {moved}/{n} trajectories moved the object");
}

#[test]
fn physics_suite_is_fast() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for id in 0..2000 {
        let sys = random_system(&mut rng);
        collect_push_trajectory(&sys, id, &mut rng, 5);
    }
    assert!(t0.elapsed().as_secs_f64() < 10.0);
}

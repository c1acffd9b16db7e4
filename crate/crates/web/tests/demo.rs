use hyperdyn_web::*;

#[test]
fn shape_grid_rotates_and_rejects_unknown_kinds() {
    assert_eq!(shape_kinds().len(), 7);
    let side = grid_side();
    let g0 = shape_grid("l", 0.10, 0.12, 0.0).unwrap();
    assert_eq!(g0.len(), side * side);
    let occupied = |g: &[f64]| g.iter().filter(|&&c| c > 0.5).count();
    let quarter = shape_grid("l", 0.10, 0.12, std::f64::consts::FRAC_PI_2).unwrap();
    assert_eq!(occupied(&g0), occupied(&quarter));
    assert_ne!(g0, quarter);
    assert!(shape_grid("blob", 0.1, 0.1, 0.0).is_err());
    assert!(shape_grid("rectangle", 0.001, 0.001, 0.0).is_err());
}

#[test]
fn pushing_moves_the_effector_and_object() {
    let mut w = PushWorld::new("rectangle", 0.08, 0.08, 0.5, 0.01, 1).unwrap();
    let s0 = w.state();
    assert_eq!(s0.len(), 8);
    // Sweep the effector through the object's centre.
    let s1 = w.push_toward(s0[0], s0[1], 0.06);
    assert!((s1[6] - s0[6]).hypot(s1[7] - s0[7]) <= 0.06 + 1e-12);
    let moved = (s1[0] - s0[0]).hypot(s1[1] - s0[1]);
    let reached = (s0[0] - s0[6]).hypot(s0[1] - s0[7]) < 0.06;
    assert!(!reached || moved > 0.0);
    assert!(PushWorld::new("rectangle", 0.08, 0.08, 5.0, 0.01, 1).is_err());
}

#[test]
fn planner_drives_object_toward_goal() {
    let mut w = PushWorld::new("ellipse", 0.10, 0.08, 0.4, 0.01, 3).unwrap();
    let s = w.state();
    let goal = [s[0] + 0.08, s[1]];
    let d0 = (s[0] - goal[0]).hypot(s[1] - goal[1]);
    for _ in 0..15 {
        let a = w.plan_step(goal[0], goal[1], 48, 1).unwrap();
        assert_eq!(a.len(), 2);
    }
    let s = w.state();
    assert!((s[0] - goal[0]).hypot(s[1] - goal[1]) < d0);
}

#[test]
fn loco_rollout_layout() {
    let d = loco_rollout("slope", false, 0, 1.0, 50).unwrap();
    assert_eq!(d.len(), 200);
    assert!(d[4 * 49] > 0.0, "constant forward force advances");
    let novel = loco_rollout("pier", true, 0, 1.0, 10).unwrap();
    assert!(novel.chunks(4).all(|c| c[3] <= 0.1 || c[3] >= 0.9));
    assert!(loco_rollout("ice", false, 0, 1.0, 10).is_err());
}

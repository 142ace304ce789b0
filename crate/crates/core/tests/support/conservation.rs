//! Energy and momentum checks of the rigid-body simulator.

use fallguard::model::{LinkSpec, Sensitivity};
use fallguard::physics::{mechanical_energy, step, CollisionGeometry, SimState, WorldParams};
use fallguard::{default_model, RobotModel};

/// Relative mechanical-energy drift of the full robot tumbling through the
/// air for one second with zero motor torque.
pub fn free_flight_drift() -> f64 {
    let m = default_model();
    let w = WorldParams {
        dt: 1.0 / 200.0,
        ..WorldParams::default()
    };
    let mut s = SimState::standing(&m);
    s.base_pose[1] += 5.0;
    s.base_vel = [0.7, 2.0, 1.5];
    for (i, v) in s.qd.iter_mut().enumerate() {
        *v = 0.8 * (i as f64 * 1.3).sin();
    }
    let zero = vec![0.0; m.n_joints()];
    let e0 = mechanical_energy(&s, &m, w.gravity);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        s = step(&s, &zero, &m, CollisionGeometry::Full, &w).unwrap().0;
        let e = mechanical_energy(&s, &m, w.gravity);
        worst = worst.max(((e - e0) / e0).abs());
    }
    worst
}

fn ball(radius: f64, mass: f64) -> RobotModel {
    let link = LinkSpec {
        name: "ball".into(),
        mass,
        length: 2.0 * radius,
        inertia: 0.4 * mass * radius * radius,
        collision_radius: radius,
        sensitivity: Sensitivity::Low,
        com: [0.0, 0.0],
        capsule: [[0.0, 0.0], [0.0, 0.0]],
        is_foot: false,
    };
    RobotModel::new(vec![link], vec![])
}

/// Drops a single body from `height` onto the ground. Returns
/// (measured contact impulse, momentum change, momentum-transfer oracle).
///
/// The oracle is the impulse that stops a body arriving at `√(2 g h)` on a
/// fully inelastic ground: `m √(2 g h)`, since gravity's own impulse during
/// the brief contact is subtracted from the measurement.
pub fn drop_impulse(height: f64, mass: f64) -> (f64, f64, f64) {
    let radius = 0.05;
    let m = ball(radius, mass);
    let w = WorldParams::default();
    let mut s = SimState {
        base_pose: [0.0, radius + height, 0.0],
        base_vel: [0.0; 3],
        q: vec![],
        qd: vec![],
        time: 0.0,
    };
    let mut impulse = 0.0;
    let mut v_in = None;
    for _ in 0..((height * 2.0).sqrt() / w.dt * 2.0 + 400.0) as usize {
        let (n, r) = step(&s, &[], &m, CollisionGeometry::Simplified, &w).unwrap();
        if r.ground_reaction_sum[1] > 0.0 && v_in.is_none() {
            v_in = Some(s.base_vel[1]);
        }
        if v_in.is_some() {
            impulse += (r.ground_reaction_sum[1] - mass * w.gravity) * w.dt;
        }
        s = n;
    }
    let dp = mass * (s.base_vel[1] - v_in.expect("the ball lands"));
    (impulse, dp, mass * (2.0 * w.gravity * height).sqrt())
}

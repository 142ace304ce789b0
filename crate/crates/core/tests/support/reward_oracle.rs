//! Brute-force reimplementation of the damage-aware reward, written from the
//! formulas rather than the library code, for cross-checking.

use fallguard::config::RewardConfig;
use fallguard::physics::FrameReadout;
use fallguard::reward::{contact_penalty, joint_penalty, torque_penalty, total_reward, RegulationInput};
use fallguard::RobotModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weight_by_name(name: &str) -> f64 {
    match name {
        "head" | "forearm_l" | "forearm_r" => 1000.0,
        "shank_l" | "shank_r" => 1.0,
        _ => 0.5,
    }
}

pub fn oracle_contact(r: &FrameReadout, m: &RobotModel, alpha: f64, g: f64) -> f64 {
    let mut scores = Vec::new();
    for (i, link) in m.links.iter().enumerate() {
        let f = r.link_force[i];
        let touching = f > 0.0;
        if touching {
            let excess = if f - link.mass * g > 0.0 { f - link.mass * g } else { 0.0 };
            scores.push(weight_by_name(&link.name) * excess);
        }
    }
    if scores.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut peak = f64::NEG_INFINITY;
    for s in &scores {
        total += s;
        if *s > peak {
            peak = *s;
        }
    }
    total / scores.len() as f64 + alpha * peak
}

pub fn oracle_joint(r: &FrameReadout, m: &RobotModel) -> f64 {
    let mut total = 0.0;
    for i in 0..m.joints.len() {
        let over = r.joint_reaction[i] - m.joints[i].reaction_force_threshold;
        if over > 0.0 {
            total += over;
        }
    }
    total
}

pub fn oracle_torque(r: &FrameReadout, m: &RobotModel) -> f64 {
    let mut total = 0.0;
    for i in 0..m.joints.len() {
        let ratio = r.joint_external_torque[i].abs() / m.joints[i].torque_rated;
        if ratio > 1.0 {
            total += (ratio - 1.0) * (ratio - 1.0);
        }
    }
    total
}

pub struct RegState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub prev_qd: Vec<f64>,
    pub action: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub dt: f64,
}

pub fn oracle_regulation(s: &RegState, m: &RobotModel, c: &RewardConfig) -> f64 {
    let mut pos = 0.0;
    let mut vel = 0.0;
    let mut acc = 0.0;
    let mut rate = 0.0;
    for i in 0..m.joints.len() {
        let [lo, hi] = m.joints[i].position_limits;
        let gap = (s.q[i] - lo).min(hi - s.q[i]);
        if gap < c.limit_margin {
            pos += (1.0 - gap / c.limit_margin).powi(2);
        }
        vel += s.qd[i].powi(2);
        acc += ((s.qd[i] - s.prev_qd[i]) / s.dt).powi(2);
        rate += (s.action[i] - s.prev_action[i]).powi(2);
    }
    c.w_qpos * pos + c.w_qvel * vel + c.w_qacc * acc + c.w_arate * rate
}

pub fn oracle_total(r: &FrameReadout, s: &RegState, m: &RobotModel, c: &RewardConfig, g: f64) -> f64 {
    let impact = c.w_c * oracle_contact(r, m, c.alpha, g) / c.contact_scale
        + c.w_j * oracle_joint(r, m) / c.joint_scale
        + c.w_e * oracle_torque(r, m) / c.torque_scale;
    -impact - oracle_regulation(s, m, c)
}

fn random_readout(m: &RobotModel, rng: &mut ChaCha8Rng) -> FrameReadout {
    let mut r = FrameReadout::empty(m.n_links(), m.n_joints());
    for (i, link) in m.links.iter().enumerate() {
        r.link_force[i] = match rng.random_range(0..4) {
            0 => 0.0,
            1 => link.mass * 9.81 * rng.random_range(0.0..1.0),
            _ => rng.random_range(0.0..5000.0),
        };
    }
    for (i, j) in m.joints.iter().enumerate() {
        r.joint_reaction[i] = j.reaction_force_threshold * rng.random_range(0.0..2.5);
        r.joint_external_torque[i] = j.torque_rated * rng.random_range(-3.0..3.0);
        r.motor_torque[i] = j.torque_rated * rng.random_range(-1.0..1.0);
    }
    r
}

fn random_reg(m: &RobotModel, rng: &mut ChaCha8Rng) -> RegState {
    let n = m.n_joints();
    let q = m
        .joints
        .iter()
        .map(|j| {
            let [lo, hi] = j.position_limits;
            rng.random_range(lo - 0.05..hi + 0.05)
        })
        .collect();
    let mut v = |s: f64| (0..n).map(|_| rng.random_range(-s..s)).collect::<Vec<_>>();
    RegState {
        q,
        qd: v(20.0),
        prev_qd: v(20.0),
        action: v(2.0),
        prev_action: v(2.0),
        dt: 0.02,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Largest relative disagreement between library and oracle over
/// `n` random readouts, per term: contact, joint, torque, total.
pub fn max_reward_disagreement(m: &RobotModel, n: usize, seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = 9.81;
    let mut worst = [0.0f64; 4];
    for k in 0..n {
        let mut c = RewardConfig::default();
        // Vary the configuration too, so scale handling is exercised.
        if k % 2 == 1 {
            c.alpha = rng.random_range(0.0..1.0);
            c.w_c = rng.random_range(0.0..2.0);
            c.w_j = rng.random_range(0.0..2.0);
            c.w_e = rng.random_range(0.0..2.0);
            c.contact_scale = rng.random_range(1.0..5000.0);
        }
        let r = random_readout(m, &mut rng);
        let s = random_reg(m, &mut rng);
        let input = RegulationInput {
            q: &s.q,
            qd: &s.qd,
            prev_qd: &s.prev_qd,
            action: &s.action,
            prev_action: &s.prev_action,
            dt: s.dt,
        };
        let got = total_reward(&r, &input, &c, m, g);
        let pairs = [
            (contact_penalty(&r, m, c.alpha, g), oracle_contact(&r, m, c.alpha, g)),
            (joint_penalty(&r, m, false), oracle_joint(&r, m)),
            (torque_penalty(&r, m), oracle_torque(&r, m)),
            (got.total, oracle_total(&r, &s, m, &c, g)),
        ];
        for (w, (a, b)) in worst.iter_mut().zip(pairs) {
            *w = w.max(rel(a, b));
        }
    }
    worst
}

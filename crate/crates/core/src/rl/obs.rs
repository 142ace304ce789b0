//! Actor and critic observations.

use std::collections::VecDeque;

use rand::Rng as _;

use crate::config::Randomization;
use crate::model::RobotModel;
use crate::physics::{self, SimState};
use crate::rng::Rng;

/// Frames stacked into one actor observation.
pub const HISTORY: usize = 5;
/// Simulator-only fields appended for the critic.
pub const PRIVILEGED_DIM: usize = 9;

const ANG_VEL_SCALE: f64 = 0.25;
const QD_SCALE: f64 = 0.05;
const LIN_VEL_SCALE: f64 = 0.5;

/// `[pitch, pitch rate, q − q_default, qd, previous action, gravity (2)]`.
pub fn frame_dim(n_joints: usize) -> usize {
    4 + 3 * n_joints
}

pub fn actor_dim(n_joints: usize) -> usize {
    HISTORY * frame_dim(n_joints)
}

pub fn critic_dim(n_joints: usize) -> usize {
    actor_dim(n_joints) + PRIVILEGED_DIM
}

/// What the deployed policy sees: the last [`HISTORY`] onboard frames,
/// oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorObservation(pub Vec<f64>);

/// Actor observation plus ground-truth simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticObservation {
    pub actor: ActorObservation,
    pub privileged: Vec<f64>,
}

impl CriticObservation {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.actor.0.clone();
        v.extend_from_slice(&self.privileged);
        v
    }
}

/// Onboard frame with per-frame uniform noise. `prev_offset` is the last
/// commanded target minus the default posture.
pub fn sense_frame(state: &SimState, model: &RobotModel, prev_offset: &[f64], noise: &Randomization, rng: &mut Rng) -> Vec<f64> {
    let mut jitter = |a: f64| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
    let pitch = state.base_pose[2];
    let mut f = Vec::with_capacity(frame_dim(model.n_joints()));
    f.push(pitch + jitter(noise.noise_orientation));
    f.push((state.base_vel[2] + jitter(noise.noise_ang_vel)) * ANG_VEL_SCALE);
    for (q, j) in state.q.iter().zip(&model.joints) {
        f.push(q - j.default_angle + jitter(noise.noise_joint_pos));
    }
    for qd in &state.qd {
        f.push((qd + jitter(noise.noise_joint_vel)) * QD_SCALE);
    }
    f.extend_from_slice(prev_offset);
    let g = projected_gravity(pitch);
    f.push(g[0] + jitter(noise.noise_gravity));
    f.push(g[1] + jitter(noise.noise_gravity));
    f
}

/// Gravity direction in the base frame.
pub fn projected_gravity(pitch: f64) -> [f64; 2] {
    [pitch.sin(), -pitch.cos()]
}

/// Base height and velocity, CoM position relative to the base and CoM
/// velocity, and episode progress in [0, 1].
pub fn privileged(state: &SimState, model: &RobotModel, progress: f64) -> Vec<f64> {
    let kin = state.kinematics(model);
    let vc = physics::com_velocity(state, model);
    vec![
        state.base_pose[1],
        state.base_vel[0] * LIN_VEL_SCALE,
        state.base_vel[1] * LIN_VEL_SCALE,
        kin.body_com[0] - state.base_pose[0],
        kin.body_com[1],
        vc[0] * LIN_VEL_SCALE,
        vc[1] * LIN_VEL_SCALE,
        state.base_pose[2].sin(),
        progress,
    ]
}

/// Rolling frame stack. Before the first push it is empty; the first frame
/// fills every slot.
#[derive(Debug, Clone, Default)]
pub struct ObsHistory {
    frames: VecDeque<Vec<f64>>,
}

impl ObsHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        if self.frames.is_empty() {
            self.frames.extend(std::iter::repeat_n(frame, HISTORY));
        } else {
            self.frames.pop_front();
            self.frames.push_back(frame);
        }
    }

    pub fn actor(&self) -> ActorObservation {
        ActorObservation(self.frames.iter().flatten().copied().collect())
    }
}

/// Maps an unbounded action to joint targets: zero is the default posture
/// and `±∞` reach the position limits.
pub fn squash(model: &RobotModel, action: &[f64]) -> Vec<f64> {
    action
        .iter()
        .zip(&model.joints)
        .map(|(a, j)| {
            let t = a.tanh();
            let d = j.default_angle;
            let span = if t >= 0.0 { j.position_limits[1] - d } else { d - j.position_limits[0] };
            (d + t * span).clamp(j.position_limits[0], j.position_limits[1])
        })
        .collect()
}

pub fn target_offsets(model: &RobotModel, targets: &[f64]) -> Vec<f64> {
    targets.iter().zip(&model.joints).map(|(t, j)| t - j.default_angle).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::model::default_model;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn first_frame_fills_history_oldest_first() {
        let mut h = ObsHistory::new();
        h.push(vec![1.0, 2.0]);
        assert_eq!(h.actor().0, [1.0, 2.0].repeat(HISTORY));
        h.push(vec![3.0, 4.0]);
        let a = h.actor().0;
        assert_eq!(&a[..2], &[1.0, 2.0]);
        assert_eq!(&a[a.len() - 2..], &[3.0, 4.0]);
    }

    #[test]
    fn noiseless_frame_layout() {
        let m = default_model();
        let s = SimState::standing(&m);
        let nj = m.n_joints();
        let z = Randomization::fixed(&Default::default());
        let f = sense_frame(&s, &m, &vec![0.5; nj], &z, &mut Rng::seed_from_u64(0));
        assert_eq!(f.len(), frame_dim(nj));
        assert!(f[2..2 + 2 * nj].iter().all(|v| *v == 0.0));
        assert_eq!(&f[2 + 2 * nj..2 + 3 * nj], vec![0.5; nj].as_slice());
        assert_eq!(&f[f.len() - 2..], &[0.0, -1.0]);
    }

    proptest! {
        #[test]
        fn squashed_targets_stay_within_limits(a in proptest::collection::vec(-50.0f64..50.0, 11)) {
            let m = default_model();
            for (t, j) in squash(&m, &a).iter().zip(&m.joints) {
                prop_assert!(*t >= j.position_limits[0] && *t <= j.position_limits[1]);
            }
        }
    }

    #[test]
    fn zero_action_is_default_pose() {
        let m = default_model();
        assert_eq!(squash(&m, &vec![0.0; m.n_joints()]), m.default_angles());
    }
}

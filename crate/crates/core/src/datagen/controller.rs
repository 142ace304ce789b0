//! Scripted nominal controllers standing in for a learned locomotion policy.

use crate::kinematics::forward_kinematics;
use crate::model::RobotModel;
use crate::physics::SimState;

/// Nominal controller flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Marching in place with ankle and hip balance feedback.
    BalanceA,
    /// Faster, higher stepping with arm swing and different feedback gains.
    GaitB,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "balance-A" => Some(Self::BalanceA),
            "gait-B" => Some(Self::GaitB),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BalanceA => "balance-A",
            Self::GaitB => "gait-B",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::BalanceA => 0,
            Self::GaitB => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::BalanceA),
            1 => Some(Self::GaitB),
            _ => None,
        }
    }
}

/// Onboard observation `[pitch, pitch rate, q − q_default, qd]`.
pub fn observe(state: &SimState, model: &RobotModel) -> Vec<f64> {
    let mut o = Vec::with_capacity(2 + 2 * model.n_joints());
    o.push(state.base_pose[2]);
    o.push(state.base_vel[2]);
    o.extend(state.q.iter().zip(&model.joints).map(|(q, j)| q - j.default_angle));
    o.extend_from_slice(&state.qd);
    o
}

#[derive(Debug, Clone, Copy)]
struct Gains {
    /// Hip flexion amplitude of a step (rad).
    step: f64,
    /// Step frequency (Hz).
    freq: f64,
    arm_swing: f64,
    /// Ankle target per metre of CoM offset ahead of the stance ankle.
    k_com: f64,
    /// Ankle target per m/s of estimated CoM velocity.
    k_com_rate: f64,
    k_pitch: f64,
    k_pitch_rate: f64,
    /// Extra knee bend of the stance posture.
    crouch: f64,
}

fn gains(v: Variant) -> Gains {
    match v {
        Variant::BalanceA => Gains {
            step: 0.4,
            freq: 1.0,
            arm_swing: 0.0,
            k_com: 12.0,
            k_com_rate: 0.8,
            k_pitch: 2.0,
            k_pitch_rate: 0.2,
            crouch: 0.0,
        },
        Variant::GaitB => Gains {
            step: 0.4,
            freq: 1.2,
            arm_swing: 0.35,
            k_com: 12.0,
            k_com_rate: 0.8,
            k_pitch: 2.0,
            k_pitch_rate: 0.2,
            crouch: 0.1,
        },
    }
}

struct Joints {
    shoulder: [usize; 2],
    hip: [usize; 2],
    knee: [usize; 2],
    ankle: [usize; 2],
}

/// Balance/stepping controller producing PD joint targets from onboard
/// observations only.
pub struct NominalController {
    pub variant: Variant,
    gains: Gains,
    model: RobotModel,
    idx: Joints,
    /// CoM offset ahead of the ankles in the default posture.
    com_ref: f64,
    /// Sole angle in the default posture.
    foot_angle: f64,
}

/// Fraction of the gait clock amplitude below which both feet support.
const DOUBLE_SUPPORT: f64 = 0.2;

fn m_default(model: &RobotModel) -> f64 {
    let j = |n: &str| model.joints[model.joint_index(n).unwrap()].default_angle;
    j("hip_l") + j("knee_l") + j("ankle_l")
}

impl NominalController {
    /// `model` is the controller's belief about the robot; it is never
    /// updated when the simulated plant is perturbed.
    pub fn new(variant: Variant, model: &RobotModel) -> Self {
        let j = |n: &str| model.joint_index(n).expect("default joint names");
        let idx = Joints {
            shoulder: [j("shoulder_l"), j("shoulder_r")],
            hip: [j("hip_l"), j("hip_r")],
            knee: [j("knee_l"), j("knee_r")],
            ankle: [j("ankle_l"), j("ankle_r")],
        };
        let mut c = Self {
            variant,
            gains: gains(variant),
            model: model.clone(),
            idx,
            com_ref: 0.0,
            foot_angle: 0.0,
        };
        let (e, _) = c.com_offset(&c.posture(0.0), 0.0, [true, true]);
        c.com_ref = e;
        let d = m_default(model);
        c.foot_angle = d;
        c
    }

    /// Gait phase (rad) at time `t`.
    pub fn phase_at(&self, t: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.gains.freq * t
    }

    /// Swing amount of each leg in [0, 1]; both legs support near the
    /// zero crossings of the gait clock.
    fn lift(&self, phase: f64) -> [f64; 2] {
        let s = phase.sin();
        let l = |v: f64| ((v - DOUBLE_SUPPORT) / (1.0 - DOUBLE_SUPPORT)).max(0.0);
        [l(s), l(-s)]
    }

    fn posture(&self, phase: f64) -> Vec<f64> {
        let g = self.gains;
        let mut q = self.model.default_angles();
        let lift = self.lift(phase);
        for side in 0..2 {
            let a = g.step * lift[side];
            q[self.idx.hip[side]] += -a - 0.5 * g.crouch;
            q[self.idx.knee[side]] += 2.0 * a + g.crouch;
            q[self.idx.ankle[side]] += -a - 0.5 * g.crouch;
        }
        let s = phase.sin();
        q[self.idx.shoulder[0]] += g.arm_swing * s;
        q[self.idx.shoulder[1]] -= g.arm_swing * s;
        q
    }

    /// Horizontal CoM offset ahead of the supporting ankle(s) and the CoM
    /// height above them, in the gravity-aligned frame.
    fn com_offset(&self, q: &[f64], pitch: f64, stance: [bool; 2]) -> (f64, f64) {
        let kin = forward_kinematics(&self.model, [0.0, 0.0, pitch], q);
        let ankles: Vec<_> = (0..2).filter(|s| stance[*s]).map(|s| kin.joints[self.idx.ankle[s]]).collect();
        let n = ankles.len() as f64;
        let sx = ankles.iter().map(|a| a[0]).sum::<f64>() / n;
        let sz = ankles.iter().map(|a| a[1]).sum::<f64>() / n;
        (kin.body_com[0] - sx, kin.body_com[1] - sz)
    }

    /// PD targets for observation `obs` at gait phase `phase`.
    pub fn targets(&self, obs: &[f64], phase: f64) -> Vec<f64> {
        let g = self.gains;
        let nj = self.model.n_joints();
        let pitch = obs[0];
        let rate = obs[1];
        let q_sensed: Vec<f64> = (0..nj).map(|j| obs[2 + j] + self.model.joints[j].default_angle).collect();
        let lift = self.lift(phase);
        let stance = [lift[0] == 0.0, lift[1] == 0.0];
        let (e, h) = self.com_offset(&q_sensed, pitch, stance);
        let e = e - self.com_ref;
        let e_rate = h * rate;
        let mut q = self.posture(phase);
        let d_ankle = g.k_com * e + g.k_com_rate * e_rate;
        let d_hip = g.k_pitch * pitch + g.k_pitch_rate * rate;
        for side in 0..2 {
            let (hip, knee, ankle) = (self.idx.hip[side], self.idx.knee[side], self.idx.ankle[side]);
            if stance[side] {
                q[ankle] += d_ankle;
                q[hip] += d_hip;
            } else {
                // Swing leg is referenced to the world: keep the thigh
                // direction and the sole level regardless of torso lean.
                q[hip] -= pitch;
                let foot_world = pitch + q_sensed[hip] + q_sensed[knee] + q_sensed[ankle];
                let foot_nominal = self.foot_angle;
                q[ankle] = q_sensed[ankle] - (foot_world - foot_nominal);
            }
        }
        for (t, j) in q.iter_mut().zip(&self.model.joints) {
            *t = t.clamp(j.position_limits[0], j.position_limits[1]);
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_model;

    #[test]
    fn upright_at_rest_targets_default_pose() {
        let m = default_model();
        for v in [Variant::BalanceA, Variant::GaitB] {
            let c = NominalController::new(v, &m);
            let mut s = SimState::standing(&m);
            s.q = c.posture(0.0);
            let t = c.targets(&observe(&s, &m), 0.0);
            for (a, b) in t.iter().zip(&s.q) {
                assert!((a - b).abs() < 1e-12);
            }
            if v == Variant::BalanceA {
                for (a, b) in t.iter().zip(m.default_angles()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_com_raises_ankle_targets() {
        let m = default_model();
        let c = NominalController::new(Variant::BalanceA, &m);
        let s = SimState::standing(&m);
        let mut obs = observe(&s, &m);
        // Leaning the whole body forward about the ankles moves the CoM ahead.
        obs[0] = 0.07;
        let a = m.joint_index("ankle_l").unwrap();
        let t = c.targets(&obs, 0.0);
        assert!(t[a] > m.joints[a].default_angle);
        obs[0] = -0.07;
        let t = c.targets(&obs, 0.0);
        assert!(t[a] < m.joints[a].default_angle);
    }
}

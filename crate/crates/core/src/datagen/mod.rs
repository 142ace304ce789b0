//! Fall-trajectory generation.
//!
//! A scripted nominal controller runs the robot while randomly drawn failure
//! factors push it over. Each stored trajectory is sampled at the control
//! rate and labelled Safe / Ambiguous / Falling relative to its impact frame.

mod controller;
mod failures;
mod io;
mod rollout;

pub use controller::{observe, NominalController, Variant};
pub use failures::{inject_failures, FactorKind, FailureFactor};
pub use io::{read_dataset, write_dataset};
pub use rollout::{add_obs_noise, generate_dataset, rollout_fall, RolloutOutcome};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::physics::{FrameReadout, SimState};

/// Per-frame segment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    Safe = 0,
    Ambiguous = 1,
    Falling = 2,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Safe),
            1 => Some(Self::Ambiguous),
            2 => Some(Self::Falling),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub t1: usize,
    pub t2: usize,
    pub labels: Vec<Label>,
}

/// Frames in the falling window before impact for a given offset.
pub fn offset_frames(offset_s: f64, control_dt: f64) -> usize {
    (offset_s / control_dt).round() as usize
}

/// Splits a trajectory of `n_frames` with impact frame `impact` at
/// `t1 = ⌊2T/3⌋` and `t2 = T − offset`.
pub fn segment(impact: usize, n_frames: usize, offset: usize) -> Result<Labels> {
    let t1 = 2 * impact / 3;
    let t2 = impact.checked_sub(offset);
    match t2 {
        Some(t2) if t1 <= t2 && t2 < impact && impact <= n_frames => Ok(Labels {
            t1,
            t2,
            labels: (0..n_frames)
                .map(|t| {
                    if t <= t1 {
                        Label::Safe
                    } else if t <= t2 {
                        Label::Ambiguous
                    } else {
                        Label::Falling
                    }
                })
                .collect(),
        }),
        _ => Err(Error::Precondition(format!(
            "trajectory too short to segment (T = {impact}, offset = {offset})"
        ))),
    }
}

/// Offsets of the blocks inside one stored frame.
///
/// A frame holds the sensed observation, the true simulator state at the
/// start of the frame, and the contact/load readout of the control interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub n_links: usize,
    pub n_joints: usize,
}

impl FrameLayout {
    pub fn new(model: &RobotModel) -> Self {
        Self {
            n_links: model.n_links(),
            n_joints: model.n_joints(),
        }
    }

    /// pitch, pitch rate, joint angles relative to default, joint rates.
    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.n_joints
    }

    /// base pose, base velocity, q, qd, time.
    pub fn state_dim(&self) -> usize {
        7 + 2 * self.n_joints
    }

    /// link force, joint reaction, external joint torque.
    pub fn readout_dim(&self) -> usize {
        self.n_links + 2 * self.n_joints
    }

    pub fn frame_dim(&self) -> usize {
        self.obs_dim() + self.state_dim() + self.readout_dim()
    }

    pub fn encode(&self, obs: &[f64], state: &SimState, readout: &FrameReadout, out: &mut Vec<f32>) {
        out.extend(obs.iter().map(|v| *v as f32));
        out.extend(state.base_pose.iter().map(|v| *v as f32));
        out.extend(state.base_vel.iter().map(|v| *v as f32));
        out.extend(state.q.iter().map(|v| *v as f32));
        out.extend(state.qd.iter().map(|v| *v as f32));
        out.push(state.time as f32);
        out.extend(readout.link_force.iter().map(|v| *v as f32));
        out.extend(readout.joint_reaction.iter().map(|v| *v as f32));
        out.extend(readout.joint_external_torque.iter().map(|v| *v as f32));
    }
}

/// One labelled fall.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub variant: Variant,
    /// Impact frame `T`: first frame with a non-foot ground contact.
    pub impact: usize,
    pub factors: Vec<FailureFactor>,
    pub layout: FrameLayout,
    /// Row-major frames, `frame_dim` values each.
    pub frames: Vec<f32>,
    pub labels: Vec<Label>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len() / self.layout.frame_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame(&self, i: usize) -> &[f32] {
        let d = self.layout.frame_dim();
        &self.frames[i * d..(i + 1) * d]
    }

    pub fn obs(&self, i: usize) -> &[f32] {
        &self.frame(i)[..self.layout.obs_dim()]
    }

    pub fn state(&self, i: usize) -> SimState {
        let l = self.layout;
        let f = &self.frame(i)[l.obs_dim()..];
        let nj = l.n_joints;
        let g = |k: usize| f[k] as f64;
        SimState {
            base_pose: [g(0), g(1), g(2)],
            base_vel: [g(3), g(4), g(5)],
            q: (0..nj).map(|j| g(6 + j)).collect(),
            qd: (0..nj).map(|j| g(6 + nj + j)).collect(),
            time: g(6 + 2 * nj),
        }
    }

    pub fn readout(&self, i: usize) -> FrameReadout {
        let l = self.layout;
        let f = &self.frame(i)[l.obs_dim() + l.state_dim()..];
        let (nl, nj) = (l.n_links, l.n_joints);
        let mut r = FrameReadout::empty(nl, nj);
        for k in 0..nl {
            r.link_force[k] = f[k] as f64;
        }
        for j in 0..nj {
            r.joint_reaction[j] = f[nl + j] as f64;
            r.joint_external_torque[j] = f[nl + nj + j] as f64;
        }
        r
    }

    /// Terrain obstacles present at frame `i`.
    pub fn terrain_at(&self, i: usize, control_dt: f64) -> Vec<crate::physics::TerrainBox> {
        let t = i as f64 * control_dt;
        self.factors
            .iter()
            .filter(|f| f.kind == FactorKind::FootTrip && f.magnitude > 0.0 && f.aux[1] > f.aux[0])
            .filter(|f| f.onset_s <= t)
            .map(|f| crate::physics::TerrainBox {
                x0: f.aux[0],
                x1: f.aux[1],
                height: f.magnitude,
                only_link: Some(f.aux[2] as usize),
            })
            .collect()
    }
}

/// Trajectories with a fixed train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub n_train: usize,
    pub model_hash: [u8; 32],
    pub config_hash: [u8; 32],
}

impl Dataset {
    pub fn train(&self) -> &[Trajectory] {
        &self.trajectories[..self.n_train]
    }

    pub fn val(&self) -> &[Trajectory] {
        &self.trajectories[self.n_train..]
    }
}

/// Number of training trajectories for an 80/20-style split.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

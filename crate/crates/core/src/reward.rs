//! Damage-aware reward.
//!
//! Three impact penalties (link contact, joint load, external torque) plus a
//! motion-regulation term. Every term is a non-negative penalty and the total
//! reward is its negated weighted sum, so the best achievable reward is 0.

use crate::config::RewardConfig;
use crate::model::RobotModel;
use crate::physics::FrameReadout;

/// Per-term values of one reward evaluation.
///
/// `contact`, `joint` and `torque` are the raw penalties divided by their
/// configured scales, so that
/// `total = −(w_c·contact + w_j·joint + w_e·torque) − regulation` holds
/// exactly. The unscaled values are kept alongside.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub contact: f64,
    pub joint: f64,
    pub torque: f64,
    pub regulation: f64,
    pub total: f64,
    pub raw_contact: f64,
    pub raw_joint: f64,
    pub raw_torque: f64,
}

impl RewardBreakdown {
    pub fn add(&mut self, o: &Self) {
        self.contact += o.contact;
        self.joint += o.joint;
        self.torque += o.torque;
        self.regulation += o.regulation;
        self.total += o.total;
        self.raw_contact += o.raw_contact;
        self.raw_joint += o.raw_joint;
        self.raw_torque += o.raw_torque;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            contact: self.contact * s,
            joint: self.joint * s,
            torque: self.torque * s,
            regulation: self.regulation * s,
            total: self.total * s,
            raw_contact: self.raw_contact * s,
            raw_joint: self.raw_joint * s,
            raw_torque: self.raw_torque * s,
        }
    }
}

/// Sensitivity-weighted excess contact force: mean over touching links plus
/// `alpha` times the largest score. A link's own weight is subtracted first.
pub fn contact_penalty(readout: &FrameReadout, model: &RobotModel, alpha: f64, gravity: f64) -> f64 {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut n = 0usize;
    for (k, &f) in readout.link_force.iter().enumerate() {
        if f <= 0.0 {
            continue;
        }
        let s = model.sensitivity_weight(k) * (f - model.link_mass(k) * gravity).max(0.0);
        sum += s;
        max = max.max(s);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64 + alpha * max
    }
}

/// Joint reaction load above each joint's threshold. With `raw` the absolute
/// difference is used instead of its positive part.
pub fn joint_penalty(readout: &FrameReadout, model: &RobotModel, raw: bool) -> f64 {
    readout
        .joint_reaction
        .iter()
        .zip(&model.joints)
        .map(|(&f, j)| {
            let d = f - j.reaction_force_threshold;
            if raw {
                d.abs()
            } else {
                d.max(0.0)
            }
        })
        .sum()
}

/// Squared excess of external torque over the rated torque, summed over joints.
pub fn torque_penalty(readout: &FrameReadout, model: &RobotModel) -> f64 {
    readout
        .joint_external_torque
        .iter()
        .zip(&model.joints)
        .map(|(&t, j)| {
            let e = (t.abs() / j.torque_rated - 1.0).max(0.0);
            e * e
        })
        .sum()
}

/// Quantities the regulation term needs from the last two control steps.
#[derive(Debug, Clone, Copy)]
pub struct RegulationInput<'a> {
    pub q: &'a [f64],
    pub qd: &'a [f64],
    pub prev_qd: &'a [f64],
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    /// Control period (s).
    pub dt: f64,
}

/// Zero while a joint is at least `margin` away from both stops, then grows
/// quadratically, reaching 1 at the stop.
pub fn limit_proximity(q: f64, limits: [f64; 2], margin: f64) -> f64 {
    let d = (q - limits[0]).min(limits[1] - q);
    let e = ((margin - d) / margin).max(0.0);
    e * e
}

pub fn regulation_penalty(input: &RegulationInput, model: &RobotModel, cfg: &RewardConfig) -> f64 {
    let prox: f64 = input
        .q
        .iter()
        .zip(&model.joints)
        .map(|(&q, j)| limit_proximity(q, j.position_limits, cfg.limit_margin))
        .sum();
    let vel: f64 = input.qd.iter().map(|v| v * v).sum();
    let acc: f64 = input
        .qd
        .iter()
        .zip(input.prev_qd)
        .map(|(a, b)| {
            let x = (a - b) / input.dt;
            x * x
        })
        .sum();
    let rate: f64 = input
        .action
        .iter()
        .zip(input.prev_action)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    cfg.w_qpos * prox + cfg.w_qvel * vel + cfg.w_qacc * acc + cfg.w_arate * rate
}

pub fn total_reward(
    readout: &FrameReadout,
    reg: &RegulationInput,
    cfg: &RewardConfig,
    model: &RobotModel,
    gravity: f64,
) -> RewardBreakdown {
    let raw_contact = contact_penalty(readout, model, cfg.alpha, gravity);
    let raw_joint = joint_penalty(readout, model, cfg.joint_raw);
    let raw_torque = torque_penalty(readout, model);
    let contact = raw_contact / cfg.contact_scale;
    let joint = raw_joint / cfg.joint_scale;
    let torque = raw_torque / cfg.torque_scale;
    let regulation = regulation_penalty(reg, model, cfg);
    let total = -(cfg.w_c * contact + cfg.w_j * joint + cfg.w_e * torque) - regulation;
    debug_assert!(total <= 0.0);
    RewardBreakdown {
        contact,
        joint,
        torque,
        regulation,
        total,
        raw_contact,
        raw_joint,
        raw_torque,
    }
}

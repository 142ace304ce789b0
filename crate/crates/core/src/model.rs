//! Planar humanoid morphology: links, joints, sensitivity classes and limits.
//!
//! Every link has its own frame. The base link (index 0) is free floating in
//! the sagittal x–z plane; every other link hangs off exactly one revolute
//! joint. A joint angle is the pitch of the child frame relative to the parent
//! frame, positive pitch tilting the local +z axis towards world +x.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::kinematics::{self, Vec2};

/// Damage sensitivity class of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sensitivity {
    High,
    Medium,
    Low,
}

impl Sensitivity {
    /// Contact penalty multiplier for the class.
    pub fn weight(self) -> f64 {
        match self {
            Sensitivity::High => 1000.0,
            Sensitivity::Medium => 1.0,
            Sensitivity::Low => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    pub length: f64,
    /// Rotational inertia about the CoM.
    pub inertia: f64,
    pub collision_radius: f64,
    pub sensitivity: Sensitivity,
    /// CoM position in the link frame.
    pub com: Vec2,
    /// Capsule segment endpoints in the link frame.
    pub capsule: [Vec2; 2],
    pub is_foot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Joint location in the parent frame.
    pub parent_anchor: Vec2,
    /// Joint location in the child frame.
    pub child_anchor: Vec2,
    pub position_limits: [f64; 2],
    pub torque_rated: f64,
    pub reaction_force_threshold: f64,
    pub kp: f64,
    pub kd: f64,
    pub default_angle: f64,
    /// Reflected rotor inertia added to the joint's diagonal mass term.
    pub armature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub base_mass_offset: f64,
    pub base_com_offset: Vec2,
    /// Unordered link pairs connected by a joint, stored as (min, max).
    pub adjacency: BTreeSet<(usize, usize)>,
    /// Link pairs checked for self-collision. Adjacent pairs listed here are
    /// ignored by the contact pipeline.
    pub self_collision_pairs: Vec<(usize, usize)>,
    parent_joint: Vec<Option<usize>>,
    joint_paths: Vec<Vec<usize>>,
}

/// A single invariant violation reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub what: String,
    pub detail: String,
}

impl Violation {
    fn new(what: &str, detail: impl Into<String>) -> Self {
        Self {
            what: what.to_string(),
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.what, self.detail)
    }
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl RobotModel {
    pub fn new(links: Vec<LinkSpec>, joints: Vec<JointSpec>) -> Self {
        let mut model = Self {
            links,
            joints,
            base_mass_offset: 0.0,
            base_com_offset: [0.0, 0.0],
            adjacency: BTreeSet::new(),
            self_collision_pairs: Vec::new(),
            parent_joint: Vec::new(),
            joint_paths: Vec::new(),
        };
        model.rebuild_topology();
        model
    }

    /// Recomputes adjacency, parent joints and root-to-link joint paths from
    /// the joint list. Malformed graphs leave empty paths; `validate` reports
    /// them.
    pub fn rebuild_topology(&mut self) {
        let n = self.links.len();
        self.adjacency = self
            .joints
            .iter()
            .filter(|j| j.parent < n && j.child < n)
            .map(|j| pair(j.parent, j.child))
            .collect();
        self.parent_joint = vec![None; n];
        for (ji, j) in self.joints.iter().enumerate() {
            if j.child < n && self.parent_joint[j.child].is_none() {
                self.parent_joint[j.child] = Some(ji);
            }
        }
        self.joint_paths = vec![Vec::new(); n];
        for link in 0..n {
            let mut path = Vec::new();
            let mut cur = link;
            let mut guard = 0;
            while let Some(ji) = self.parent_joint[cur] {
                path.push(ji);
                cur = self.joints[ji].parent;
                guard += 1;
                if guard > n || cur >= n {
                    path.clear();
                    break;
                }
            }
            path.reverse();
            self.joint_paths[link] = path;
        }
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Generalized coordinate count: base (x, z, pitch) plus one per joint.
    pub fn n_dof(&self) -> usize {
        3 + self.joints.len()
    }

    pub fn parent_joint(&self, link: usize) -> Option<usize> {
        self.parent_joint[link]
    }

    /// Joints from the base to `link`, base side first.
    pub fn joint_path(&self, link: usize) -> &[usize] {
        &self.joint_paths[link]
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency.contains(&pair(a, b))
    }

    /// Link mass including the base mass offset.
    pub fn link_mass(&self, link: usize) -> f64 {
        let m = self.links[link].mass;
        if link == 0 {
            m + self.base_mass_offset
        } else {
            m
        }
    }

    /// Link CoM in the link frame including the base CoM offset.
    pub fn link_com(&self, link: usize) -> Vec2 {
        let c = self.links[link].com;
        if link == 0 {
            [c[0] + self.base_com_offset[0], c[1] + self.base_com_offset[1]]
        } else {
            c
        }
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.n_links()).map(|k| self.link_mass(k)).sum()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn default_angles(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.default_angle).collect()
    }

    pub fn sensitivity_weight(&self, link: usize) -> f64 {
        self.links[link].sensitivity.weight()
    }

    /// Links distal to `joint` (the child link and everything below it).
    pub fn subtree_links(&self, joint: usize) -> Vec<usize> {
        let child = self.joints[joint].child;
        (0..self.n_links())
            .filter(|&k| k == child || self.joint_paths[k].contains(&joint))
            .collect()
    }

    /// Mass carried by `joint` in quiet two-footed stance: half the body
    /// minus the distal part for leg joints, the distal mass otherwise.
    pub fn supported_mass(&self, joint: usize) -> f64 {
        let subtree = self.subtree_links(joint);
        let distal: f64 = subtree.iter().map(|&k| self.link_mass(k)).sum();
        let n_feet = self.links.iter().filter(|l| l.is_foot).count().max(1) as f64;
        if subtree.iter().any(|&k| self.links[k].is_foot) {
            (self.total_mass() / n_feet - distal).max(distal)
        } else {
            distal
        }
    }

    /// Sets every joint's reaction-force threshold to `factor` times its
    /// supported weight.
    pub fn set_reaction_thresholds(&mut self, factor: f64, gravity: f64) {
        for j in 0..self.n_joints() {
            self.joints[j].reaction_force_threshold = factor * gravity * self.supported_mass(j);
        }
    }

    /// Scales every joint's PD gains.
    pub fn scale_gains(&mut self, kp_scale: f64, kd_scale: f64) {
        for j in &mut self.joints {
            j.kp *= kp_scale;
            j.kd *= kd_scale;
        }
    }

    /// Stable digest of every field, used to tie artifacts to the model.
    pub fn digest(&self) -> [u8; 32] {
        crate::hash::sha256(format!("{:?}", (&self.links, &self.joints, self.base_mass_offset, self.base_com_offset, &self.self_collision_pairs)).as_bytes())
    }
}

fn link(
    name: &str,
    mass: f64,
    length: f64,
    radius: f64,
    sensitivity: Sensitivity,
    horizontal: bool,
) -> LinkSpec {
    let half = (length / 2.0 - radius).max(0.0);
    let capsule = if horizontal {
        [[-half, 0.0], [half, 0.0]]
    } else {
        [[0.0, -half], [0.0, half]]
    };
    LinkSpec {
        name: name.to_string(),
        mass,
        length,
        inertia: mass * (length * length + 4.0 * radius * radius) / 12.0,
        collision_radius: radius,
        sensitivity,
        com: [0.0, 0.0],
        capsule,
        is_foot: horizontal,
    }
}

#[allow(clippy::too_many_arguments)]
fn joint(
    name: &str,
    parent: usize,
    child: usize,
    parent_anchor: Vec2,
    child_anchor: Vec2,
    limits: [f64; 2],
    torque_rated: f64,
    kp: f64,
    kd: f64,
    default_angle: f64,
) -> JointSpec {
    JointSpec {
        name: name.to_string(),
        parent,
        child,
        parent_anchor,
        child_anchor,
        position_limits: limits,
        torque_rated,
        reaction_force_threshold: 1.0,
        kp,
        kd,
        default_angle,
        armature: 0.05,
    }
}

pub const GRAVITY: f64 = 9.81;

/// Default reaction threshold multiple of the supported weight.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 8.0;

/// The 12-link, 11-joint planar humanoid (35 kg).
///
/// Link order: torso, head, upper arms, forearms, thighs, shanks, feet, with
/// left before right. Joint `j` drives link `j + 1`.
pub fn default_model() -> RobotModel {
    use Sensitivity::*;
    let links = vec![
        link("torso", 14.0, 0.44, 0.11, Low, false),
        link("head", 3.0, 0.22, 0.09, High, false),
        link("upper_arm_l", 1.3, 0.26, 0.045, Low, false),
        link("upper_arm_r", 1.3, 0.26, 0.045, Low, false),
        link("forearm_l", 1.0, 0.26, 0.04, High, false),
        link("forearm_r", 1.0, 0.26, 0.04, High, false),
        link("thigh_l", 3.6, 0.32, 0.065, Low, false),
        link("thigh_r", 3.6, 0.32, 0.065, Low, false),
        link("shank_l", 2.2, 0.32, 0.05, Medium, false),
        link("shank_r", 2.2, 0.32, 0.05, Medium, false),
        link("foot_l", 0.9, 0.22, 0.03, Low, true),
        link("foot_r", 0.9, 0.22, 0.03, Low, true),
    ];
    let neck = [-0.6, 0.6];
    let shoulder = [-3.0, 0.8];
    let elbow = [-2.3, 0.0];
    let hip = [-2.2, 0.5];
    let knee = [0.0, 2.4];
    let ankle = [-0.9, 0.6];
    let joints = vec![
        joint("neck", 0, 1, [0.0, 0.22], [0.0, -0.11], neck, 12.0, 20.0, 0.5, 0.0),
        joint("shoulder_l", 0, 2, [0.0, 0.17], [0.0, 0.13], shoulder, 25.0, 40.0, 1.0, 0.0),
        joint("shoulder_r", 0, 3, [0.0, 0.17], [0.0, 0.13], shoulder, 25.0, 40.0, 1.0, 0.0),
        joint("elbow_l", 2, 4, [0.0, -0.13], [0.0, 0.13], elbow, 25.0, 30.0, 0.8, -0.4),
        joint("elbow_r", 3, 5, [0.0, -0.13], [0.0, 0.13], elbow, 25.0, 30.0, 0.8, -0.4),
        joint("hip_l", 0, 6, [0.0, -0.22], [0.0, 0.16], hip, 88.0, 150.0, 3.0, -0.2),
        joint("hip_r", 0, 7, [0.0, -0.22], [0.0, 0.16], hip, 88.0, 150.0, 3.0, -0.2),
        joint("knee_l", 6, 8, [0.0, -0.16], [0.0, 0.16], knee, 139.0, 150.0, 3.0, 0.4),
        joint("knee_r", 7, 9, [0.0, -0.16], [0.0, 0.16], knee, 139.0, 150.0, 3.0, 0.4),
        joint("ankle_l", 8, 10, [0.0, -0.16], [-0.03, 0.045], ankle, 50.0, 60.0, 1.5, -0.2),
        joint("ankle_r", 9, 11, [0.0, -0.16], [-0.03, 0.045], ankle, 50.0, 60.0, 1.5, -0.2),
    ];
    let mut model = RobotModel::new(links, joints);
    model.set_reaction_thresholds(DEFAULT_THRESHOLD_FACTOR, GRAVITY);
    let idx = |n: &str| model.link_index(n).expect("default link");
    model.self_collision_pairs = vec![
        (idx("thigh_l"), idx("foot_l")),
        (idx("thigh_r"), idx("foot_r")),
        (idx("head"), idx("forearm_l")),
        (idx("head"), idx("forearm_r")),
    ];
    model
}

/// Base pose that places the default posture upright with the lowest
/// collision point exactly on the ground.
pub fn standing_base_pose(model: &RobotModel) -> [f64; 3] {
    let q = model.default_angles();
    let kin = kinematics::forward_kinematics(model, [0.0, 0.0, 0.0], &q);
    let lowest = kinematics::lowest_point(model, &kin);
    [0.0, -lowest, 0.0]
}

/// Checks every structural and numeric invariant and returns all violations.
pub fn validate(model: &RobotModel) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let n = model.n_links();
    if n == 0 {
        return Err(vec![Violation::new("links", "model has no links")]);
    }
    for l in &model.links {
        for (field, v) in [
            ("mass", l.mass),
            ("length", l.length),
            ("inertia", l.inertia),
            ("collision_radius", l.collision_radius),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                out.push(Violation::new(
                    "link positivity",
                    format!("link `{}` has {field} = {v}", l.name),
                ));
            }
        }
    }
    if model.link_mass(0) <= 0.0 {
        out.push(Violation::new(
            "link positivity",
            "base mass offset makes the base massless",
        ));
    }

    let mut tree_ok = model.joints.len() + 1 == n;
    if !tree_ok {
        out.push(Violation::new(
            "joint graph not a tree",
            format!("{} links need {} joints, found {}", n, n - 1, model.joints.len()),
        ));
    }
    let mut has_parent = vec![false; n];
    for j in &model.joints {
        if j.parent >= n || j.child >= n {
            out.push(Violation::new(
                "joint graph not a tree",
                format!("joint `{}` references a missing link", j.name),
            ));
            tree_ok = false;
            continue;
        }
        if j.child == 0 {
            out.push(Violation::new(
                "joint graph not a tree",
                format!("joint `{}` makes the base a child", j.name),
            ));
            tree_ok = false;
        }
        if has_parent[j.child] {
            out.push(Violation::new(
                "joint graph not a tree",
                format!("link {} has more than one parent joint", model.links[j.child].name),
            ));
            tree_ok = false;
        }
        has_parent[j.child] = true;
    }
    if tree_ok {
        for (k, path) in model.joint_paths.iter().enumerate().skip(1) {
            if path.is_empty() {
                out.push(Violation::new(
                    "joint graph not a tree",
                    format!("link `{}` is not connected to the base", model.links[k].name),
                ));
                tree_ok = false;
            }
        }
        // Parents must precede children so recursive passes run in order.
        for (ji, j) in model.joints.iter().enumerate() {
            if let Some(pj) = model.parent_joint(j.parent) {
                if pj >= ji {
                    out.push(Violation::new(
                        "joint ordering",
                        format!("joint `{}` precedes its parent joint", j.name),
                    ));
                }
            }
        }
    }

    for j in &model.joints {
        let [lo, hi] = j.position_limits;
        if !(lo < hi) {
            out.push(Violation::new(
                "position_limits ordering",
                format!("joint `{}` has limits [{lo}, {hi}]", j.name),
            ));
        } else if !(j.default_angle > lo && j.default_angle < hi) {
            out.push(Violation::new(
                "default angle outside limits",
                format!("joint `{}` default {} not in ({lo}, {hi})", j.name, j.default_angle),
            ));
        }
        if !(j.torque_rated > 0.0) {
            out.push(Violation::new("torque_rated", format!("joint `{}`", j.name)));
        }
        if !(j.reaction_force_threshold > 0.0) {
            out.push(Violation::new(
                "reaction_force_threshold",
                format!("joint `{}`", j.name),
            ));
        }
        if !(j.kp >= 0.0) || !(j.kd >= 0.0) || !(j.armature >= 0.0) {
            out.push(Violation::new("gains", format!("joint `{}` has negative gain", j.name)));
        }
    }

    for &(a, b) in &model.self_collision_pairs {
        if a >= n || b >= n || a == b {
            out.push(Violation::new(
                "self collision pair",
                format!("invalid pair ({a}, {b})"),
            ));
        }
    }

    if tree_ok && out.is_empty() {
        let base = standing_base_pose(model);
        let kin = kinematics::forward_kinematics(model, base, &model.default_angles());
        if kinematics::lowest_point(model, &kin) < -1e-9 {
            out.push(Violation::new("ground penetration", "default pose below ground"));
        }
        if let Some((a, b)) = kinematics::first_self_collision(model, &kin) {
            out.push(Violation::new(
                "self intersection",
                format!("links `{}` and `{}` overlap in the default pose", model.links[a].name, model.links[b].name),
            ));
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_shape() {
        let m = default_model();
        assert_eq!(m.n_links(), 12);
        assert_eq!(m.n_joints(), 11);
        assert!((m.total_mass() - 35.0).abs() < 1e-9);
        let head = m.link_index("head").unwrap();
        assert_eq!(m.sensitivity_weight(head), 1000.0);
        let torso = m.link_index("torso").unwrap();
        let thigh_l = m.link_index("thigh_l").unwrap();
        assert!(m.is_adjacent(torso, head));
        assert!(!m.is_adjacent(head, thigh_l));
        assert!(validate(&m).is_ok(), "{:?}", validate(&m));
    }

    #[test]
    fn sensitivity_mapping_is_exact() {
        assert_eq!(Sensitivity::High.weight(), 1000.0);
        assert_eq!(Sensitivity::Medium.weight(), 1.0);
        assert_eq!(Sensitivity::Low.weight(), 0.5);
        let m = default_model();
        for name in ["head", "forearm_l", "forearm_r"] {
            assert_eq!(m.links[m.link_index(name).unwrap()].sensitivity, Sensitivity::High);
        }
        for name in ["shank_l", "shank_r"] {
            assert_eq!(m.links[m.link_index(name).unwrap()].sensitivity, Sensitivity::Medium);
        }
        for name in ["torso", "thigh_l", "upper_arm_r"] {
            assert_eq!(m.links[m.link_index(name).unwrap()].sensitivity, Sensitivity::Low);
        }
    }

    #[test]
    fn reversed_limits_are_reported() {
        let mut m = default_model();
        m.joints[3].position_limits = [0.5, -0.5];
        let v = validate(&m).unwrap_err();
        assert!(v.iter().any(|v| v.what == "position_limits ordering"));
    }

    #[test]
    fn missing_joint_is_not_a_tree() {
        let mut m = default_model();
        // Drop a joint so there is one link too many.
        m.joints.pop();
        m.rebuild_topology();
        let v = validate(&m).unwrap_err();
        assert!(v.iter().any(|v| v.what == "joint graph not a tree"));
    }

    #[test]
    fn all_violations_are_reported() {
        let mut m = default_model();
        m.joints[0].position_limits = [1.0, -1.0];
        m.joints[1].torque_rated = 0.0;
        m.links[2].mass = -1.0;
        let v = validate(&m).unwrap_err();
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn default_angles_strictly_inside_limits() {
        let m = default_model();
        for j in &m.joints {
            assert!(j.default_angle > j.position_limits[0]);
            assert!(j.default_angle < j.position_limits[1]);
        }
    }

    #[test]
    fn adjacency_is_derived_from_joints() {
        let m = default_model();
        assert_eq!(m.adjacency.len(), m.n_joints());
        for j in &m.joints {
            assert!(m.is_adjacent(j.parent, j.child));
            assert!(m.is_adjacent(j.child, j.parent));
        }
    }

    #[test]
    fn thresholds_follow_supported_weight() {
        let m = default_model();
        let ankle = m.joint_index("ankle_l").unwrap();
        let elbow = m.joint_index("elbow_l").unwrap();
        let expect_ankle = 8.0 * GRAVITY * (17.5 - 0.9);
        assert!((m.joints[ankle].reaction_force_threshold - expect_ankle).abs() < 1e-9);
        assert!((m.joints[elbow].reaction_force_threshold - 8.0 * GRAVITY * 1.0).abs() < 1e-9);
    }
}

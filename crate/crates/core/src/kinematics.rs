//! Planar forward kinematics and the small amount of 2-D geometry the contact
//! pipeline needs.

use crate::model::RobotModel;

pub type Vec2 = [f64; 2];

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Rotates a link-frame vector into the world by pitch `angle`.
#[inline]
pub fn rotate(angle: f64, v: Vec2) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [v[0] * c + v[1] * s, -v[0] * s + v[1] * c]
}

/// Velocity of a point at offset `r` from a center rotating at unit rate
/// about +y.
#[inline]
pub fn perp(r: Vec2) -> Vec2 {
    [r[1], -r[0]]
}

/// World pose of one link frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPose {
    pub origin: Vec2,
    pub angle: f64,
}

impl LinkPose {
    pub fn to_world(&self, local: Vec2) -> Vec2 {
        add(self.origin, rotate(self.angle, local))
    }
}

/// Result of [`forward_kinematics`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub links: Vec<LinkPose>,
    /// World CoM per link.
    pub com: Vec<Vec2>,
    /// World position of each joint axis.
    pub joints: Vec<Vec2>,
    /// Whole-body CoM.
    pub body_com: Vec2,
}

impl Kinematics {
    pub fn capsule(&self, model: &RobotModel, link: usize) -> [Vec2; 2] {
        let [a, b] = model.links[link].capsule;
        [self.links[link].to_world(a), self.links[link].to_world(b)]
    }
}

/// World pose of every link and the whole-body CoM for a base pose
/// `(x, z, pitch)` and joint angles `q`.
pub fn forward_kinematics(model: &RobotModel, base: [f64; 3], q: &[f64]) -> Kinematics {
    let n = model.n_links();
    let mut links = vec![
        LinkPose {
            origin: [0.0, 0.0],
            angle: 0.0
        };
        n
    ];
    let mut joints = vec![[0.0, 0.0]; model.n_joints()];
    links[0] = LinkPose {
        origin: [base[0], base[1]],
        angle: base[2],
    };
    for (ji, j) in model.joints.iter().enumerate() {
        let parent = links[j.parent];
        let axis = parent.to_world(j.parent_anchor);
        let angle = parent.angle + q[ji];
        joints[ji] = axis;
        links[j.child] = LinkPose {
            origin: sub(axis, rotate(angle, j.child_anchor)),
            angle,
        };
    }
    let com: Vec<Vec2> = (0..n).map(|k| links[k].to_world(model.link_com(k))).collect();
    let mut total = 0.0;
    let mut acc = [0.0, 0.0];
    for (k, c) in com.iter().enumerate() {
        let m = model.link_mass(k);
        total += m;
        acc = add(acc, scale(*c, m));
    }
    Kinematics {
        links,
        com,
        joints,
        body_com: scale(acc, 1.0 / total),
    }
}

/// Lowest point of one link's capsule.
pub fn lowest_link_point(model: &RobotModel, kin: &Kinematics, link: usize) -> f64 {
    let [a, b] = kin.capsule(model, link);
    a[1].min(b[1]) - model.links[link].collision_radius
}

/// Lowest point of the capsule geometry.
pub fn lowest_point(model: &RobotModel, kin: &Kinematics) -> f64 {
    (0..model.n_links())
        .map(|k| lowest_link_point(model, kin, k))
        .fold(f64::INFINITY, f64::min)
}

/// Closest points between segments `p0-p1` and `q0-q1`, returned as the
/// segment parameters `(s, t)`.
pub fn segment_closest(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> (f64, f64) {
    let d1 = sub(p1, p0);
    let d2 = sub(q1, q0);
    let r = sub(p0, q0);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    let eps = 1e-12;
    if a <= eps && e <= eps {
        return (0.0, 0.0);
    }
    if a <= eps {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = dot(d1, r);
    if e <= eps {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = dot(d1, d2);
    let denom = a * e - b * b;
    let mut s = if denom > eps {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Parameter of the point on segment `a-b` closest to `p`.
pub fn point_segment_param(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = sub(b, a);
    let len2 = dot(d, d);
    if len2 <= 1e-12 {
        0.0
    } else {
        (dot(sub(p, a), d) / len2).clamp(0.0, 1.0)
    }
}

/// Signed clearance between two capsules (negative when overlapping).
pub fn capsule_clearance(model: &RobotModel, kin: &Kinematics, a: usize, b: usize) -> f64 {
    let [p0, p1] = kin.capsule(model, a);
    let [q0, q1] = kin.capsule(model, b);
    let (s, t) = segment_closest(p0, p1, q0, q1);
    let pa = add(p0, scale(sub(p1, p0), s));
    let pb = add(q0, scale(sub(q1, q0), t));
    norm(sub(pa, pb)) - model.links[a].collision_radius - model.links[b].collision_radius
}

/// First non-adjacent self-collision pair that overlaps, if any.
pub fn first_self_collision(model: &RobotModel, kin: &Kinematics) -> Option<(usize, usize)> {
    model
        .self_collision_pairs
        .iter()
        .copied()
        .filter(|&(a, b)| !model.is_adjacent(a, b))
        .find(|&(a, b)| capsule_clearance(model, kin, a, b) < 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_model, standing_base_pose};

    #[test]
    fn rotation_convention() {
        // Positive pitch tilts local +z towards world +x.
        let v = rotate(std::f64::consts::FRAC_PI_2, [0.0, 1.0]);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn head_is_topmost_when_standing() {
        let m = default_model();
        let kin = forward_kinematics(&m, standing_base_pose(&m), &m.default_angles());
        let head = m.link_index("head").unwrap();
        for k in 0..m.n_links() {
            if k != head {
                assert!(kin.com[head][1] > kin.com[k][1]);
            }
        }
    }

    #[test]
    fn flipped_base_puts_head_below() {
        let m = default_model();
        let kin = forward_kinematics(&m, [0.0, 2.0, std::f64::consts::PI], &m.default_angles());
        let head = m.link_index("head").unwrap();
        assert!(kin.com[head][1] < kin.com[0][1]);
    }

    #[test]
    fn body_com_is_mass_weighted_mean() {
        let m = default_model();
        let q: Vec<f64> = (0..m.n_joints()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let kin = forward_kinematics(&m, [0.3, 1.1, 0.4], &q);
        // Independent summation in a different order.
        let mut num = [0.0f64; 2];
        let mut den = 0.0;
        for k in (0..m.n_links()).rev() {
            let mass = m.link_mass(k);
            let c = kin.links[k].to_world(m.link_com(k));
            num[0] += mass * c[0];
            num[1] += mass * c[1];
            den += mass;
        }
        assert!((kin.body_com[0] - num[0] / den).abs() < 1e-12);
        assert!((kin.body_com[1] - num[1] / den).abs() < 1e-12);
    }

    #[test]
    fn joints_connect_parent_and_child() {
        let m = default_model();
        let q: Vec<f64> = (0..m.n_joints()).map(|i| 0.2 * (i as f64).sin()).collect();
        let kin = forward_kinematics(&m, [0.0, 1.0, -0.3], &q);
        for (ji, j) in m.joints.iter().enumerate() {
            let from_parent = kin.links[j.parent].to_world(j.parent_anchor);
            let from_child = kin.links[j.child].to_world(j.child_anchor);
            assert!(norm(sub(from_parent, from_child)) < 1e-12);
            assert!(norm(sub(from_parent, kin.joints[ji])) < 1e-12);
        }
    }

    #[test]
    fn segment_closest_parallel_and_crossing() {
        let (s, t) = segment_closest([0.0, 0.0], [1.0, 0.0], [0.5, -1.0], [0.5, 1.0]);
        assert!((s - 0.5).abs() < 1e-12 && (t - 0.5).abs() < 1e-12);
        let (s, t) = segment_closest([0.0, 0.0], [1.0, 0.0], [2.0, 1.0], [3.0, 1.0]);
        assert!((s - 1.0).abs() < 1e-12 && t.abs() < 1e-12);
    }
}

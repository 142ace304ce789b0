//! Collision detection against the terrain and between listed link pairs.

use crate::kinematics::{
    add, norm, point_segment_param, scale, segment_closest, sub, Kinematics, Vec2,
};
use crate::model::RobotModel;

use super::{CollisionGeometry, TerrainBox};

/// A penetrating contact found by the narrow phase. The normal points from
/// the other body (or terrain) into `link`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactCandidate {
    pub link: usize,
    pub other: Option<usize>,
    pub point: Vec2,
    pub other_point: Vec2,
    pub normal: Vec2,
    pub depth: f64,
}

/// Circles used to collide a link against the terrain, as (center, radius).
fn link_circles(model: &RobotModel, kin: &Kinematics, geometry: CollisionGeometry, link: usize) -> Vec<(Vec2, f64)> {
    let spec = &model.links[link];
    match geometry {
        CollisionGeometry::Simplified => {
            vec![(kin.com[link], simplified_radius(model, link))]
        }
        CollisionGeometry::Full => {
            let [a, b] = kin.capsule(model, link);
            if norm(sub(a, b)) < 1e-12 {
                vec![(a, spec.collision_radius)]
            } else {
                vec![(a, spec.collision_radius), (b, spec.collision_radius)]
            }
        }
    }
}

/// Radius of the single CoM-centred circle used by the simplified geometry.
pub fn simplified_radius(model: &RobotModel, link: usize) -> f64 {
    let spec = &model.links[link];
    spec.collision_radius.max(0.5 * spec.length)
}

fn circle_vs_ground(center: Vec2, radius: f64) -> Option<(Vec2, Vec2, f64)> {
    let depth = radius - center[1];
    (depth > 0.0).then(|| {
        let n = [0.0, 1.0];
        (sub(center, scale(n, radius)), [center[0], 0.0], depth)
    })
}

/// Returns (body point, terrain point, normal, depth).
fn circle_vs_box(center: Vec2, radius: f64, b: &TerrainBox) -> Option<(Vec2, Vec2, Vec2, f64)> {
    let qx = center[0].clamp(b.x0, b.x1);
    let qz = center[1].clamp(0.0, b.height);
    let d = sub(center, [qx, qz]);
    let dist = norm(d);
    if dist > 1e-12 {
        if dist >= radius {
            return None;
        }
        let n = scale(d, 1.0 / dist);
        return Some((sub(center, scale(n, radius)), [qx, qz], n, radius - dist));
    }
    // Center inside the box: push out through the nearest free face.
    let faces = [
        (b.height - center[1], [0.0, 1.0]),
        (center[0] - b.x0, [-1.0, 0.0]),
        (b.x1 - center[0], [1.0, 0.0]),
    ];
    let (depth, n) = faces
        .iter()
        .copied()
        .fold((f64::INFINITY, [0.0, 1.0]), |acc, f| if f.0 < acc.0 { f } else { acc });
    let surface = add(center, scale(n, depth));
    Some((sub(center, scale(n, radius)), surface, n, depth + radius))
}

/// All penetrating contacts for the current pose. Adjacent link pairs are
/// never reported.
pub fn detect(
    model: &RobotModel,
    kin: &Kinematics,
    geometry: CollisionGeometry,
    terrain: &[TerrainBox],
) -> Vec<ContactCandidate> {
    let mut out = Vec::new();
    for link in 0..model.n_links() {
        for (center, radius) in link_circles(model, kin, geometry, link) {
            if let Some((point, other_point, depth)) = circle_vs_ground(center, radius) {
                out.push(ContactCandidate {
                    link,
                    other: None,
                    point,
                    other_point,
                    normal: [0.0, 1.0],
                    depth,
                });
            }
            for b in terrain.iter().filter(|b| b.touches(link)) {
                if let Some((point, other_point, normal, depth)) = circle_vs_box(center, radius, b) {
                    out.push(ContactCandidate {
                        link,
                        other: None,
                        point,
                        other_point,
                        normal,
                        depth,
                    });
                }
            }
        }
        if geometry == CollisionGeometry::Full {
            // Capsule flanks against box corners.
            let [a, b] = kin.capsule(model, link);
            let r = model.links[link].collision_radius;
            for bx in terrain.iter().filter(|b| b.touches(link)) {
                for corner in [[bx.x0, bx.height], [bx.x1, bx.height]] {
                    let t = point_segment_param(corner, a, b);
                    if t <= 0.0 || t >= 1.0 {
                        continue;
                    }
                    let p = add(a, scale(sub(b, a), t));
                    let d = sub(p, corner);
                    let dist = norm(d);
                    if dist < r && dist > 1e-12 {
                        let n = scale(d, 1.0 / dist);
                        out.push(ContactCandidate {
                            link,
                            other: None,
                            point: sub(p, scale(n, r)),
                            other_point: corner,
                            normal: n,
                            depth: r - dist,
                        });
                    }
                }
            }
        }
    }
    for &(a, b) in &model.self_collision_pairs {
        if model.is_adjacent(a, b) {
            continue;
        }
        if let Some(c) = link_pair(model, kin, geometry, a, b) {
            out.push(c);
        }
    }
    out
}

fn link_pair(
    model: &RobotModel,
    kin: &Kinematics,
    geometry: CollisionGeometry,
    a: usize,
    b: usize,
) -> Option<ContactCandidate> {
    let (pa, pb, ra, rb) = match geometry {
        CollisionGeometry::Simplified => (
            kin.com[a],
            kin.com[b],
            simplified_radius(model, a),
            simplified_radius(model, b),
        ),
        CollisionGeometry::Full => {
            let [p0, p1] = kin.capsule(model, a);
            let [q0, q1] = kin.capsule(model, b);
            let (s, t) = segment_closest(p0, p1, q0, q1);
            (
                add(p0, scale(sub(p1, p0), s)),
                add(q0, scale(sub(q1, q0), t)),
                model.links[a].collision_radius,
                model.links[b].collision_radius,
            )
        }
    };
    let d = sub(pa, pb);
    let dist = norm(d);
    let depth = ra + rb - dist;
    if depth <= 0.0 || dist < 1e-12 {
        return None;
    }
    let n = scale(d, 1.0 / dist);
    Some(ContactCandidate {
        link: a,
        other: Some(b),
        point: sub(pa, scale(n, ra)),
        other_point: add(pb, scale(n, rb)),
        normal: n,
        depth,
    })
}

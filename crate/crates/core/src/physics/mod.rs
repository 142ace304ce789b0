//! Planar articulated rigid-body dynamics with penalty ground contact.
//!
//! The robot is simulated in generalized coordinates `[x, z, pitch, q...]`.
//! Each step assembles the joint-space mass matrix and velocity-product terms,
//! then advances velocities with a semi-implicit Euler update in which the
//! contact spring-damper, viscous friction and joint-stop terms are
//! linearized in the new velocity. Positions advance with the mean of the old
//! and new velocity, which removes the first-order energy error of the plain
//! update under gravity. Unilateral conditions (no pulling normal
//! force, Coulomb cap) are enforced with a short active-set loop. Joint
//! reaction forces come from a Newton–Euler sweep over the solved
//! accelerations, so they are exactly the forces each joint transmits.

mod contact;

pub use contact::{detect as detect_contacts, simplified_radius, ContactCandidate};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, add, dot, perp, scale, sub, Kinematics, Vec2};
use crate::model::RobotModel;

/// Dynamic state of the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// Base frame `(x, z, pitch)`.
    pub base_pose: [f64; 3],
    /// Base frame `(vx, vz, pitch rate)`.
    pub base_vel: [f64; 3],
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub time: f64,
}

impl SimState {
    /// Default posture standing on flat ground at rest.
    pub fn standing(model: &RobotModel) -> Self {
        Self {
            base_pose: crate::model::standing_base_pose(model),
            base_vel: [0.0; 3],
            q: model.default_angles(),
            qd: vec![0.0; model.n_joints()],
            time: 0.0,
        }
    }

    pub fn velocity(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + self.qd.len());
        v.extend_from_slice(&self.base_vel);
        v.extend_from_slice(&self.qd);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.base_pose.iter().all(|v| v.is_finite())
            && self.base_vel.iter().all(|v| v.is_finite())
            && self.q.iter().all(|v| v.is_finite())
            && self.qd.iter().all(|v| v.is_finite())
            && self.time.is_finite()
    }

    pub fn kinematics(&self, model: &RobotModel) -> Kinematics {
        kinematics::forward_kinematics(model, self.base_pose, &self.q)
    }
}

/// Collision shape set used for every link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionGeometry {
    /// One circle per link centred on its CoM.
    Simplified,
    /// One capsule per link.
    Full,
}

/// Rectangular step resting on the ground, spanning `[x0, x1] × [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainBox {
    pub x0: f64,
    pub x1: f64,
    pub height: f64,
    /// Restricts the box to one link. The planar model overlays both legs,
    /// so an obstacle beside one foot only touches that foot.
    pub only_link: Option<usize>,
}

impl TerrainBox {
    pub fn touches(&self, link: usize) -> bool {
        self.only_link.is_none_or(|l| l == link)
    }
}

/// Environment and solver constants for [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldParams {
    pub gravity: f64,
    pub friction: f64,
    pub restitution: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Viscous regularization of sticking friction (N·s/m).
    pub tangential_damping: f64,
    pub limit_stiffness: f64,
    pub limit_damping: f64,
    pub dt: f64,
    pub qd_max: f64,
    /// Motor torque cap as a multiple of each joint's rated torque.
    pub peak_factor: f64,
    pub terrain: Vec<TerrainBox>,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            gravity: crate::model::GRAVITY,
            friction: 0.8,
            restitution: 0.0,
            contact_stiffness: 5.0e4,
            contact_damping: 5.0e2,
            tangential_damping: 2.0e4,
            limit_stiffness: 1.0e3,
            limit_damping: 20.0,
            dt: 1.0 / 200.0,
            qd_max: 30.0,
            peak_factor: 3.0,
            terrain: Vec::new(),
        }
    }
}

/// One resolved contact. For link–link contacts each participating link
/// gets its own event with `other` set.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactEvent {
    pub link: usize,
    pub other: Option<usize>,
    /// Force magnitude (N).
    pub force: f64,
    /// Force vector acting on `link`.
    pub force_vec: Vec2,
    pub normal: Vec2,
    pub point: Vec2,
    pub is_foot: bool,
}

/// Everything the reward and metrics need from one physics step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReadout {
    pub contacts: Vec<ContactEvent>,
    pub joint_reaction: Vec<f64>,
    pub joint_external_torque: Vec<f64>,
    pub motor_torque: Vec<f64>,
    pub ground_reaction_sum: Vec2,
    pub velocity_clamped: bool,
    /// Net force left on the base by the Newton–Euler sweep (≈ 0).
    pub base_residual: f64,
}

impl StepReadout {
    /// Per-link net contact force magnitude over all contacts, and over
    /// terrain contacts only.
    pub fn link_forces(&self, n_links: usize) -> (Vec<f64>, Vec<f64>) {
        let mut all = vec![[0.0; 2]; n_links];
        let mut ground = vec![[0.0; 2]; n_links];
        for c in &self.contacts {
            all[c.link] = add(all[c.link], c.force_vec);
            if c.other.is_none() {
                ground[c.link] = add(ground[c.link], c.force_vec);
            }
        }
        (
            all.iter().map(|f| kinematics::norm(*f)).collect(),
            ground.iter().map(|f| kinematics::norm(*f)).collect(),
        )
    }
}

/// PD law `kp (target − q) − kd qd`, clamped to the motor peak.
pub fn pd_torques(targets: &[f64], state: &SimState, model: &RobotModel, peak_factor: f64) -> Result<Vec<f64>> {
    let nj = model.n_joints();
    if targets.len() != nj {
        return Err(Error::shape("pd_torques targets", nj, targets.len()));
    }
    if state.q.len() != nj || state.qd.len() != nj {
        return Err(Error::shape("pd_torques state", nj, state.q.len()));
    }
    Ok(model
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let tau = j.kp * (targets[i] - state.q[i]) - j.kd * state.qd[i];
            let cap = j.torque_rated * peak_factor;
            tau.clamp(-cap, cap)
        })
        .collect())
}

/// Kinematic and inertial quantities evaluated at one configuration.
struct Dynamics<'a> {
    model: &'a RobotModel,
    kin: Kinematics,
    omega: Vec<f64>,
    /// Velocity-product acceleration of each link CoM.
    avp_com: Vec<Vec2>,
    n: usize,
}

impl<'a> Dynamics<'a> {
    fn new(model: &'a RobotModel, state: &SimState) -> Self {
        let kin = state.kinematics(model);
        let nl = model.n_links();
        let mut omega = vec![0.0; nl];
        omega[0] = state.base_vel[2];
        // Velocity-product acceleration at each link's entry point.
        let mut avp_entry = vec![[0.0; 2]; nl];
        let mut entry = vec![kin.links[0].origin; nl];
        for (ji, j) in model.joints.iter().enumerate() {
            omega[j.child] = omega[j.parent] + state.qd[ji];
            let w = omega[j.parent];
            let axis = kin.joints[ji];
            avp_entry[j.child] = sub(avp_entry[j.parent], scale(sub(axis, entry[j.parent]), w * w));
            entry[j.child] = axis;
        }
        let avp_com = (0..nl)
            .map(|k| sub(avp_entry[k], scale(sub(kin.com[k], entry[k]), omega[k] * omega[k])))
            .collect();
        Self {
            model,
            kin,
            omega,
            avp_com,
            n: model.n_dof(),
        }
    }

    /// Nonzero columns of the linear Jacobian of world point `p` on `link`.
    fn point_columns(&self, link: usize, p: Vec2) -> impl Iterator<Item = (usize, Vec2)> + '_ {
        let base = self.kin.links[0].origin;
        let head = [(0usize, [1.0, 0.0]), (1, [0.0, 1.0]), (2, perp(sub(p, base)))];
        head.into_iter().chain(
            self.model
                .joint_path(link)
                .iter()
                .map(move |&j| (3 + j, perp(sub(p, self.kin.joints[j])))),
        )
    }

    /// Dense row `dir · J(p)` for a point on `link`.
    fn point_row(&self, link: usize, p: Vec2, dir: Vec2, row: &mut [f64]) {
        for (c, jv) in self.point_columns(link, p) {
            row[c] += dot(dir, jv);
        }
    }

    fn mass_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut cols: Vec<(usize, Vec2, f64)> = Vec::with_capacity(n);
        for k in 0..self.model.n_links() {
            let mass = self.model.link_mass(k);
            let inertia = self.model.links[k].inertia;
            cols.clear();
            cols.extend(
                self.point_columns(k, self.kin.com[k])
                    .map(|(c, jv)| (c, jv, if c >= 2 { 1.0 } else { 0.0 })),
            );
            for &(a, ja, wa) in &cols {
                for &(b, jb, wb) in &cols {
                    m[(a, b)] += mass * dot(ja, jb) + inertia * wa * wb;
                }
            }
        }
        for (j, spec) in self.model.joints.iter().enumerate() {
            m[(3 + j, 3 + j)] += spec.armature;
        }
        m
    }

    /// Generalized gravity minus velocity-product forces.
    fn bias(&self, gravity: f64) -> Vec<f64> {
        let mut f = vec![0.0; self.n];
        for k in 0..self.model.n_links() {
            let mass = self.model.link_mass(k);
            let load = scale(sub([0.0, -gravity], self.avp_com[k]), mass);
            for (c, jv) in self.point_columns(k, self.kin.com[k]) {
                f[c] += dot(jv, load);
            }
        }
        f
    }

    /// Linear CoM acceleration of `link` for generalized acceleration `qdd`.
    fn com_accel(&self, link: usize, qdd: &[f64]) -> Vec2 {
        let mut a = self.avp_com[link];
        for (c, jv) in self.point_columns(link, self.kin.com[link]) {
            a = add(a, scale(jv, qdd[c]));
        }
        a
    }
}

struct ContactRow {
    cand: ContactCandidate,
    tangent: Vec2,
    n_row: Vec<f64>,
    t_row: Vec<f64>,
    damping: f64,
    /// Normal approach rate at the start of the step.
    vn0: f64,
    on: bool,
    /// Sliding friction force along `tangent`, `None` while sticking.
    slide: Option<f64>,
}

struct LimitRow {
    joint: usize,
    /// +1 for the lower stop, −1 for the upper stop.
    sign: f64,
    depth: f64,
    rate0: f64,
    on: bool,
}

const ACTIVE_SET_ITERS: usize = 12;

/// Advances the simulation by `world.dt`.
///
/// `motor` holds commanded joint torques; they are clamped to
/// `± torque_rated × peak_factor` before use.
pub fn step(
    state: &SimState,
    motor: &[f64],
    model: &RobotModel,
    geometry: CollisionGeometry,
    world: &WorldParams,
) -> Result<(SimState, StepReadout)> {
    let nj = model.n_joints();
    let nl = model.n_links();
    if motor.len() != nj {
        return Err(Error::shape("step motor torques", nj, motor.len()));
    }
    if state.q.len() != nj || state.qd.len() != nj {
        return Err(Error::shape("step state", nj, state.q.len()));
    }
    let diverged = || Error::Diverged {
        time: state.time,
        last_good: Box::new(state.clone()),
    };
    if !state.is_finite() {
        return Err(diverged());
    }
    let dt = world.dt;
    // Positions advance with the mean of old and new velocity; contact and
    // limit springs are linearized consistently with that update.
    let h = 0.5 * dt;
    let dynamics = Dynamics::new(model, state);
    let n = dynamics.n;
    let v = DVector::from_vec(state.velocity());
    let mass = dynamics.mass_matrix();
    let mut force = dynamics.bias(world.gravity);
    let motor: Vec<f64> = motor
        .iter()
        .zip(&model.joints)
        .map(|(&t, j)| {
            let cap = j.torque_rated * world.peak_factor;
            t.clamp(-cap, cap)
        })
        .collect();
    for j in 0..nj {
        force[3 + j] += motor[j];
    }

    let kn = world.contact_stiffness;
    let mut contacts: Vec<ContactRow> = detect_contacts(model, &dynamics.kin, geometry, &world.terrain)
        .into_iter()
        .map(|cand| {
            let nrm = cand.normal;
            let tangent = [nrm[1], -nrm[0]];
            let mut n_row = vec![0.0; n];
            let mut t_row = vec![0.0; n];
            dynamics.point_row(cand.link, cand.point, nrm, &mut n_row);
            dynamics.point_row(cand.link, cand.point, tangent, &mut t_row);
            if let Some(other) = cand.other {
                dynamics.point_row(other, cand.other_point, scale(nrm, -1.0), &mut n_row);
                dynamics.point_row(other, cand.other_point, scale(tangent, -1.0), &mut t_row);
            }
            let vn: f64 = n_row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let damping = if vn > 0.0 {
                world.contact_damping * (1.0 - world.restitution)
            } else {
                world.contact_damping
            };
            ContactRow {
                cand,
                tangent,
                n_row,
                t_row,
                damping,
                vn0: vn,
                on: true,
                slide: None,
            }
        })
        .collect();
    let mut limits: Vec<LimitRow> = Vec::new();
    for (j, spec) in model.joints.iter().enumerate() {
        let [lo, hi] = spec.position_limits;
        if state.q[j] < lo {
            limits.push(LimitRow {
                joint: j,
                sign: 1.0,
                depth: lo - state.q[j],
                rate0: state.qd[j],
                on: true,
            });
        } else if state.q[j] > hi {
            limits.push(LimitRow {
                joint: j,
                sign: -1.0,
                depth: state.q[j] - hi,
                rate0: -state.qd[j],
                on: true,
            });
        }
    }

    let mv = &mass * &v;
    let mut vnew = v.clone();
    let mut slide_used: Vec<Option<f64>> = vec![None; contacts.len()];
    let row_dot = |row: &[f64], x: &DVector<f64>| -> f64 { row.iter().zip(x.iter()).map(|(a, b)| a * b).sum() };
    for _ in 0..ACTIVE_SET_ITERS {
        let mut a = mass.clone();
        let mut b = mv.clone();
        for (i, f) in force.iter().enumerate() {
            b[i] += dt * f;
        }
        for (ci, c) in contacts.iter().enumerate() {
            slide_used[ci] = c.slide;
            if !c.on {
                continue;
            }
            add_outer(&mut a, &c.n_row, dt * (c.damping + h * kn));
            axpy(&mut b, &c.n_row, dt * kn * (c.cand.depth - h * c.vn0));
            match c.slide {
                None => add_outer(&mut a, &c.t_row, dt * world.tangential_damping),
                Some(ft) => axpy(&mut b, &c.t_row, dt * ft),
            }
        }
        for l in limits.iter().filter(|l| l.on) {
            let i = 3 + l.joint;
            a[(i, i)] += dt * (world.limit_damping + h * world.limit_stiffness);
            b[i] += dt * world.limit_stiffness * (l.depth - h * l.rate0) * l.sign;
        }
        vnew = match a.cholesky() {
            Some(ch) => ch.solve(&b),
            None => return Err(diverged()),
        };

        let mut changed = false;
        for c in contacts.iter_mut().filter(|c| c.on) {
            let fnorm = normal_force(c, kn, h, &vnew);
            if fnorm < 0.0 {
                c.on = false;
                c.slide = None;
                changed = true;
                continue;
            }
            let vt = row_dot(&c.t_row, &vnew);
            let cap = world.friction * fnorm;
            match c.slide {
                None => {
                    let ft = -world.tangential_damping * vt;
                    if ft.abs() > cap {
                        c.slide = Some(cap * ft.signum());
                        changed = true;
                    }
                }
                Some(ft) => {
                    if ft * vt > 0.0 {
                        // Friction would now drive the motion: back to sticking.
                        c.slide = None;
                        changed = true;
                    } else {
                        c.slide = Some(cap * ft.signum());
                    }
                }
            }
        }
        for l in limits.iter_mut().filter(|l| l.on) {
            let rate = l.sign * vnew[3 + l.joint];
            let tau = limit_torque(l, world, h, rate);
            if tau < 0.0 {
                l.on = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Forces exactly as applied in the final solve.
    let qdd: Vec<f64> = (0..n).map(|i| (vnew[i] - v[i]) / dt).collect();
    let mut events = Vec::new();
    let mut ext_gen = vec![0.0; n];
    let mut link_ext = vec![[0.0; 2]; nl];
    let mut grf = [0.0; 2];
    for (ci, c) in contacts.iter().enumerate() {
        if !c.on {
            continue;
        }
        let fnorm = normal_force(c, kn, h, &vnew).max(0.0);
        let ft = match slide_used[ci] {
            Some(ft) => ft,
            None => -world.tangential_damping * row_dot(&c.t_row, &vnew),
        };
        for i in 0..n {
            ext_gen[i] += c.n_row[i] * fnorm + c.t_row[i] * ft;
        }
        let fv = add(scale(c.cand.normal, fnorm), scale(c.tangent, ft));
        let mag = kinematics::norm(fv);
        if mag <= 0.0 {
            continue;
        }
        link_ext[c.cand.link] = add(link_ext[c.cand.link], fv);
        events.push(ContactEvent {
            link: c.cand.link,
            other: c.cand.other,
            force: mag,
            force_vec: fv,
            normal: c.cand.normal,
            point: c.cand.point,
            is_foot: model.links[c.cand.link].is_foot,
        });
        match c.cand.other {
            None => grf = add(grf, fv),
            Some(o) => {
                link_ext[o] = sub(link_ext[o], fv);
                events.push(ContactEvent {
                    link: o,
                    other: Some(c.cand.link),
                    force: mag,
                    force_vec: scale(fv, -1.0),
                    normal: scale(c.cand.normal, -1.0),
                    point: c.cand.other_point,
                    is_foot: model.links[o].is_foot,
                });
            }
        }
    }
    let mut ext_torque: Vec<f64> = (0..nj).map(|j| ext_gen[3 + j]).collect();
    for l in limits.iter().filter(|l| l.on) {
        let rate = l.sign * vnew[3 + l.joint];
        let tau = limit_torque(l, world, h, rate);
        ext_torque[l.joint] += l.sign * tau;
    }

    // Newton–Euler sweep from the leaves: force each parent applies on its child.
    let mut transmitted = vec![[0.0; 2]; nl];
    for k in (0..nl).rev() {
        let m = model.link_mass(k);
        let a = dynamics.com_accel(k, &qdd);
        let mut f = sub(scale(a, m), add([0.0, -m * world.gravity], link_ext[k]));
        for j in &model.joints {
            if j.parent == k {
                f = add(f, transmitted[j.child]);
            }
        }
        transmitted[k] = f;
    }
    let joint_reaction: Vec<f64> = model
        .joints
        .iter()
        .map(|j| kinematics::norm(transmitted[j.child]))
        .collect();
    let base_residual = kinematics::norm(transmitted[0]);

    let mut clamped = false;
    let mut next = state.clone();
    for i in 0..3 {
        next.base_vel[i] = vnew[i];
    }
    for j in 0..nj {
        let mut w = vnew[3 + j];
        if w.abs() > world.qd_max {
            w = w.clamp(-world.qd_max, world.qd_max);
            clamped = true;
        }
        next.qd[j] = w;
        next.q[j] = state.q[j] + h * (state.qd[j] + w);
    }
    for i in 0..3 {
        next.base_pose[i] = state.base_pose[i] + h * (state.base_vel[i] + next.base_vel[i]);
    }
    next.time = state.time + dt;
    if clamped {
        log::debug!("joint velocity clamp engaged at t = {:.3}", state.time);
    }
    if !next.is_finite() {
        return Err(diverged());
    }
    let _ = &dynamics.omega;
    Ok((
        next,
        StepReadout {
            contacts: events,
            joint_reaction,
            joint_external_torque: ext_torque,
            motor_torque: motor,
            ground_reaction_sum: grf,
            velocity_clamped: clamped,
            base_residual,
        },
    ))
}

fn normal_force(c: &ContactRow, kn: f64, h: f64, v: &DVector<f64>) -> f64 {
    let vn: f64 = c.n_row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    kn * (c.cand.depth - h * c.vn0) - (c.damping + h * kn) * vn
}

fn limit_torque(l: &LimitRow, world: &WorldParams, h: f64, rate: f64) -> f64 {
    world.limit_stiffness * (l.depth - h * l.rate0) - (world.limit_damping + h * world.limit_stiffness) * rate
}

fn add_outer(a: &mut DMatrix<f64>, row: &[f64], s: f64) {
    let n = row.len();
    for i in 0..n {
        let ri = row[i];
        if ri == 0.0 {
            continue;
        }
        for j in 0..n {
            a[(i, j)] += s * ri * row[j];
        }
    }
}

fn axpy(b: &mut DVector<f64>, row: &[f64], s: f64) {
    for (bi, r) in b.iter_mut().zip(row) {
        *bi += s * r;
    }
}

/// Kinetic (including rotor armature) plus gravitational potential energy.
pub fn mechanical_energy(state: &SimState, model: &RobotModel, gravity: f64) -> f64 {
    let dynamics = Dynamics::new(model, state);
    let v = DVector::from_vec(state.velocity());
    let kinetic = 0.5 * v.dot(&(dynamics.mass_matrix() * &v));
    let potential: f64 = (0..model.n_links())
        .map(|k| model.link_mass(k) * gravity * dynamics.kin.com[k][1])
        .sum();
    kinetic + potential
}

/// World pose of every link and the whole-body CoM.
pub fn forward_kinematics(state: &SimState, model: &RobotModel) -> Kinematics {
    state.kinematics(model)
}

/// Whole-body CoM velocity.
pub fn com_velocity(state: &SimState, model: &RobotModel) -> Vec2 {
    let dynamics = Dynamics::new(model, state);
    let v = state.velocity();
    let mut acc = [0.0; 2];
    let mut total = 0.0;
    for k in 0..model.n_links() {
        let m = model.link_mass(k);
        total += m;
        for (c, jv) in dynamics.point_columns(k, dynamics.kin.com[k]) {
            acc = add(acc, scale(jv, m * v[c]));
        }
    }
    scale(acc, 1.0 / total)
}

/// World velocity of a point fixed to `link`.
pub fn point_velocity(state: &SimState, model: &RobotModel, link: usize, p: Vec2) -> Vec2 {
    let dynamics = Dynamics::new(model, state);
    let v = state.velocity();
    dynamics
        .point_columns(link, p)
        .fold([0.0; 2], |acc, (c, jv)| add(acc, scale(jv, v[c])))
}

/// Generalized velocity change produced by a world impulse `impulse`
/// applied at point `p` of `link`.
pub fn apply_point_impulse(state: &mut SimState, model: &RobotModel, link: usize, p: Vec2, impulse: Vec2) -> Result<()> {
    let dynamics = Dynamics::new(model, state);
    let mass = dynamics.mass_matrix();
    let mut gen = DVector::zeros(dynamics.n);
    for (c, jv) in dynamics.point_columns(link, p) {
        gen[c] += dot(jv, impulse);
    }
    let dv = mass
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular mass matrix".into()))?
        .solve(&gen);
    for i in 0..3 {
        state.base_vel[i] += dv[i];
    }
    for j in 0..state.qd.len() {
        state.qd[j] += dv[3 + j];
    }
    Ok(())
}

/// Effective mass seen along `dir` at point `p` of `link`.
pub fn effective_mass(state: &SimState, model: &RobotModel, link: usize, p: Vec2, dir: Vec2) -> Result<f64> {
    let dynamics = Dynamics::new(model, state);
    let mass = dynamics.mass_matrix();
    let mut row = vec![0.0; dynamics.n];
    dynamics.point_row(link, p, dir, &mut row);
    let r = DVector::from_vec(row);
    let minv_r = mass
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular mass matrix".into()))?
        .solve(&r);
    Ok(1.0 / r.dot(&minv_r))
}

/// Holds PD `targets` for `substeps` physics steps. `on_step` sees every
/// intermediate readout; the returned frame aggregates them.
#[allow(clippy::too_many_arguments)]
pub fn advance(
    state: &SimState,
    targets: &[f64],
    model: &RobotModel,
    geometry: CollisionGeometry,
    world: &WorldParams,
    substeps: usize,
    mut on_step: impl FnMut(&SimState, &StepReadout),
) -> Result<(SimState, FrameReadout)> {
    let mut s = state.clone();
    let mut frame = FrameReadout::empty(model.n_links(), model.n_joints());
    for _ in 0..substeps {
        let tau = pd_torques(targets, &s, model, world.peak_factor)?;
        let (next, r) = step(&s, &tau, model, geometry, world)?;
        on_step(&next, &r);
        frame.accumulate(&r);
        s = next;
    }
    Ok((s, frame))
}

/// Control-rate aggregate of several physics steps. Forces and torques keep
/// the per-step maximum so short impact spikes survive decimation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReadout {
    /// Net contact force per link (terrain and non-adjacent links).
    pub link_force: Vec<f64>,
    /// Terrain contact force per link.
    pub link_ground_force: Vec<f64>,
    pub joint_reaction: Vec<f64>,
    /// Signed external torque with the largest magnitude in the frame.
    pub joint_external_torque: Vec<f64>,
    /// Motor torque of the last step in the frame.
    pub motor_torque: Vec<f64>,
    /// Ground reaction with the largest magnitude in the frame.
    pub ground_reaction: Vec2,
}

impl FrameReadout {
    pub fn empty(n_links: usize, n_joints: usize) -> Self {
        Self {
            link_force: vec![0.0; n_links],
            link_ground_force: vec![0.0; n_links],
            joint_reaction: vec![0.0; n_joints],
            joint_external_torque: vec![0.0; n_joints],
            motor_torque: vec![0.0; n_joints],
            ground_reaction: [0.0; 2],
        }
    }

    pub fn from_step(r: &StepReadout, n_links: usize) -> Self {
        let mut f = Self::empty(n_links, r.joint_reaction.len());
        f.accumulate(r);
        f
    }

    pub fn accumulate(&mut self, r: &StepReadout) {
        let (all, ground) = r.link_forces(self.link_force.len());
        for k in 0..all.len() {
            self.link_force[k] = self.link_force[k].max(all[k]);
            self.link_ground_force[k] = self.link_ground_force[k].max(ground[k]);
        }
        for j in 0..r.joint_reaction.len() {
            self.joint_reaction[j] = self.joint_reaction[j].max(r.joint_reaction[j]);
            if r.joint_external_torque[j].abs() > self.joint_external_torque[j].abs() {
                self.joint_external_torque[j] = r.joint_external_torque[j];
            }
        }
        self.motor_torque.clone_from(&r.motor_torque);
        if kinematics::norm(r.ground_reaction_sum) > kinematics::norm(self.ground_reaction) {
            self.ground_reaction = r.ground_reaction_sum;
        }
    }

    pub fn in_contact(&self, link: usize) -> bool {
        self.link_force[link] > 0.0
    }

    pub fn ground_contact(&self, link: usize) -> bool {
        self.link_ground_force[link] > 0.0
    }

    /// True when any non-foot link touches the terrain.
    pub fn non_foot_impact(&self, model: &RobotModel) -> bool {
        (0..self.link_ground_force.len()).any(|k| !model.links[k].is_foot && self.ground_contact(k))
    }
}

//! Damage metrics, baseline controllers, paired evaluation suites, the
//! pitch × pitch-rate sweep and the unseen-controller transfer test.

use rand::Rng as _;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::datagen::{observe, NominalController, Trajectory, Variant};
use crate::error::{Error, Result};
use crate::kinematics::lowest_point;
use crate::model::{RobotModel, Sensitivity};
use crate::physics::{self, CollisionGeometry, SimState, StepReadout};
use crate::reward::{total_reward, RegulationInput, RewardBreakdown};
use crate::rl::{self, ActorCritic, ObsHistory, StartState};
use crate::rng::{self, Rng};

/// Damping-mode gains.
pub const DAMPING_KP: f64 = 1e-5;
pub const DAMPING_KD: f64 = 10.0;
/// Window of the sustained-impulse metric (s).
pub const IMPULSE_WINDOW_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Keep running the nominal controller.
    Nominal,
    /// PD towards the default posture.
    DefaultPose,
    /// Near-zero stiffness, fixed damping, targets frozen at the start.
    Damping,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Self::Nominal, Self::DefaultPose, Self::Damping];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nominal => "nominal",
            Self::DefaultPose => "default_pose",
            Self::Damping => "damping",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Policy(&'a ActorCritic),
    Baseline(Baseline, Variant),
}

impl Controller<'_> {
    pub fn name(&self) -> String {
        match self {
            Self::Policy(_) => "policy".into(),
            Self::Baseline(b, _) => b.name().into(),
        }
    }
}

/// Per-trial damage metrics, all evaluated at the physics rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    /// Largest `|motor + external|` joint torque (N·m).
    pub tau_max: f64,
    pub f_joint_max: f64,
    /// Largest contact force on a non-foot link (N).
    pub f_contact_max: f64,
    /// Largest single-step ground-reaction impulse (N·s).
    pub impulse_j: f64,
    /// Largest ground-reaction impulse over any [`IMPULSE_WINDOW_S`] window.
    pub impulse_100ms: f64,
    pub illegal_contact: bool,
    /// Most joints outside their position limits at any one step.
    pub n_limit_max: usize,
    pub r_torque_max: f64,
    /// Whether any non-foot link touched the ground.
    pub impacted: bool,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 8] =
        ["tau_max", "f_joint_max", "f_contact_max", "impulse_j", "impulse_100ms", "illegal_contact", "n_limit_max", "r_torque_max"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.tau_max,
            self.f_joint_max,
            self.f_contact_max,
            self.impulse_j,
            self.impulse_100ms,
            f64::from(u8::from(self.illegal_contact)),
            self.n_limit_max as f64,
            self.r_torque_max,
        ]
    }
}

/// Accumulates [`MetricsReport`] from physics steps.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    report: MetricsReport,
    dt: f64,
    window: std::collections::VecDeque<[f64; 2]>,
    window_sum: [f64; 2],
    window_len: usize,
}

impl MetricsAccumulator {
    pub fn new(dt: f64) -> Self {
        Self {
            report: MetricsReport::default(),
            dt,
            window: Default::default(),
            window_sum: [0.0; 2],
            window_len: ((IMPULSE_WINDOW_S / dt).round() as usize).max(1),
        }
    }

    pub fn observe(&mut self, model: &RobotModel, state: &SimState, r: &StepReadout) {
        let m = &mut self.report;
        for (j, spec) in model.joints.iter().enumerate() {
            let tau = (r.motor_torque[j] + r.joint_external_torque[j]).abs();
            m.tau_max = m.tau_max.max(tau);
            m.r_torque_max = m.r_torque_max.max(tau / spec.torque_rated);
            m.f_joint_max = m.f_joint_max.max(r.joint_reaction[j]);
        }
        let (all, ground) = r.link_forces(model.n_links());
        for (k, link) in model.links.iter().enumerate() {
            if link.is_foot {
                continue;
            }
            m.f_contact_max = m.f_contact_max.max(all[k]);
            if ground[k] > 0.0 {
                m.impacted = true;
                if link.sensitivity == Sensitivity::High {
                    m.illegal_contact = true;
                }
            }
        }
        let g = r.ground_reaction_sum;
        m.impulse_j = m.impulse_j.max(g[0].hypot(g[1]) * self.dt);
        self.window.push_back(g);
        self.window_sum = [self.window_sum[0] + g[0], self.window_sum[1] + g[1]];
        if self.window.len() > self.window_len {
            let old = self.window.pop_front().expect("non-empty");
            self.window_sum = [self.window_sum[0] - old[0], self.window_sum[1] - old[1]];
        }
        m.impulse_100ms = m.impulse_100ms.max(self.window_sum[0].hypot(self.window_sum[1]) * self.dt);
        let outside = state
            .q
            .iter()
            .zip(&model.joints)
            .filter(|(q, j)| **q < j.position_limits[0] || **q > j.position_limits[1])
            .count();
        m.n_limit_max = m.n_limit_max.max(outside);
    }

    pub fn finish(self) -> MetricsReport {
        self.report
    }
}

enum Runner<'a> {
    Policy {
        ac: &'a ActorCritic,
        hist: ObsHistory,
        last: Vec<f64>,
        steps: usize,
    },
    Nominal(NominalController),
    Fixed(Vec<f64>),
}

/// One trial from `start` for `cfg.eval.horizon_s`. Returns `None` when
/// the simulation diverged.
pub fn run_trial(ctrl: Controller, start: &StartState, cfg: &PipelineConfig, model: &RobotModel, seed: u64) -> Result<Option<(MetricsReport, RewardBreakdown)>> {
    let mut rng = rng::stream(seed, "trial-noise", 0);
    let mut plant = model.clone();
    let mut runner = match ctrl {
        Controller::Policy(ac) => Runner::Policy {
            ac,
            hist: ObsHistory::new(),
            last: model.default_angles(),
            steps: 0,
        },
        Controller::Baseline(Baseline::Nominal, v) => Runner::Nominal(NominalController::new(v, model)),
        Controller::Baseline(Baseline::DefaultPose, _) => Runner::Fixed(model.default_angles()),
        Controller::Baseline(Baseline::Damping, _) => {
            for j in &mut plant.joints {
                j.kp = DAMPING_KP;
                j.kd = DAMPING_KD;
            }
            Runner::Fixed(start.state.q.clone())
        }
    };
    let mut world = cfg.world();
    world.terrain = start.terrain.clone();
    let cdt = cfg.physics.control_dt();
    let n = (cfg.eval.horizon_s / cdt).round() as usize;
    let mut acc = MetricsAccumulator::new(world.dt);
    let mut s = start.state.clone();
    let mut prev_targets = model.default_angles();
    let mut reward = RewardBreakdown::default();
    for _ in 0..n {
        let targets = match &mut runner {
            Runner::Policy { ac, hist, last, steps } => {
                if *steps < cfg.ppo.episode_len {
                    let offsets = rl::target_offsets(model, last);
                    hist.push(rl::sense_frame(&s, model, &offsets, &cfg.ppo.randomization, &mut rng));
                    *last = rl::squash(model, &ac.act_mean(&hist.actor())?);
                    *steps += 1;
                }
                last.clone()
            }
            Runner::Nominal(c) => {
                let mut o = observe(&s, model);
                crate::datagen::add_obs_noise(&mut o, &cfg.ppo.randomization, 1.0, &mut rng);
                c.targets(&o, c.phase_at(s.time))
            }
            Runner::Fixed(t) => t.clone(),
        };
        let step = physics::advance(&s, &targets, &plant, CollisionGeometry::Full, &world, cfg.physics.control_decimation, |st, r| {
            acc.observe(&plant, st, r)
        });
        let (next, readout) = match step {
            Ok(x) => x,
            Err(Error::Diverged { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let reg = RegulationInput {
            q: &next.q,
            qd: &next.qd,
            prev_qd: &s.qd,
            action: &targets,
            prev_action: &prev_targets,
            dt: cdt,
        };
        reward.add(&total_reward(&readout, &reg, &cfg.reward, &plant, world.gravity));
        prev_targets = targets;
        s = next;
    }
    Ok(Some((acc.finish(), reward)))
}

/// Mean and standard deviation of each metric for one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSummary {
    pub name: String,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub mean: [f64; 8],
    pub std: [f64; 8],
    /// Fraction of trials with a non-foot ground contact.
    pub impact_rate: f64,
    pub mean_return: f64,
    pub reports: Vec<Option<MetricsReport>>,
}

impl ControllerSummary {
    pub fn metric(&self, name: &str) -> f64 {
        self.mean[MetricsReport::NAMES.iter().position(|n| *n == name).expect("metric name")]
    }

    pub fn illegal_rate(&self) -> f64 {
        self.metric("illegal_contact")
    }

    pub fn unreliable(&self, max_invalid: f64) -> bool {
        self.n_invalid as f64 > max_invalid * (self.n_valid + self.n_invalid) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub controllers: Vec<ControllerSummary>,
    /// Digest of the shared start set.
    pub init_hash: [u8; 32],
    pub dt: f64,
}

impl SuiteSummary {
    pub fn get(&self, name: &str) -> Option<&ControllerSummary> {
        self.controllers.iter().find(|c| c.name == name)
    }

    /// Relative reduction of `metric` by `a` against `b`, in percent.
    pub fn improvement(&self, a: &str, b: &str, metric: &str) -> Option<f64> {
        let (x, y) = (self.get(a)?.metric(metric), self.get(b)?.metric(metric));
        (y > 0.0).then(|| 100.0 * (y - x) / y)
    }

    pub const HEADER: [&'static str; 21] = [
        "controller",
        "n_valid",
        "n_invalid",
        "impact_rate",
        "mean_return",
        "tau_max_mean",
        "tau_max_std",
        "f_joint_max_mean",
        "f_joint_max_std",
        "f_contact_max_mean",
        "f_contact_max_std",
        "impulse_j_mean",
        "impulse_j_std",
        "impulse_100ms_mean",
        "impulse_100ms_std",
        "illegal_contact_rate",
        "illegal_contact_std",
        "n_limit_max_mean",
        "n_limit_max_std",
        "r_torque_max_mean",
        "r_torque_max_std",
    ];

    pub fn records(&self) -> Vec<Vec<String>> {
        self.controllers
            .iter()
            .map(|c| {
                let mut r = vec![
                    c.name.clone(),
                    c.n_valid.to_string(),
                    c.n_invalid.to_string(),
                    format!("{:.6}", c.impact_rate),
                    format!("{:.6}", c.mean_return),
                ];
                for k in 0..8 {
                    r.push(format!("{:.6}", c.mean[k]));
                    r.push(format!("{:.6}", c.std[k]));
                }
                r
            })
            .collect()
    }
}

fn summarize(name: String, results: Vec<Option<(MetricsReport, RewardBreakdown)>>) -> ControllerSummary {
    let valid: Vec<&(MetricsReport, RewardBreakdown)> = results.iter().flatten().collect();
    let n = valid.len().max(1) as f64;
    let mut mean = [0.0; 8];
    let mut sq = [0.0; 8];
    for (m, _) in &valid {
        for (k, v) in m.values().iter().enumerate() {
            mean[k] += v / n;
        }
    }
    for (m, _) in &valid {
        for (k, v) in m.values().iter().enumerate() {
            sq[k] += (v - mean[k]).powi(2) / n;
        }
    }
    ControllerSummary {
        name,
        n_valid: valid.len(),
        n_invalid: results.len() - valid.len(),
        mean,
        std: sq.map(f64::sqrt),
        impact_rate: valid.iter().filter(|(m, _)| m.impacted).count() as f64 / n,
        mean_return: valid.iter().map(|(_, r)| r.total).sum::<f64>() / n,
        reports: results.iter().map(|r| r.map(|x| x.0)).collect(),
    }
}

pub fn init_set_hash(starts: &[StartState]) -> [u8; 32] {
    crate::hash::sha256(format!("{:?}", starts.iter().map(|s| (&s.state, &s.terrain)).collect::<Vec<_>>()).as_bytes())
}

/// Runs every controller on the same starts.
pub fn evaluate_suite(controllers: &[(String, Controller)], starts: &[StartState], cfg: &PipelineConfig, seed: u64) -> Result<SuiteSummary> {
    if starts.len() < 2 {
        return Err(Error::Precondition("an evaluation suite needs at least two starts".into()));
    }
    let model = cfg.robot_model();
    let mut out = Vec::with_capacity(controllers.len());
    for (name, c) in controllers {
        let results = starts
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_trial(*c, s, cfg, &model, rng::derive_seed(seed, "trial", i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let summary = summarize(name.clone(), results);
        if summary.unreliable(cfg.eval.max_invalid_fraction) {
            log::warn!("{name}: {} of {} trials diverged; suite unreliable", summary.n_invalid, starts.len());
        }
        out.push(summary);
    }
    Ok(SuiteSummary {
        controllers: out,
        init_hash: init_set_hash(starts),
        dt: cfg.physics.dt,
    })
}

/// Evaluation starts: the first predictor-triggered frame of each held-out
/// fall, cycled to `n`, keeping only those whose base speed is within
/// `cfg.eval.max_init_speed`.
pub fn fall_starts(pool: &rl::StartPool, n: usize, cfg: &PipelineConfig) -> Result<Vec<StartState>> {
    let firsts: Vec<&StartState> = pool
        .first_triggers()
        .into_iter()
        .filter(|s| s.state.base_vel[0].hypot(s.state.base_vel[1]) <= cfg.eval.max_init_speed)
        .collect();
    if firsts.is_empty() {
        return Err(Error::Data("no predictor-triggered falls to evaluate from".into()));
    }
    Ok((0..n).map(|i| firsts[i % firsts.len()].clone()).collect())
}

/// Standing posture tilted by `pitch` about its lowest point and rotating
/// at `rate` about it, with small joint jitter.
pub fn tilted_start(model: &RobotModel, pitch: f64, rate: f64, jitter: f64, rng: &mut Rng) -> StartState {
    let mut s = SimState::standing(model);
    for (q, j) in s.q.iter_mut().zip(&model.joints) {
        if jitter > 0.0 {
            *q = (*q + rng.random_range(-jitter..jitter)).clamp(j.position_limits[0], j.position_limits[1]);
        }
    }
    s.base_pose = [0.0, 0.0, pitch];
    let kin = s.kinematics(model);
    let low = lowest_point(model, &kin);
    s.base_pose[1] = 0.002 - low;
    let kin = s.kinematics(model);
    // Pivot: lowest capsule end.
    let pivot = (0..model.n_links())
        .flat_map(|k| kin.capsule(model, k))
        .min_by(|a, b| a[1].total_cmp(&b[1]))
        .expect("links");
    let r = [s.base_pose[0] - pivot[0], s.base_pose[1] - pivot[1]];
    s.base_vel = [rate * r[1], -rate * r[0], rate];
    StartState {
        state: s,
        terrain: Vec::new(),
        source: None,
    }
}

/// One cell of the directional sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub pitch: f64,
    pub rate: f64,
    /// Percentage reduction against the baseline.
    pub contact_improvement: f64,
    pub joint_improvement: f64,
    /// Both controllers produced a non-foot impact in this cell.
    pub both_impacted: bool,
}

pub fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (r[0] + r[1])];
    }
    (0..n).map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64).collect()
}

pub fn directional_sweep(policy: Controller, baseline: Controller, cfg: &PipelineConfig, seed: u64) -> Result<Vec<SweepCell>> {
    let model = cfg.robot_model();
    let e = &cfg.eval;
    let mut cells = Vec::new();
    for (pi, pitch) in linspace(e.sweep_pitch, e.sweep_pitch_steps).into_iter().enumerate() {
        for (ri, rate) in linspace(e.sweep_rate, e.sweep_rate_steps).into_iter().enumerate() {
            let mut rng = rng::stream(seed, "sweep-cell", ((pi as u64) << 16) | ri as u64);
            let starts: Vec<StartState> = (0..e.sweep_per_cell.max(2)).map(|_| tilted_start(&model, pitch, rate, 0.1, &mut rng)).collect();
            let cell_seed = rng::derive_seed(seed, "sweep", ((pi as u64) << 16) | ri as u64);
            let s = evaluate_suite(&[("policy".into(), policy), ("baseline".into(), baseline)], &starts, cfg, cell_seed)?;
            let (p, b) = (&s.controllers[0], &s.controllers[1]);
            let imp = |m: &str| {
                let y = b.metric(m);
                if y > 0.0 {
                    100.0 * (y - p.metric(m)) / y
                } else {
                    0.0
                }
            };
            cells.push(SweepCell {
                pitch,
                rate,
                contact_improvement: imp("f_contact_max"),
                joint_improvement: imp("f_joint_max"),
                both_impacted: p.impact_rate > 0.0 && b.impact_rate > 0.0,
            });
        }
    }
    Ok(cells)
}

/// Share of impacted sweep cells where the policy lowered peak contact force.
pub fn sweep_win_rate(cells: &[SweepCell]) -> f64 {
    let hit: Vec<_> = cells.iter().filter(|c| c.both_impacted).collect();
    if hit.is_empty() {
        return 0.0;
    }
    hit.iter().filter(|c| c.contact_improvement > 0.0).count() as f64 / hit.len() as f64
}

/// Per-frame reward breakdown of a recorded trajectory. The dataset does not
/// keep commanded targets, so the action-rate term uses joint positions.
pub fn score_trajectory(t: &Trajectory, cfg: &PipelineConfig, model: &RobotModel) -> Vec<RewardBreakdown> {
    let cdt = cfg.physics.control_dt();
    (0..t.len())
        .map(|i| {
            let s = t.state(i);
            let prev = t.state(i.saturating_sub(1));
            let reg = RegulationInput {
                q: &s.q,
                qd: &s.qd,
                prev_qd: &prev.qd,
                action: &s.q,
                prev_action: &prev.q,
                dt: cdt,
            };
            total_reward(&t.readout(i), &reg, &cfg.reward, model, cfg.physics.gravity)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn no_contact_trial_reports_no_impact_forces() {
        let mut cfg = PipelineConfig::default();
        cfg.eval.horizon_s = 0.3;
        cfg.ppo.randomization = crate::config::Randomization::fixed(&cfg.physics);
        let m = cfg.robot_model();
        let mut s = SimState::standing(&m);
        s.base_pose[1] += 5.0;
        let start = StartState {
            state: s,
            terrain: vec![],
            source: None,
        };
        let (r, _) = run_trial(Controller::Baseline(Baseline::DefaultPose, Variant::BalanceA), &start, &cfg, &m, 0)
            .unwrap()
            .unwrap();
        assert_eq!(r.f_contact_max, 0.0);
        assert_eq!(r.impulse_j, 0.0);
        assert!(!r.illegal_contact && !r.impacted);
    }

    #[test]
    fn sweep_grid_defaults() {
        let e = crate::config::EvalConfig::default();
        let p = linspace(e.sweep_pitch, e.sweep_pitch_steps);
        let r = linspace(e.sweep_rate, e.sweep_rate_steps);
        assert_eq!((p.len(), r.len()), (9, 7));
        assert!((p[0] + std::f64::consts::FRAC_PI_2).abs() < 1e-12 && (r[6] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_start_rests_on_the_ground() {
        let m = crate::model::default_model();
        let s = tilted_start(&m, 0.7, -2.0, 0.1, &mut Rng::seed_from_u64(0));
        let low = lowest_point(&m, &s.state.kinematics(&m));
        assert!((low - 0.002).abs() < 1e-9);
        assert_eq!(s.state.base_vel[2], -2.0);
    }

    #[test]
    fn damping_commands_pure_damping_torque() {
        let m = crate::model::default_model();
        let mut plant = m.clone();
        for j in &mut plant.joints {
            j.kp = DAMPING_KP;
            j.kd = DAMPING_KD;
        }
        let mut s = SimState::standing(&m);
        s.qd = (0..m.n_joints()).map(|i| 0.1 * i as f64 - 0.4).collect();
        let targets: Vec<f64> = s.q.iter().map(|q| q + 0.2).collect();
        let tau = physics::pd_torques(&targets, &s, &plant, 3.0).unwrap();
        for (t, qd) in tau.iter().zip(&s.qd) {
            assert!((t - (-DAMPING_KD * qd + DAMPING_KP * 0.2)).abs() < 1e-12);
        }
    }
}

//! Rollouts under failure factors and dataset assembly.

use rand::Rng as _;
use rayon::prelude::*;

use crate::config::{PipelineConfig, Randomization};
use crate::error::{Error, Result};
use crate::kinematics::{lowest_link_point, Kinematics};
use crate::model::RobotModel;
use crate::physics::{self, CollisionGeometry, SimState, TerrainBox};
use crate::rng::{self, Rng};

use super::failures::SLIP_WINDOW_S;
use super::{
    inject_failures, observe, offset_frames, segment, train_count, Dataset, FactorKind, FailureFactor, FrameLayout,
    NominalController, Trajectory, Variant,
};

#[derive(Debug, Clone, PartialEq)]
pub enum RolloutOutcome {
    Fell(Box<Trajectory>),
    NoFall,
}

/// Adds the per-frame uniform observation noise, scaled by `scale`.
pub fn add_obs_noise(obs: &mut [f64], noise: &Randomization, scale: f64, rng: &mut Rng) {
    let nj = (obs.len() - 2) / 2;
    let mut jitter = |v: &mut f64, a: f64| {
        if a > 0.0 && scale > 0.0 {
            *v += rng.random_range(-a * scale..a * scale);
        }
    };
    jitter(&mut obs[0], noise.noise_orientation);
    jitter(&mut obs[1], noise.noise_ang_vel);
    for v in &mut obs[2..2 + nj] {
        jitter(v, noise.noise_joint_pos);
    }
    for v in &mut obs[2 + nj..] {
        jitter(v, noise.noise_joint_vel);
    }
}

/// Feet as `(link, clearance)` sorted lowest first.
fn feet_by_height(model: &RobotModel, kin: &Kinematics) -> Vec<(usize, f64)> {
    let mut feet: Vec<(usize, f64)> = (0..model.n_links())
        .filter(|l| model.links[*l].is_foot)
        .map(|l| (l, lowest_link_point(model, kin, l)))
        .collect();
    feet.sort_by(|a, b| a.1.total_cmp(&b.1));
    feet
}

/// Seconds a trip obstacle waits for the swing foot to clear it before it
/// is placed ahead of the toe instead.
const TRIP_WAIT_S: f64 = 1.0;
const TRIP_LENGTH: f64 = 0.3;

/// Runs the nominal controller under `factors` until a non-foot link hits
/// the ground (plus the post-impact tail) or the time limit passes.
pub fn rollout_fall(
    cfg: &PipelineConfig,
    model: &RobotModel,
    variant: Variant,
    factors: &[FailureFactor],
    seed: u64,
) -> Result<RolloutOutcome> {
    let dg = &cfg.datagen;
    let noise = &cfg.ppo.randomization;
    let mut world = cfg.world();
    let base_friction = world.friction;
    let decimation = cfg.physics.control_decimation;
    let cdt = cfg.physics.control_dt();
    let max_frames = (dg.max_len_s / cdt).round() as usize;
    let tail = (dg.tail_s / cdt).round() as usize;
    let controller = NominalController::new(variant, model);
    let layout = FrameLayout::new(model);
    let mut rng = rng::stream(seed, "rollout", 0);

    let mut plant = model.clone();
    let mut factors = factors.to_vec();
    let mut fired = vec![false; factors.len()];
    let mut s = SimState::standing(model);
    let mut sensed: Vec<Vec<f64>> = Vec::new();
    let mut frames = Vec::with_capacity(max_frames * layout.frame_dim());
    let mut impact = None;
    let mut noise_scale = 1.0;
    let mut delay = 0usize;
    let mut slip_until = f64::NEG_INFINITY;

    for i in 0..max_frames {
        let t = i as f64 * cdt;
        for (k, f) in factors.iter_mut().enumerate() {
            if fired[k] || t + 1e-9 < f.onset_s {
                continue;
            }
            match f.kind {
                FactorKind::SensorNoise => noise_scale = f.magnitude,
                FactorKind::ExternalForce => s.base_vel[0] += f.magnitude,
                FactorKind::FootSlip => {
                    let kin = s.kinematics(&plant);
                    let (foot, _) = feet_by_height(&plant, &kin)[0];
                    let p = kin.com[foot];
                    let dir = [f.aux[0], 0.0];
                    let meff = physics::effective_mass(&s, &plant, foot, p, dir)?;
                    physics::apply_point_impulse(&mut s, &plant, foot, p, [meff * f.magnitude * f.aux[0], 0.0])?;
                    world.friction = f.aux[1];
                    slip_until = t + SLIP_WINDOW_S;
                }
                FactorKind::FootTrip => {
                    if f.magnitude <= 0.0 {
                        fired[k] = true;
                        continue;
                    }
                    let kin = s.kinematics(&plant);
                    let (foot, clearance) = *feet_by_height(&plant, &kin).last().unwrap();
                    let x = kin.com[foot][0];
                    let waited = t - f.onset_s >= TRIP_WAIT_S;
                    if clearance > f.magnitude || waited {
                        let [a, b] = kin.capsule(&plant, foot);
                        let x0 = if waited { a[0].max(b[0]) + 0.01 } else { x };
                        f.aux = [x0, x0 + TRIP_LENGTH, foot as f64];
                        f.onset_s = t;
                        world.terrain.push(TerrainBox {
                            x0,
                            x1: x0 + TRIP_LENGTH,
                            height: f.magnitude,
                            only_link: Some(foot),
                        });
                    } else {
                        continue;
                    }
                }
                FactorKind::SystemDelay => delay = offset_frames(f.magnitude, cdt),
                FactorKind::DynamicMismatch => {
                    plant.scale_gains(f.magnitude, f.aux[0]);
                    plant.base_com_offset[0] += f.aux[1];
                }
            }
            fired[k] = true;
        }
        if t >= slip_until {
            world.friction = base_friction;
        }

        let mut obs = observe(&s, model);
        add_obs_noise(&mut obs, noise, noise_scale, &mut rng);
        sensed.push(obs);
        let seen = &sensed[i.saturating_sub(delay)];
        let targets = controller.targets(seen, controller.phase_at(t));
        let (next, readout) = physics::advance(&s, &targets, &plant, CollisionGeometry::Full, &world, decimation, |_, _| {})?;
        layout.encode(&sensed[i], &s, &readout, &mut frames);
        if impact.is_none() && readout.non_foot_impact(&plant) {
            impact = Some(i);
        }
        s = next;
        if let Some(t_imp) = impact {
            if i + 1 >= t_imp + tail {
                break;
            }
        }
    }

    let Some(t_imp) = impact else {
        return Ok(RolloutOutcome::NoFall);
    };
    let n = frames.len() / layout.frame_dim();
    let labels = segment(t_imp, n, offset_frames(dg.t2_offset_s, cdt))?;
    // Only factors that took effect are recorded.
    let factors = factors.into_iter().zip(fired).filter(|(_, f)| *f).map(|(x, _)| x).collect();
    Ok(RolloutOutcome::Fell(Box::new(Trajectory {
        seed,
        variant,
        impact: t_imp,
        factors,
        layout,
        frames,
        labels: labels.labels,
    })))
}

fn combo_name(factors: &[FailureFactor]) -> String {
    factors.iter().map(|f| f.kind.name()).collect::<Vec<_>>().join("+")
}

/// One stored trajectory: fresh factors per attempt until a usable fall.
fn generate_one(cfg: &PipelineConfig, model: &RobotModel, variant: Variant, index: usize) -> Result<(Trajectory, usize)> {
    let mut never_fell = Vec::new();
    for attempt in 0..cfg.datagen.retry_budget {
        let seed = rng::derive_seed(cfg.seed, "datagen", ((index as u64) << 16) | attempt as u64);
        let mut rng = rng::stream(seed, "factors", 0);
        let factors = inject_failures(&cfg.datagen, &mut rng);
        match rollout_fall(cfg, model, variant, &factors, seed) {
            Ok(RolloutOutcome::Fell(t)) => return Ok((*t, attempt)),
            Ok(RolloutOutcome::NoFall) => never_fell.push(combo_name(&factors)),
            Err(Error::Diverged { time, .. }) => {
                log::warn!("trajectory {index}: rollout seed {seed:#x} diverged at {time:.3} s, discarded");
            }
            Err(Error::Precondition(msg)) => log::debug!("trajectory {index}: seed {seed:#x}: {msg}"),
            Err(e) => return Err(e),
        }
    }
    never_fell.sort();
    never_fell.dedup();
    Err(Error::Data(format!(
        "trajectory {index}: retry budget of {} exhausted; combinations that never fell: [{}]",
        cfg.datagen.retry_budget,
        never_fell.join(", ")
    )))
}

/// Generates `cfg.datagen.n_trajectories` labelled falls in seed order.
pub fn generate_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let n = cfg.datagen.n_trajectories;
    if n < 2 {
        return Err(Error::Config("datagen.n_trajectories: must be >= 2".into()));
    }
    let model = cfg.robot_model();
    let variant = Variant::parse(&cfg.datagen.variant)
        .ok_or_else(|| Error::Config(format!("datagen.variant: unknown `{}`", cfg.datagen.variant)))?;
    let results: Vec<Result<(Trajectory, usize)>> =
        (0..n).into_par_iter().map(|i| generate_one(cfg, &model, variant, i)).collect();
    let mut trajectories = Vec::with_capacity(n);
    let mut retries = 0;
    for r in results {
        let (t, extra) = r?;
        retries += extra;
        trajectories.push(t);
    }
    log::info!("generated {n} trajectories with {retries} retries");
    Ok(Dataset {
        n_train: train_count(n, cfg.datagen.train_fraction),
        trajectories,
        model_hash: model.digest(),
        config_hash: cfg.digest(),
    })
}

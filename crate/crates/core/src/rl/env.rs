//! Episode start states and rollout collection.

use rand::Rng as _;
use rayon::prelude::*;

use super::obs::{self, CriticObservation, ObsHistory};
use super::ppo::{ActorCritic, Batch};
use super::randomize::randomize_domain;
use crate::config::PipelineConfig;
use crate::datagen::Trajectory;
use crate::error::{Error, Result};
use crate::kinematics::{first_self_collision, lowest_point};
use crate::model::RobotModel;
use crate::nn::Tensor2;
use crate::physics::{self, CollisionGeometry, SimState, TerrainBox};
use crate::predictor::FallPredictor;
use crate::reward::{total_reward, RegulationInput, RewardBreakdown};
use crate::rng::{self, Rng};

/// Draws before a start-state sampler gives up.
pub const REJECTION_BUDGET: usize = 1000;
/// Deepest ground overlap accepted in a recorded start state (m).
const MAX_START_PENETRATION: f64 = 0.02;

/// Curriculum stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Random near-ground poses with simplified collision shapes.
    One,
    /// Predictor-flagged dataset states with full collision shapes.
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }

    pub fn parse(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::One),
            2 => Some(Self::Two),
            _ => None,
        }
    }

    pub fn geometry(self) -> CollisionGeometry {
        match self {
            Self::One => CollisionGeometry::Simplified,
            Self::Two => CollisionGeometry::Full,
        }
    }
}

/// Initial condition of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StartState {
    pub state: SimState,
    pub terrain: Vec<TerrainBox>,
    /// `(trajectory, frame)` for dataset starts.
    pub source: Option<(usize, usize)>,
}

fn valid_start(model: &RobotModel, s: &SimState) -> bool {
    let kin = s.kinematics(model);
    s.is_finite() && lowest_point(model, &kin) >= -MAX_START_PENETRATION && first_self_collision(model, &kin).is_none()
}

/// Default posture with perturbed joints, tilted base, lowest point a
/// little above the ground, and a random base velocity.
pub fn sample_random_start(model: &RobotModel, cfg: &crate::config::PpoConfig, rng: &mut Rng) -> Result<SimState> {
    let sym = |rng: &mut Rng, a: f64| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
    for _ in 0..REJECTION_BUDGET {
        let mut s = SimState::standing(model);
        for (q, j) in s.q.iter_mut().zip(&model.joints) {
            *q = (*q + sym(rng, cfg.stage1_joint_noise)).clamp(j.position_limits[0], j.position_limits[1]);
        }
        s.base_pose[2] = sym(rng, cfg.stage1_pitch);
        s.base_pose[1] = 0.0;
        let low = lowest_point(model, &s.kinematics(model));
        let lift = if cfg.stage1_lift > 0.0 { rng.random_range(0.0..cfg.stage1_lift) } else { 0.0 };
        s.base_pose[1] = lift - low;
        s.base_vel[0] = sym(rng, cfg.stage1_speed);
        s.base_vel[1] = sym(rng, cfg.stage1_speed);
        if valid_start(model, &s) {
            return Ok(s);
        }
    }
    Err(Error::Precondition(format!("no valid random start in {REJECTION_BUDGET} draws")))
}

/// Dataset frames at which the fall predictor's trigger is latched, up to
/// and excluding impact.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StartPool {
    pub starts: Vec<StartState>,
}

impl StartPool {
    pub fn from_predictor(trajs: &[Trajectory], predictor: &FallPredictor, control_dt: f64, model: &RobotModel) -> Result<Self> {
        let per: Vec<Result<Vec<StartState>>> = trajs
            .par_iter()
            .enumerate()
            .map(|(ti, t)| {
                let mut st = predictor.new_stream();
                let mut out = Vec::new();
                for i in 0..t.impact.min(t.len()) {
                    let o: Vec<f64> = t.obs(i).iter().map(|v| *v as f64).collect();
                    let (_, fired) = predictor.predict_stream(&o, &mut st)?;
                    if fired {
                        let state = t.state(i);
                        if valid_start(model, &state) {
                            out.push(StartState {
                                state,
                                terrain: t.terrain_at(i, control_dt),
                                source: Some((ti, i)),
                            });
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        let mut starts = Vec::new();
        for p in per {
            starts.extend(p?);
        }
        Ok(Self { starts })
    }

    /// First latched frame of each trajectory only.
    pub fn first_triggers(&self) -> Vec<&StartState> {
        let mut last = None;
        self.starts
            .iter()
            .filter(|s| {
                let t = s.source.map(|x| x.0);
                let first = t != last;
                last = t;
                first
            })
            .collect()
    }

    /// Starts at most `frames` control steps after their trajectory's first
    /// trigger.
    pub fn near_trigger(&self, frames: usize) -> Self {
        let mut first: Option<(usize, usize)> = None;
        let starts = self
            .starts
            .iter()
            .filter(|s| match (s.source, first) {
                (Some((t, i)), Some((ft, fi))) if t == ft => i - fi <= frames,
                (Some(src), _) => {
                    first = Some(src);
                    true
                }
                (None, _) => true,
            })
            .cloned()
            .collect();
        Self { starts }
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Where each episode of a stage starts.
pub fn sample_initial_state(stage: Stage, cfg: &PipelineConfig, model: &RobotModel, pool: Option<&StartPool>, rng: &mut Rng) -> Result<StartState> {
    let random = |rng: &mut Rng| -> Result<StartState> {
        Ok(StartState {
            state: sample_random_start(model, &cfg.ppo, rng)?,
            terrain: Vec::new(),
            source: None,
        })
    };
    match stage {
        Stage::One => random(rng),
        Stage::Two => {
            let pool = pool
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::Precondition("stage 2 needs predictor-flagged dataset states".into()))?;
            if rng.random::<f64>() < cfg.ppo.stage2_random_fraction {
                random(rng)
            } else {
                Ok(pool.starts[rng.random_range(0..pool.len())].clone())
            }
        }
    }
}

/// One recorded control step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: RewardBreakdown,
}

/// Runs one fixed-length episode with a sampled policy under a randomized
/// domain. Divergence surfaces as [`Error::Diverged`].
pub fn run_episode(ac: &ActorCritic, cfg: &PipelineConfig, model: &RobotModel, stage: Stage, start: &StartState, rng: &mut Rng) -> Result<Vec<Transition>> {
    let noise = &cfg.ppo.randomization;
    let mut base_world = cfg.world();
    base_world.terrain = start.terrain.clone();
    let (plant, world) = randomize_domain(model, &base_world, noise, rng);
    let n = cfg.ppo.episode_len;
    let cdt = cfg.physics.control_dt();
    let mut s = start.state.clone();
    let mut hist = ObsHistory::new();
    let mut prev_targets = model.default_angles();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let offsets = obs::target_offsets(model, &prev_targets);
        hist.push(obs::sense_frame(&s, model, &offsets, noise, rng));
        let critic = CriticObservation {
            actor: hist.actor(),
            privileged: obs::privileged(&s, &plant, k as f64 / n as f64),
        };
        let (action, log_prob) = ac.act(&critic.actor, rng)?;
        let value = ac.value(&critic)?;
        let targets = obs::squash(model, &action);
        let (next, readout) = physics::advance(&s, &targets, &plant, stage.geometry(), &world, cfg.physics.control_decimation, |_, _| {})?;
        let reg = RegulationInput {
            q: &next.q,
            qd: &next.qd,
            prev_qd: &s.qd,
            action: &targets,
            prev_action: &prev_targets,
            dt: cdt,
        };
        let reward = total_reward(&readout, &reg, &cfg.reward, &plant, world.gravity);
        out.push(Transition {
            actor: critic.actor.0.clone(),
            critic: critic.flat(),
            action,
            log_prob,
            value,
            reward,
        });
        prev_targets = targets;
        s = next;
    }
    Ok(out)
}

/// A rollout batch and the per-step mean of each reward term.
#[derive(Debug, Clone)]
pub struct Rollouts {
    pub batch: Batch,
    pub mean_reward: RewardBreakdown,
    pub episodes: usize,
    pub dropped: usize,
}

/// Collects `cfg.ppo.n_envs` episodes in parallel. Episode `e` of update
/// `update` draws from its own substream of `seed`, so the batch does not
/// depend on scheduling.
pub fn collect_rollouts(
    ac: &ActorCritic,
    cfg: &PipelineConfig,
    model: &RobotModel,
    stage: Stage,
    pool: Option<&StartPool>,
    seed: u64,
    update: usize,
) -> Result<Rollouts> {
    let episodes: Vec<Result<Option<Vec<Transition>>>> = (0..cfg.ppo.n_envs)
        .into_par_iter()
        .map(|e| {
            let mut rng = rng::stream(seed, "episode", ((update as u64) << 32) | e as u64);
            let start = sample_initial_state(stage, cfg, model, pool, &mut rng)?;
            match run_episode(ac, cfg, model, stage, &start, &mut rng) {
                Ok(t) => Ok(Some(t)),
                Err(Error::Diverged { time, .. }) => {
                    log::warn!("update {update} episode {e}: diverged at {time:.3} s, dropped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut kept = Vec::with_capacity(episodes.len());
    let mut dropped = 0;
    for e in episodes {
        match e? {
            Some(t) => kept.push(t),
            None => dropped += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::Numerical(format!("every episode of update {update} diverged")));
    }
    let n: usize = kept.iter().map(|e| e.len()).sum();
    let first = &kept[0][0];
    let mut batch = Batch {
        actor_obs: Tensor2::zeros(n, first.actor.len()),
        critic_obs: Tensor2::zeros(n, first.critic.len()),
        actions: Tensor2::zeros(n, first.action.len()),
        log_probs: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        dones: Vec::with_capacity(n),
    };
    let mut sum = RewardBreakdown::default();
    let mut i = 0;
    for ep in &kept {
        for (k, t) in ep.iter().enumerate() {
            batch.actor_obs.row_mut(i).copy_from_slice(&t.actor);
            batch.critic_obs.row_mut(i).copy_from_slice(&t.critic);
            batch.actions.row_mut(i).copy_from_slice(&t.action);
            batch.log_probs.push(t.log_prob);
            batch.values.push(t.value);
            batch.rewards.push(t.reward.total);
            batch.dones.push(k + 1 == ep.len());
            sum.add(&t.reward);
            i += 1;
        }
    }
    Ok(Rollouts {
        batch,
        mean_reward: sum.scaled(1.0 / n as f64),
        episodes: kept.len(),
        dropped,
    })
}

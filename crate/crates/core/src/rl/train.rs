//! Two-stage policy training loop.

use super::env::{collect_rollouts, Stage, StartPool};
use super::obs;
use super::ppo::{ppo_update, ActorCritic, PpoState, UpdateStats};
use crate::config::PipelineConfig;
use crate::datagen::offset_frames;
use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;
use crate::rng;

/// One training-curve row: per-step means of every reward term plus the
/// optimizer statistics of the update that followed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub stage: u8,
    pub update: usize,
    pub reward: RewardBreakdown,
    pub stats: UpdateStats,
    pub episodes: usize,
    pub dropped: usize,
}

impl CurveRow {
    pub const HEADER: [&'static str; 17] = [
        "stage",
        "update",
        "reward",
        "contact",
        "joint",
        "torque",
        "regulation",
        "raw_contact",
        "raw_joint",
        "raw_torque",
        "kl",
        "clip_fraction",
        "lr",
        "actor_loss",
        "value_loss",
        "entropy",
        "episodes",
    ];

    pub fn record(&self) -> Vec<String> {
        let r = &self.reward;
        let s = &self.stats;
        let mut v = vec![self.stage.to_string(), self.update.to_string()];
        v.extend(
            [
                r.total,
                r.contact,
                r.joint,
                r.torque,
                r.regulation,
                r.raw_contact,
                r.raw_joint,
                r.raw_torque,
                s.kl,
                s.clip_fraction,
                s.lr,
                s.actor_loss,
                s.value_loss,
                s.entropy,
            ]
            .iter()
            .map(|x| format!("{x:.6e}")),
        );
        v.push(self.episodes.to_string());
        v
    }
}

/// Trains one curriculum stage. Stage 2 continues from `init` and needs a
/// start pool; stage 1 starts fresh unless `init` is given.
pub fn train_policy(
    cfg: &PipelineConfig,
    stage: Stage,
    init: Option<ActorCritic>,
    pool: Option<&StartPool>,
    seed: u64,
    mut on_update: impl FnMut(&CurveRow),
) -> Result<(ActorCritic, Vec<CurveRow>)> {
    let model = cfg.robot_model();
    let nj = model.n_joints();
    let (mut ac, updates) = match stage {
        Stage::One => {
            let ac = match init {
                Some(a) => a,
                None => ActorCritic::new(obs::actor_dim(nj), obs::critic_dim(nj), nj, &cfg.ppo, &mut rng::stream(seed, "policy-init", 0))?,
            };
            (ac, cfg.ppo.stage1_updates)
        }
        Stage::Two => {
            let ac = init.ok_or_else(|| Error::Precondition("stage 2 needs a stage-1 policy to start from".into()))?;
            if pool.is_none_or(|p| p.is_empty()) {
                return Err(Error::Precondition("stage 2 needs predictor-flagged dataset states".into()));
            }
            (ac, cfg.ppo.stage2_updates)
        }
    };
    if ac.actor.input_dim() != obs::actor_dim(nj) || ac.critic.input_dim() != obs::critic_dim(nj) || ac.n_actions() != nj {
        return Err(Error::shape("policy input", obs::actor_dim(nj), ac.actor.input_dim()));
    }
    let near = pool.map(|p| p.near_trigger(offset_frames(cfg.ppo.stage2_window_s, cfg.physics.control_dt())));
    let pool = near.as_ref();
    let stage_seed = rng::derive_seed(seed, "stage", stage.number() as u64);
    let mut st = PpoState::new(&ac, cfg.ppo.lr);
    let mut curve = Vec::with_capacity(updates);
    for u in 0..updates {
        let ro = collect_rollouts(&ac, cfg, &model, stage, pool, stage_seed, u)?;
        let mut rng = rng::stream(stage_seed, "ppo-update", u as u64);
        let stats = ppo_update(&mut ac, &mut st, &ro.batch, &cfg.ppo, &mut rng)?;
        let row = CurveRow {
            stage: stage.number(),
            update: u,
            reward: ro.mean_reward,
            stats,
            episodes: ro.episodes,
            dropped: ro.dropped,
        };
        log::info!(
            "stage {} update {u}: reward {:.4} contact {:.4} kl {:.4} lr {:.1e}",
            stage.number(),
            row.reward.total,
            row.reward.contact,
            stats.kl,
            stats.lr
        );
        on_update(&row);
        curve.push(row);
    }
    Ok((ac, curve))
}

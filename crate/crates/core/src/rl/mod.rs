//! Mitigation policy trained with PPO.
//!
//! The actor sees a short stack of onboard frames; the critic additionally
//! gets simulator ground truth. Stage 1 starts from random near-ground
//! poses with simplified collision shapes, stage 2 from dataset states the
//! fall predictor flagged, with full shapes.

mod env;
mod obs;
mod ppo;
mod randomize;
mod train;

pub use env::{collect_rollouts, run_episode, sample_initial_state, sample_random_start, Rollouts, Stage, StartPool, StartState, Transition, REJECTION_BUDGET};
pub use obs::{
    actor_dim, critic_dim, frame_dim, privileged, projected_gravity, sense_frame, squash, target_offsets, ActorObservation, CriticObservation,
    ObsHistory, HISTORY, PRIVILEGED_DIM,
};
pub use ppo::{adapt_lr, entropy, gae, log_prob, minibatch_grads, normalize, ppo_update, ActorCritic, Batch, PpoState, UpdateStats};
pub use randomize::randomize_domain;
pub use train::{train_policy, CurveRow};

//! Fall prediction and damage mitigation for a planar humanoid.
//!
//! The crate covers the whole pipeline: a planar articulated-body simulator,
//! scripted nominal controllers with injected failures for fall-data
//! generation, a GRU fall predictor, a damage-aware reward, PPO training of
//! a mitigation policy, and the evaluation suite.

pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod hash;
pub mod kinematics;
pub mod model;
pub mod nn;
pub mod physics;
pub mod predictor;
pub mod reward;
pub mod rl;
pub mod rng;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use model::{default_model, RobotModel};

//! Pipeline configuration loaded from TOML.
//!
//! Every section rejects unknown keys. Missing keys take the defaults below,
//! which form the desk-scale preset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, RobotModel};
use crate::physics::WorldParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub datagen: DatagenConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            model: ModelConfig::default(),
            physics: PhysicsConfig::default(),
            datagen: DatagenConfig::default(),
            predictor: PredictorConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Joint reaction threshold as a multiple of the supported weight.
    pub threshold_factor: f64,
    pub base_mass_offset: f64,
    pub base_com_offset: [f64; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            threshold_factor: model::DEFAULT_THRESHOLD_FACTOR,
            base_mass_offset: 0.0,
            base_com_offset: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub dt: f64,
    pub control_decimation: usize,
    pub gravity: f64,
    pub friction: f64,
    pub restitution: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_damping: f64,
    pub limit_stiffness: f64,
    pub limit_damping: f64,
    pub qd_max: f64,
    pub peak_factor: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        let w = WorldParams::default();
        Self {
            dt: w.dt,
            control_decimation: 4,
            gravity: w.gravity,
            friction: w.friction,
            restitution: w.restitution,
            contact_stiffness: w.contact_stiffness,
            contact_damping: w.contact_damping,
            tangential_damping: w.tangential_damping,
            limit_stiffness: w.limit_stiffness,
            limit_damping: w.limit_damping,
            qd_max: w.qd_max,
            peak_factor: w.peak_factor,
        }
    }
}

impl PhysicsConfig {
    pub fn control_dt(&self) -> f64 {
        self.dt * self.control_decimation as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub n_trajectories: usize,
    pub train_fraction: f64,
    pub max_len_s: f64,
    pub tail_s: f64,
    pub onset_s: [f64; 2],
    pub max_factors: usize,
    /// Relative weights of the six failure factors when drawing combinations.
    pub factor_weights: [f64; 6],
    /// Rollouts attempted per stored trajectory before giving up.
    pub retry_budget: usize,
    pub noise_scale: [f64; 2],
    pub kick_speed: [f64; 2],
    pub slip_speed: f64,
    pub trip_height: [f64; 2],
    pub delay_s: [f64; 2],
    pub gain_scale: [f64; 2],
    pub com_offset: f64,
    /// Nominal controller variant, `balance-A` or `gait-B`.
    pub variant: String,
    pub t2_offset_s: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 8192,
            train_fraction: 0.8,
            max_len_s: 10.0,
            tail_s: 0.5,
            onset_s: [2.0, 4.0],
            max_factors: 3,
            factor_weights: [1.0; 6],
            retry_budget: 50,
            noise_scale: [2.0, 10.0],
            kick_speed: [-2.0, 2.0],
            slip_speed: 1.0,
            trip_height: [0.0, 0.15],
            delay_s: [0.0, 0.2],
            gain_scale: [0.2, 3.0],
            com_offset: 0.1,
            variant: "balance-A".into(),
            t2_offset_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Sequences per optimizer step.
    pub batch: usize,
    pub t2_offset_s: f64,
    pub mask_ambiguous: bool,
    pub debounce: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 5,
            batch: 32,
            t2_offset_s: 0.1,
            mask_ambiguous: true,
            debounce: 2,
            grad_clip: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_c: f64,
    pub w_j: f64,
    pub w_e: f64,
    pub alpha: f64,
    pub w_qpos: f64,
    pub w_qvel: f64,
    pub w_qacc: f64,
    pub w_arate: f64,
    /// Divisors applied to the raw penalties before weighting.
    pub contact_scale: f64,
    pub joint_scale: f64,
    pub torque_scale: f64,
    /// Width of the soft limit-proximity gate (rad).
    pub limit_margin: f64,
    /// Use the signed joint-load difference instead of its positive part.
    pub joint_raw: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_c: 1.0,
            w_j: 0.05,
            w_e: 0.5,
            alpha: 0.3,
            w_qpos: 0.1,
            w_qvel: 1e-4,
            w_qacc: 1e-7,
            w_arate: 0.01,
            contact_scale: 2000.0,
            joint_scale: 200.0,
            torque_scale: 1.0,
            limit_margin: 0.1,
            joint_raw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Randomization {
    pub friction: [f64; 2],
    pub restitution: [f64; 2],
    pub base_mass: [f64; 2],
    pub com_x: [f64; 2],
    pub com_z: [f64; 2],
    /// Log-uniform support of the stiffness multiplier.
    pub kp_scale: [f64; 2],
    /// Log-uniform support of the damping multiplier.
    pub kd_scale: [f64; 2],
    pub limit_jitter_std: f64,
    pub noise_orientation: f64,
    pub noise_joint_pos: f64,
    pub noise_joint_vel: f64,
    pub noise_ang_vel: f64,
    pub noise_gravity: f64,
}

impl Default for Randomization {
    fn default() -> Self {
        Self {
            friction: [0.3, 1.0],
            restitution: [0.0, 0.5],
            base_mass: [-1.0, 3.0],
            com_x: [-0.05, 0.05],
            com_z: [-0.01, 0.01],
            kp_scale: [0.7, 1.5],
            kd_scale: [0.5, 3.0],
            limit_jitter_std: 0.02,
            noise_orientation: 0.05,
            noise_joint_pos: 0.01,
            noise_joint_vel: 1.5,
            noise_ang_vel: 0.2,
            noise_gravity: 0.05,
        }
    }
}

impl Randomization {
    /// Every range collapsed onto the nominal physics (no randomization,
    /// no observation noise).
    pub fn fixed(physics: &PhysicsConfig) -> Self {
        Self {
            friction: [physics.friction; 2],
            restitution: [physics.restitution; 2],
            base_mass: [0.0, 0.0],
            com_x: [0.0, 0.0],
            com_z: [0.0, 0.0],
            kp_scale: [1.0, 1.0],
            kd_scale: [1.0, 1.0],
            limit_jitter_std: 0.0,
            noise_orientation: 0.0,
            noise_joint_pos: 0.0,
            noise_joint_vel: 0.0,
            noise_ang_vel: 0.0,
            noise_gravity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub episode_len: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub target_kl: f64,
    pub max_grad_norm: f64,
    /// Divide rewards by the running spread of discounted returns.
    pub normalize_returns: bool,
    pub n_envs: usize,
    pub stage1_updates: usize,
    pub stage2_updates: usize,
    pub hidden: Vec<usize>,
    pub activation: String,
    pub init_log_std: f64,
    /// Fraction of stage-2 episodes started from stage-1 style states.
    pub stage2_random_fraction: f64,
    /// Stage-2 dataset starts lie within this long after the first trigger (s).
    pub stage2_window_s: f64,
    /// Upper bound of the extra base height of stage-1 starts (m).
    pub stage1_lift: f64,
    pub stage1_joint_noise: f64,
    pub stage1_pitch: f64,
    pub stage1_speed: f64,
    pub randomization: Randomization,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            episode_len: 40,
            gamma: 0.97,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.0,
            value_coef: 1.0,
            lr: 1e-3,
            lr_min: 1e-5,
            lr_max: 1e-2,
            target_kl: 0.01,
            max_grad_norm: 1.0,
            normalize_returns: true,
            n_envs: 256,
            stage1_updates: 60,
            stage2_updates: 60,
            hidden: vec![64, 64],
            activation: "tanh".into(),
            init_log_std: -0.5,
            stage2_random_fraction: 0.25,
            stage2_window_s: 0.0,
            stage1_lift: 0.15,
            stage1_joint_noise: 0.3,
            stage1_pitch: 0.6,
            stage1_speed: 1.5,
            randomization: Randomization::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_trials: usize,
    pub horizon_s: f64,
    pub max_init_speed: f64,
    pub sweep_pitch: [f64; 2],
    pub sweep_pitch_steps: usize,
    pub sweep_rate: [f64; 2],
    pub sweep_rate_steps: usize,
    pub sweep_per_cell: usize,
    pub generalization_trials: usize,
    /// Share of invalid trials above which a suite is flagged unreliable.
    pub max_invalid_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trials: 500,
            horizon_s: 2.0,
            max_init_speed: 4.0,
            sweep_pitch: [-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2],
            sweep_pitch_steps: 9,
            sweep_rate: [-3.0, 3.0],
            sweep_rate_steps: 7,
            sweep_per_cell: 4,
            generalization_trials: 500,
            max_invalid_fraction: 0.05,
        }
    }
}

fn check(ok: bool, field: &str, rule: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: {rule}")))
    }
}

fn check_range(r: [f64; 2], field: &str) -> Result<()> {
    check(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1], field, "expected [lo, hi] with lo <= hi")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Digest of the canonical serialization.
    pub fn digest(&self) -> [u8; 32] {
        crate::hash::sha256(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            &format!("unsupported version, expected {SCHEMA_VERSION}"),
        )?;
        let p = &self.physics;
        check(p.dt > 0.0 && p.dt.is_finite(), "physics.dt", "must be > 0")?;
        check(p.control_decimation >= 1, "physics.control_decimation", "must be >= 1")?;
        check(p.gravity >= 0.0, "physics.gravity", "must be >= 0")?;
        check(p.friction >= 0.0, "physics.friction", "must be >= 0")?;
        check((0.0..=1.0).contains(&p.restitution), "physics.restitution", "must be in [0, 1]")?;
        check(p.contact_stiffness > 0.0, "physics.contact_stiffness", "must be > 0")?;
        check(p.contact_damping >= 0.0, "physics.contact_damping", "must be >= 0")?;
        check(p.tangential_damping > 0.0, "physics.tangential_damping", "must be > 0")?;
        check(p.limit_stiffness >= 0.0, "physics.limit_stiffness", "must be >= 0")?;
        check(p.limit_damping >= 0.0, "physics.limit_damping", "must be >= 0")?;
        check(p.qd_max > 0.0, "physics.qd_max", "must be > 0")?;
        check(p.peak_factor > 0.0, "physics.peak_factor", "must be > 0")?;
        check(self.model.threshold_factor > 0.0, "model.threshold_factor", "must be > 0")?;

        let d = &self.datagen;
        check(d.n_trajectories >= 2, "datagen.n_trajectories", "must be >= 2")?;
        check(d.train_fraction > 0.0 && d.train_fraction < 1.0, "datagen.train_fraction", "must be in (0, 1)")?;
        check(d.max_len_s > 0.0, "datagen.max_len_s", "must be > 0")?;
        check(d.tail_s >= 0.0, "datagen.tail_s", "must be >= 0")?;
        check_range(d.onset_s, "datagen.onset_s")?;
        check((1..=6).contains(&d.max_factors), "datagen.max_factors", "must be in 1..=6")?;
        check(
            d.factor_weights.iter().all(|w| *w >= 0.0) && d.factor_weights.iter().sum::<f64>() > 0.0,
            "datagen.factor_weights",
            "must be >= 0 with a positive sum",
        )?;
        check(d.retry_budget >= 1, "datagen.retry_budget", "must be >= 1")?;
        check_range(d.noise_scale, "datagen.noise_scale")?;
        check_range(d.kick_speed, "datagen.kick_speed")?;
        check_range(d.trip_height, "datagen.trip_height")?;
        check_range(d.delay_s, "datagen.delay_s")?;
        check_range(d.gain_scale, "datagen.gain_scale")?;
        check(d.gain_scale[0] > 0.0, "datagen.gain_scale", "must be > 0")?;
        check(
            crate::datagen::Variant::parse(&d.variant).is_some(),
            "datagen.variant",
            "must be `balance-A` or `gait-B`",
        )?;
        check(d.t2_offset_s >= 0.0, "datagen.t2_offset_s", "must be >= 0")?;

        let pr = &self.predictor;
        check(pr.hidden >= 1, "predictor.hidden", "must be >= 1")?;
        check(pr.lr > 0.0, "predictor.lr", "must be > 0")?;
        check(pr.weight_decay >= 0.0, "predictor.weight_decay", "must be >= 0")?;
        check(pr.epochs >= 1, "predictor.epochs", "must be >= 1")?;
        check(pr.batch >= 1, "predictor.batch", "must be >= 1")?;
        check(pr.t2_offset_s >= 0.0, "predictor.t2_offset_s", "must be >= 0")?;
        check(pr.debounce >= 1, "predictor.debounce", "must be >= 1")?;
        check(pr.grad_clip >= 0.0, "predictor.grad_clip", "must be >= 0")?;

        let r = &self.reward;
        check((0.0..=1.0).contains(&r.alpha), "reward.alpha", "must be in [0, 1]")?;
        for (name, v) in [
            ("reward.w_c", r.w_c),
            ("reward.w_j", r.w_j),
            ("reward.w_e", r.w_e),
            ("reward.w_qpos", r.w_qpos),
            ("reward.w_qvel", r.w_qvel),
            ("reward.w_qacc", r.w_qacc),
            ("reward.w_arate", r.w_arate),
        ] {
            check(v >= 0.0, name, "must be >= 0")?;
        }
        for (name, v) in [
            ("reward.contact_scale", r.contact_scale),
            ("reward.joint_scale", r.joint_scale),
            ("reward.torque_scale", r.torque_scale),
            ("reward.limit_margin", r.limit_margin),
        ] {
            check(v > 0.0, name, "must be > 0")?;
        }

        let o = &self.ppo;
        check(o.episode_len >= 1, "ppo.episode_len", "must be >= 1")?;
        check(o.gamma > 0.0 && o.gamma <= 1.0, "ppo.gamma", "must be in (0, 1]")?;
        check((0.0..=1.0).contains(&o.lambda), "ppo.lambda", "must be in [0, 1]")?;
        check(o.clip > 0.0, "ppo.clip", "must be > 0")?;
        check(o.epochs >= 1, "ppo.epochs", "must be >= 1")?;
        check(o.minibatches >= 1, "ppo.minibatches", "must be >= 1")?;
        check(o.lr > 0.0 && o.lr_min > 0.0 && o.lr_min <= o.lr_max, "ppo.lr", "need 0 < lr_min <= lr_max")?;
        check(o.target_kl > 0.0, "ppo.target_kl", "must be > 0")?;
        check(o.n_envs >= 1, "ppo.n_envs", "must be >= 1")?;
        check(!o.hidden.is_empty() && o.hidden.iter().all(|h| *h > 0), "ppo.hidden", "needs positive widths")?;
        check(
            crate::nn::Activation::parse(&o.activation).is_some(),
            "ppo.activation",
            "must be one of tanh, elu, relu, linear",
        )?;
        check(
            (0.0..=1.0).contains(&o.stage2_random_fraction),
            "ppo.stage2_random_fraction",
            "must be in [0, 1]",
        )?;
        check(o.stage2_window_s >= 0.0, "ppo.stage2_window_s", "must be >= 0")?;
        let z = &o.randomization;
        for (name, rg) in [
            ("ppo.randomization.friction", z.friction),
            ("ppo.randomization.restitution", z.restitution),
            ("ppo.randomization.base_mass", z.base_mass),
            ("ppo.randomization.com_x", z.com_x),
            ("ppo.randomization.com_z", z.com_z),
            ("ppo.randomization.kp_scale", z.kp_scale),
            ("ppo.randomization.kd_scale", z.kd_scale),
        ] {
            check_range(rg, name)?;
        }
        check(z.kp_scale[0] > 0.0, "ppo.randomization.kp_scale", "must be > 0")?;
        check(z.kd_scale[0] > 0.0, "ppo.randomization.kd_scale", "must be > 0")?;

        let e = &self.eval;
        check(e.n_trials >= 2, "eval.n_trials", "must be >= 2")?;
        check(e.horizon_s > 0.0, "eval.horizon_s", "must be > 0")?;
        check(e.sweep_pitch_steps >= 1 && e.sweep_rate_steps >= 1, "eval.sweep_*_steps", "must be >= 1")?;
        check(e.sweep_per_cell >= 1, "eval.sweep_per_cell", "must be >= 1")?;
        check_range(e.sweep_pitch, "eval.sweep_pitch")?;
        check_range(e.sweep_rate, "eval.sweep_rate")?;
        Ok(())
    }

    /// Robot model with the configured thresholds and base offsets.
    pub fn robot_model(&self) -> RobotModel {
        let mut m = model::default_model();
        m.set_reaction_thresholds(self.model.threshold_factor, self.physics.gravity);
        m.base_mass_offset = self.model.base_mass_offset;
        m.base_com_offset = self.model.base_com_offset;
        m
    }

    pub fn world(&self) -> WorldParams {
        let p = &self.physics;
        WorldParams {
            gravity: p.gravity,
            friction: p.friction,
            restitution: p.restitution,
            contact_stiffness: p.contact_stiffness,
            contact_damping: p.contact_damping,
            tangential_damping: p.tangential_damping,
            limit_stiffness: p.limit_stiffness,
            limit_damping: p.limit_damping,
            dt: p.dt,
            qd_max: p.qd_max,
            peak_factor: p.peak_factor,
            terrain: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = PipelineConfig::from_toml("schema_version = 1\n[ppo]\ngama = 0.9\n").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn field_errors_name_the_field() {
        let err = PipelineConfig::from_toml("schema_version = 1\n[ppo]\ngamma = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("ppo.gamma"));
        let err = PipelineConfig::from_toml("schema_version = 2\n").unwrap_err();
        assert!(err.to_string().contains("schema_version"));
        assert!(PipelineConfig::from_toml("[physics]\ndt = 0.01\n").is_err());
    }

    #[test]
    fn sections_are_optional() {
        let cfg = PipelineConfig::from_toml("schema_version = 1\n[physics]\ndt = 0.002\n").unwrap();
        assert_eq!(cfg.physics.dt, 0.002);
        assert_eq!(cfg.ppo.episode_len, 40);
    }
}

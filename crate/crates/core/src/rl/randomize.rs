//! Episode-constant domain randomization.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::config::Randomization;
use crate::model::RobotModel;
use crate::physics::WorldParams;
use crate::rng::Rng;

fn uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn log_uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0].ln()..r[1].ln()).exp()
    } else {
        r[0]
    }
}

/// Samples a perturbed plant and world. Observation noise is applied per
/// frame by the caller from the same `r`.
pub fn randomize_domain(model: &RobotModel, world: &WorldParams, r: &Randomization, rng: &mut Rng) -> (RobotModel, WorldParams) {
    let mut m = model.clone();
    let mut w = world.clone();
    w.friction = uniform(rng, r.friction);
    w.restitution = uniform(rng, r.restitution);
    m.base_mass_offset += uniform(rng, r.base_mass);
    m.base_com_offset[0] += uniform(rng, r.com_x);
    m.base_com_offset[1] += uniform(rng, r.com_z);
    let kp = log_uniform(rng, r.kp_scale);
    let kd = log_uniform(rng, r.kd_scale);
    if kp != 1.0 || kd != 1.0 {
        m.scale_gains(kp, kd);
    }
    if r.limit_jitter_std > 0.0 {
        let n = Normal::new(0.0, r.limit_jitter_std).expect("validated std");
        for j in &mut m.joints {
            let lo = j.position_limits[0] + n.sample(rng);
            let hi = j.position_limits[1] + n.sample(rng);
            if lo < hi {
                j.position_limits = [lo, hi];
            }
        }
    }
    (m, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PhysicsConfig;
    use crate::model::default_model;
    use rand::SeedableRng;

    #[test]
    fn draws_respect_supports() {
        let m = default_model();
        let w = WorldParams::default();
        let r = Randomization::default();
        let mut rng = Rng::seed_from_u64(1);
        let mut log_kp = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let (m2, w2) = randomize_domain(&m, &w, &r, &mut rng);
            assert!((0.3..=1.0).contains(&w2.friction));
            assert!((0.0..=0.5).contains(&w2.restitution));
            assert!((-1.0..=3.0).contains(&m2.base_mass_offset));
            assert!(m2.base_com_offset[0].abs() <= 0.05 && m2.base_com_offset[1].abs() <= 0.01);
            let s = m2.joints[0].kp / m.joints[0].kp;
            assert!((0.7 - 1e-12..=1.5 + 1e-12).contains(&s));
            log_kp += s.ln();
        }
        let gmean = (log_kp / n as f64).exp();
        assert!((gmean / (0.7f64 * 1.5).sqrt() - 1.0).abs() < 0.02, "{gmean}");
    }

    #[test]
    fn fixed_ranges_leave_model_untouched() {
        let m = default_model();
        let w = WorldParams::default();
        let r = Randomization::fixed(&PhysicsConfig::default());
        let (m2, w2) = randomize_domain(&m, &w, &r, &mut Rng::seed_from_u64(5));
        assert_eq!(m2, m);
        assert_eq!(w2, w);
    }
}

//! Failure factors that push the nominal controller into a fall.

use rand::seq::index::sample_weighted;
use rand::Rng as _;

use crate::config::DatagenConfig;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorKind {
    /// Observation noise multiplied by `magnitude`.
    SensorNoise,
    /// Whole-body horizontal velocity change of `magnitude` m/s.
    ExternalForce,
    /// Stance foot pushed at `magnitude` m/s along `aux[0]` (±1) while
    /// friction drops to `aux[1]` for a short window.
    FootSlip,
    /// Obstacle of height `magnitude` placed in the swing foot's path;
    /// `aux = [x0, x1, foot link]` once it has spawned, with `onset_s`
    /// moved to the spawn time.
    FootTrip,
    /// Observation latency of `magnitude` seconds.
    SystemDelay,
    /// Stiffness scale `magnitude`, damping scale `aux[0]`, base CoM shift `aux[1]`.
    DynamicMismatch,
}

impl FactorKind {
    pub const ALL: [FactorKind; 6] = [
        Self::SensorNoise,
        Self::ExternalForce,
        Self::FootSlip,
        Self::FootTrip,
        Self::SystemDelay,
        Self::DynamicMismatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SensorNoise => "sensor_noise",
            Self::ExternalForce => "external_force",
            Self::FootSlip => "foot_slip",
            Self::FootTrip => "foot_trip",
            Self::SystemDelay => "system_delay",
            Self::DynamicMismatch => "dynamic_mismatch",
        }
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureFactor {
    pub kind: FactorKind,
    pub onset_s: f64,
    pub magnitude: f64,
    pub aux: [f64; 3],
}

/// Friction coefficient under a slipping foot.
pub(crate) const SLIP_FRICTION: f64 = 0.05;
/// How long the slip keeps friction low (s).
pub(crate) const SLIP_WINDOW_S: f64 = 0.4;

fn uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Draws between one and `max_factors` distinct factors. The count is
/// uniform; kinds are drawn without replacement by `factor_weights`.
pub fn inject_failures(cfg: &DatagenConfig, rng: &mut Rng) -> Vec<FailureFactor> {
    let usable = cfg.factor_weights.iter().filter(|w| **w > 0.0).count();
    let n = rng.random_range(1..=cfg.max_factors.clamp(1, usable.max(1)));
    let picked = sample_weighted(rng, 6, |i| cfg.factor_weights[i], n).expect("validated weights");
    let mut kinds: Vec<FactorKind> = picked.iter().map(|i| FactorKind::ALL[i]).collect();
    kinds.sort();
    kinds
        .into_iter()
        .map(|kind| {
            let onset_s = uniform(rng, cfg.onset_s);
            let (magnitude, aux) = match kind {
                FactorKind::SensorNoise => (uniform(rng, cfg.noise_scale), [0.0; 3]),
                FactorKind::ExternalForce => (uniform(rng, cfg.kick_speed), [0.0; 3]),
                FactorKind::FootSlip => {
                    let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    (cfg.slip_speed, [dir, SLIP_FRICTION, 0.0])
                }
                FactorKind::FootTrip => (uniform(rng, cfg.trip_height), [0.0; 3]),
                FactorKind::SystemDelay => (uniform(rng, cfg.delay_s), [0.0; 3]),
                FactorKind::DynamicMismatch => {
                    let kp = uniform(rng, cfg.gain_scale);
                    let kd = uniform(rng, cfg.gain_scale);
                    let com = uniform(rng, [-cfg.com_offset, cfg.com_offset]);
                    (kp, [kd, com, 0.0])
                }
            };
            FailureFactor {
                kind,
                onset_s,
                magnitude,
                aux,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn draws_are_distinct_and_in_range() {
        let cfg = DatagenConfig::default();
        let mut rng = Rng::seed_from_u64(3);
        let mut seen = [0usize; 6];
        for _ in 0..2000 {
            let f = inject_failures(&cfg, &mut rng);
            assert!((1..=3).contains(&f.len()));
            for w in f.windows(2) {
                assert!(w[0].kind < w[1].kind);
            }
            for x in &f {
                seen[x.kind.code() as usize] += 1;
                assert!(x.onset_s >= 2.0 && x.onset_s <= 4.0);
                match x.kind {
                    FactorKind::SensorNoise => assert!((2.0..=10.0).contains(&x.magnitude)),
                    FactorKind::ExternalForce => assert!(x.magnitude.abs() <= 2.0),
                    FactorKind::FootTrip => assert!((0.0..=0.15).contains(&x.magnitude)),
                    FactorKind::SystemDelay => assert!((0.0..=0.2).contains(&x.magnitude)),
                    FactorKind::DynamicMismatch => {
                        assert!((0.2..=3.0).contains(&x.magnitude));
                        assert!(x.aux[1].abs() <= 0.1);
                    }
                    FactorKind::FootSlip => assert_eq!(x.magnitude, 1.0),
                }
            }
        }
        assert!(seen.iter().all(|n| *n > 400), "{seen:?}");
    }

    #[test]
    fn zero_weight_kind_never_drawn() {
        let mut cfg = DatagenConfig::default();
        cfg.factor_weights[4] = 0.0;
        let mut rng = Rng::seed_from_u64(9);
        for _ in 0..500 {
            assert!(inject_failures(&cfg, &mut rng).iter().all(|f| f.kind != FactorKind::SystemDelay));
        }
    }
}

use fallguard::datagen::{
    generate_dataset, read_dataset, rollout_fall, segment, write_dataset, FactorKind, FailureFactor, Label,
    RolloutOutcome, Variant,
};
use fallguard::PipelineConfig;

fn kick(v: f64, at: f64) -> Vec<FailureFactor> {
    vec![FailureFactor {
        kind: FactorKind::ExternalForce,
        onset_s: at,
        magnitude: v,
        aux: [0.0; 3],
    }]
}

#[test]
fn unperturbed_rollouts_never_fall() {
    let cfg = PipelineConfig::default();
    let m = cfg.robot_model();
    for v in [Variant::BalanceA, Variant::GaitB] {
        for seed in 0..4 {
            let out = rollout_fall(&cfg, &m, v, &[], seed).unwrap();
            assert_eq!(out, RolloutOutcome::NoFall, "{v:?} seed {seed}");
        }
    }
}

#[test]
fn backward_kick_causes_a_late_enough_fall() {
    let cfg = PipelineConfig::default();
    let m = cfg.robot_model();
    for v in [Variant::BalanceA, Variant::GaitB] {
        let RolloutOutcome::Fell(t) = rollout_fall(&cfg, &m, v, &kick(-2.0, 1.0), 5).unwrap() else {
            panic!("{v:?}: no fall after a 2 m/s kick");
        };
        assert!(t.impact > 50, "{}", t.impact);
        // Impact is the first non-foot ground contact; the tail follows it.
        assert_eq!(t.len(), t.impact + 25);
        let state = t.state(t.impact);
        assert!(state.base_pose[2] < 0.0, "fell backwards");
    }
}

#[test]
fn rollouts_are_bit_identical_for_a_seed() {
    let cfg = PipelineConfig::default();
    let m = cfg.robot_model();
    let a = rollout_fall(&cfg, &m, Variant::GaitB, &kick(1.5, 2.0), 11).unwrap();
    let b = rollout_fall(&cfg, &m, Variant::GaitB, &kick(1.5, 2.0), 11).unwrap();
    assert_eq!(a, b);
}

#[test]
fn small_dataset_split_labels_and_file_round_trip() {
    let mut cfg = PipelineConfig::default();
    cfg.datagen.n_trajectories = 10;
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.train().len(), 8);
    assert_eq!(ds.val().len(), 2);
    for t in &ds.trajectories {
        let l = segment(t.impact, t.len(), 5).unwrap();
        assert_eq!(l.labels, t.labels);
        assert!(t.labels.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(t.labels[t.impact], Label::Falling);
        assert!((1..=3).contains(&t.factors.len()) || t.factors.is_empty());
        for f in &t.factors {
            match f.kind {
                FactorKind::ExternalForce => assert!(f.magnitude.abs() <= 2.0),
                FactorKind::SensorNoise => assert!((2.0..=10.0).contains(&f.magnitude)),
                FactorKind::FootTrip => assert!((0.0..=0.15).contains(&f.magnitude)),
                FactorKind::SystemDelay => assert!((0.0..=0.2).contains(&f.magnitude)),
                FactorKind::DynamicMismatch => assert!((0.2..=3.0).contains(&f.magnitude)),
                FactorKind::FootSlip => assert_eq!(f.magnitude, 1.0),
            }
        }
    }
    let again = generate_dataset(&cfg).unwrap();
    assert_eq!(ds, again);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.fgd");
    write_dataset(&ds, &p).unwrap();
    assert_eq!(read_dataset(&p).unwrap(), ds);
}

use fallguard::config::Randomization;
use fallguard::datagen::generate_dataset;
use fallguard::eval::{score_trajectory, tilted_start, MetricsAccumulator};
use fallguard::nn::Checkpoint;
use fallguard::physics::{pd_torques, step, CollisionGeometry, SimState};
use fallguard::predictor::{train_predictor, Arch, FallPredictor, LabelRule};
use fallguard::rl::{self, ActorCritic, CriticObservation, ObsHistory};
use fallguard::rng::stream;
use fallguard::PipelineConfig;
use proptest::prelude::*;

fn policy(cfg: &PipelineConfig) -> ActorCritic {
    let nj = cfg.robot_model().n_joints();
    ActorCritic::new(rl::actor_dim(nj), rl::critic_dim(nj), nj, &cfg.ppo, &mut stream(3, "test", 0)).unwrap()
}

fn actor_obs(s: &SimState, cfg: &PipelineConfig) -> rl::ActorObservation {
    let m = cfg.robot_model();
    let quiet = Randomization::fixed(&cfg.physics);
    let mut h = ObsHistory::new();
    h.push(rl::sense_frame(s, &m, &vec![0.0; m.n_joints()], &quiet, &mut stream(0, "obs", 0)));
    h.actor()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn actor_never_sees_privileged_state(dx in -5.0..5.0f64, dz in 0.0..2.0f64, vx in -3.0..3.0f64, vz in -3.0..3.0f64) {
        let cfg = PipelineConfig::default();
        let m = cfg.robot_model();
        let ac = policy(&cfg);
        let a = SimState::standing(&m);
        let mut b = a.clone();
        b.base_pose[0] += dx;
        b.base_pose[1] += dz;
        b.base_vel[0] = vx;
        b.base_vel[1] = vz;
        let (oa, ob) = (actor_obs(&a, &cfg), actor_obs(&b, &cfg));
        prop_assert_eq!(&oa, &ob);
        prop_assert_eq!(ac.act_mean(&oa).unwrap(), ac.act_mean(&ob).unwrap());
        // The critic does see it.
        let ca = CriticObservation { actor: oa, privileged: rl::privileged(&a, &m, 0.0) };
        let cb = CriticObservation { actor: ob, privileged: rl::privileged(&b, &m, 0.0) };
        prop_assume!(dz.abs() + vx.abs() + vz.abs() > 1e-3);
        prop_assert_ne!(ca.flat(), cb.flat());
    }

    #[test]
    fn peak_contact_bounds_every_sampled_frame(pitch in -1.4..1.4f64, rate in -2.0..2.0f64, seed in 0u64..100) {
        let cfg = PipelineConfig::default();
        let m = cfg.robot_model();
        let w = cfg.world();
        let start = tilted_start(&m, pitch, rate, 0.1, &mut stream(seed, "tilt", 0));
        let mut s = start.state;
        let targets = s.q.clone();
        let mut acc = MetricsAccumulator::new(w.dt);
        let mut frame_max = 0.0f64;
        for _ in 0..200 {
            let tau = pd_torques(&targets, &s, &m, w.peak_factor).unwrap();
            let (n, r) = step(&s, &tau, &m, CollisionGeometry::Full, &w).unwrap();
            acc.observe(&m, &n, &r);
            let (all, _) = r.link_forces(m.n_links());
            for (k, f) in all.iter().enumerate() {
                if !m.links[k].is_foot {
                    frame_max = frame_max.max(*f);
                }
            }
            s = n;
        }
        let rep = acc.finish();
        prop_assert!(rep.f_contact_max >= frame_max);
        prop_assert!(rep.values().iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn policy_checkpoint_round_trip_preserves_outputs() {
    let cfg = PipelineConfig::default();
    let ac = policy(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.ckpt");
    ac.to_checkpoint([1; 32], 2).save(&p).unwrap();
    let (back, stage) = ActorCritic::from_checkpoint(&Checkpoint::load(&p).unwrap()).unwrap();
    assert_eq!(stage, 2);
    let m = cfg.robot_model();
    let o = actor_obs(&SimState::standing(&m), &cfg);
    assert_eq!(ac.act_mean(&o).unwrap(), back.act_mean(&o).unwrap());
}

#[test]
fn stored_trajectory_scores_are_pure() {
    let mut cfg = PipelineConfig::default();
    cfg.datagen.n_trajectories = 2;
    let ds = generate_dataset(&cfg).unwrap();
    let m = cfg.robot_model();
    for t in &ds.trajectories {
        let a = score_trajectory(t, &cfg, &m);
        assert_eq!(a, score_trajectory(t, &cfg, &m));
        assert_eq!(a.len(), t.len());
        assert!(a.iter().all(|r| r.total <= 0.0));
    }
}

#[test]
fn predictor_streaming_matches_sequence_and_f32_copy() {
    let mut cfg = PipelineConfig::default();
    cfg.datagen.n_trajectories = 6;
    cfg.predictor.epochs = 1;
    cfg.predictor.hidden = 8;
    let ds = generate_dataset(&cfg).unwrap();
    let dt = cfg.physics.control_dt();
    let rule = LabelRule::from_config(&cfg.predictor);
    let (pred, log) = train_predictor(&ds, &cfg.predictor, Arch::Gru, &rule, 1, dt).unwrap();
    assert!(log.epoch_loss[0].is_finite());
    let ck = pred.to_checkpoint(cfg.digest(), &rule);
    let (back, rule2) = FallPredictor::from_checkpoint(&ck).unwrap();
    assert_eq!(rule, rule2);
    let t = &ds.val()[0];
    let probs = pred.probabilities(t, t.len()).unwrap();
    assert_eq!(probs, back.probabilities(t, t.len()).unwrap());
    let mut st = pred.new_stream();
    let mut f32p = pred.to_f32().unwrap();
    for (i, p) in probs.iter().enumerate() {
        let x: Vec<f64> = t.obs(i).iter().map(|v| *v as f64).collect();
        let (q, _) = pred.predict_stream(&x, &mut st).unwrap();
        assert!((q - p).abs() < 1e-12, "frame {i}: {q} vs {p}");
        let (q32, _) = f32p.step(t.obs(i)).unwrap();
        assert!((q32 as f64 - p).abs() < 1e-3, "frame {i}: f32 {q32} vs {p}");
    }
    let mut bad = vec![0.0; pred.input_dim()];
    bad[0] = f64::NAN;
    assert!(pred.predict_stream(&bad, &mut pred.new_stream()).is_err());
}

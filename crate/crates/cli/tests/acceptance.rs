//! End-to-end exit criteria. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) before asserting.
//!
//! The desk-scale criteria share one dataset, predictor and pair of
//! policies built from `configs/desk.toml`.

#[path = "../../core/tests/support/conservation.rs"]
mod conservation;
#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;
#[path = "../../core/tests/support/reward_oracle.rs"]
mod oracle;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use fallguard::datagen::{generate_dataset, Dataset, Variant};
use fallguard::eval::{self, Baseline, Controller, SuiteSummary};
use fallguard::predictor::{ablation_configs, ablation_grid, train_predictor, Arch, FallPredictor, LabelRule};
use fallguard::rl::{train_policy, ActorCritic, Stage, StartPool};
use fallguard::rng::derive_seed;
use fallguard::{default_model, PipelineConfig};

fn report(id: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] criterion {id}: {verdict} | {detail}");
}

/// Criteria run one at a time so their wall-clock budgets are measured
/// without contention.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

struct Desk {
    cfg: PipelineConfig,
    ds: Dataset,
    pred: FallPredictor,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = PipelineConfig::load(&config_path("desk.toml")).unwrap();
        let ds = generate_dataset(&cfg).unwrap();
        let rule = LabelRule::from_config(&cfg.predictor);
        let seed = derive_seed(cfg.seed, "predictor", 0);
        let (pred, _) = train_predictor(&ds, &cfg.predictor, Arch::Gru, &rule, seed, cfg.physics.control_dt()).unwrap();
        Desk { cfg, ds, pred }
    })
}

struct Policies {
    stage12: ActorCritic,
    suite: SuiteSummary,
}

fn policies() -> &'static Policies {
    static POL: OnceLock<Policies> = OnceLock::new();
    POL.get_or_init(|| {
        let d = desk();
        let (cfg, m) = (&d.cfg, d.cfg.robot_model());
        let cdt = cfg.physics.control_dt();
        let t = Instant::now();
        let train = StartPool::from_predictor(d.ds.train(), &d.pred, cdt, &m).unwrap();
        let (stage1, _) = train_policy(cfg, Stage::One, None, None, cfg.seed, |_| {}).unwrap();
        let (stage12, _) = train_policy(cfg, Stage::Two, Some(stage1.clone()), Some(&train), cfg.seed, |_| {}).unwrap();
        let _ = writeln!(std::io::stderr(), "[acceptance] policy training took {:.0} s", t.elapsed().as_secs_f64());
        let val = StartPool::from_predictor(d.ds.val(), &d.pred, cdt, &m).unwrap();
        let starts = eval::fall_starts(&val, cfg.eval.n_trials, cfg).unwrap();
        let ctrls = vec![
            ("stage12".to_string(), Controller::Policy(&stage12)),
            ("stage1".to_string(), Controller::Policy(&stage1)),
            ("damping".to_string(), Controller::Baseline(Baseline::Damping, Variant::BalanceA)),
        ];
        let suite = eval::evaluate_suite(&ctrls, &starts, cfg, derive_seed(cfg.seed, "evaluate", 0)).unwrap();
        for c in &suite.controllers {
            let _ = writeln!(
                std::io::stderr(),
                "[acceptance] {:8} n {} tau {:.1} f_joint {:.0} f_contact {:.0} impulse {:.2} illegal {:.3}",
                c.name,
                c.n_valid,
                c.metric("tau_max"),
                c.metric("f_joint_max"),
                c.metric("f_contact_max"),
                c.metric("impulse_j"),
                c.illegal_rate()
            );
        }
        Policies { stage12, suite }
    })
}

#[test]
fn criterion_01_reward_matches_oracle() {
    let _serial = serial();
    let t = Instant::now();
    let worst = oracle::max_reward_disagreement(&default_model(), 1000, 2024);
    let secs = t.elapsed().as_secs_f64();
    let pass = worst.iter().all(|w| *w <= 1e-9) && secs < 5.0;
    report("1", pass, &format!("max rel err contact/joint/torque/total {:.1e} {:.1e} {:.1e} {:.1e} in {secs:.2} s", worst[0], worst[1], worst[2], worst[3]));
    assert!(pass);
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let _serial = serial();
    let t = Instant::now();
    let gru = (0..100).map(gradcheck::gru_case).fold(0.0f64, f64::max);
    let mlp = (0..100).map(|s| gradcheck::mlp_case(50_000 + s)).fold(0.0f64, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = gru < 1e-4 && mlp < 1e-4 && secs < 120.0;
    report("2", pass, &format!("GRU {gru:.1e}, MLP {mlp:.1e} over 100 cases each in {secs:.1} s"));
    assert!(pass);
}

#[test]
fn criterion_03_physics_conserves() {
    let _serial = serial();
    let t = Instant::now();
    let drift = conservation::free_flight_drift();
    let (j, _, want) = conservation::drop_impulse(0.2, 1.0);
    let err = (j - want).abs() / want;
    let secs = t.elapsed().as_secs_f64();
    let pass = drift < 1e-3 && err < 0.1 && secs < 10.0;
    report("3", pass, &format!("energy drift {:.3}%, drop impulse {j:.4} vs {want:.4} N·s ({:.1}%)", 100.0 * drift, 100.0 * err));
    assert!(pass);
}

#[test]
fn criterion_04_predictor_ablation_directionality() {
    let _serial = serial();
    let d = desk();
    let t = Instant::now();
    let (n_train, n_val) = (d.ds.train().len(), d.ds.val().len());
    let seed = derive_seed(d.cfg.seed, "predictor", 0);
    let rows = ablation_grid(&d.ds, &d.cfg.predictor, &ablation_configs(), seed, d.cfg.physics.control_dt()).unwrap();
    let row = |id: &str| rows.iter().find(|r| r.config.id == id).unwrap();
    for r in &rows {
        let _ = writeln!(
            std::io::stderr(),
            "[acceptance] {:22} FAR {:.3}% LT {:.3} s miss {:.3}",
            r.config.id,
            100.0 * r.eval.far,
            r.eval.lt_mean_s,
            r.eval.miss_rate
        );
    }
    let (un, ma) = (row("gru_unmasked_t2_0.2"), row("gru_masked_t2_0.2"));
    let a = ma.eval.far < un.eval.far;
    let lt: Vec<f64> = ["gru_masked_t2_0.1", "gru_masked_t2_0.2", "gru_masked_t2_0.4"].iter().map(|id| row(id).eval.lt_mean_s).collect();
    let b = lt[0] < lt[1] && lt[1] < lt[2];
    let c = rows
        .iter()
        .filter(|r| r.config.rule.masked)
        .any(|r| r.eval.far <= 0.01 && r.eval.lt_mean_s >= 0.2);
    let secs = t.elapsed().as_secs_f64();
    report(
        "4a",
        a,
        &format!("masked FAR {:.3}% vs unmasked {:.3}% at t2 = T-0.2 s", 100.0 * ma.eval.far, 100.0 * un.eval.far),
    );
    report("4b", b, &format!("LT over t2 offsets 0.1/0.2/0.4 s: {lt:.3?}"));
    report("4c", c, "some masked config has FAR <= 1% and LT >= 0.2 s");
    let sized = n_train == 2048 && n_val == 512 && secs < 1800.0;
    report("4", a && b && c && sized, &format!("{n_train} train / {n_val} val, grid {secs:.0} s"));
    assert!(sized, "dataset split {n_train}/{n_val} or runtime {secs:.0} s");
    assert!(a && b && c, "ablation directionality: a {a} b {b} c {c}");
}

#[test]
fn criterion_05_predictor_latency() {
    let _serial = serial();
    let d = desk();
    let mut f = d.pred.to_f32().unwrap();
    let frames: Vec<&[f32]> = d.ds.val().iter().flat_map(|t| (0..t.len()).map(move |i| t.obs(i))).take(4096).collect();
    let n = 100_000;
    let t = Instant::now();
    let mut acc = 0.0f32;
    for i in 0..n {
        if i % 500 == 0 {
            f.reset();
        }
        acc += f.step(frames[i % frames.len()]).unwrap().0;
    }
    let per_ms = t.elapsed().as_secs_f64() * 1e3 / n as f64;
    assert!(acc.is_finite());
    let pass = per_ms < 0.5;
    report("5", pass, &format!("{:.4} ms per frame over {n} frames (f32, one thread)", per_ms));
    assert!(pass);
}

#[test]
fn criterion_06_policy_beats_damping() {
    let _serial = serial();
    let p = policies();
    let s = &p.suite;
    let n = s.get("stage12").unwrap().n_valid;
    let imp = |m: &str| s.improvement("stage12", "damping", m).unwrap_or(f64::NEG_INFINITY);
    let (fc, ill) = (imp("f_contact_max"), imp("illegal_contact"));
    let (tau, fj, j) = (imp("tau_max"), imp("f_joint_max"), imp("impulse_j"));
    let pass = n >= 500 && fc >= 25.0 && ill >= 50.0 && tau > 0.0 && fj > 0.0 && j > 0.0;
    report(
        "6",
        pass,
        &format!("{n} falls; reduction vs damping: f_contact {fc:.1}%, illegal {ill:.1}%, tau {tau:.1}%, f_joint {fj:.1}%, impulse {j:.1}%"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_curriculum_ordering() {
    let _serial = serial();
    let s = &policies().suite;
    let (a, b) = (s.get("stage12").unwrap(), s.get("stage1").unwrap());
    let fc = a.metric("f_contact_max") < b.metric("f_contact_max");
    let ill = a.illegal_rate() < b.illegal_rate();
    report(
        "7",
        fc && ill,
        &format!(
            "f_contact {:.0} vs {:.0} N, illegal {:.3} vs {:.3} (stage 1+2 vs stage 1)",
            a.metric("f_contact_max"),
            b.metric("f_contact_max"),
            a.illegal_rate(),
            b.illegal_rate()
        ),
    );
    assert!(fc && ill);
}

#[test]
fn criterion_08_directional_sweep() {
    let _serial = serial();
    let p = policies();
    let cfg = &desk().cfg;
    let cells = eval::directional_sweep(
        Controller::Policy(&p.stage12),
        Controller::Baseline(Baseline::Damping, Variant::BalanceA),
        cfg,
        derive_seed(cfg.seed, "sweep", 0),
    )
    .unwrap();
    let impacted = cells.iter().filter(|c| c.both_impacted).count();
    let rate = eval::sweep_win_rate(&cells);
    let pass = impacted > 0 && rate >= 0.7;
    report("8", pass, &format!("f_contact improved in {:.1}% of {impacted} impacted cells", 100.0 * rate));
    assert!(pass);
}

#[test]
fn criterion_09_generalizes_to_other_gait() {
    let _serial = serial();
    let p = policies();
    let d = desk();
    let mut cfg = d.cfg.clone();
    cfg.datagen.variant = "gait-B".into();
    cfg.datagen.n_trajectories = 640;
    let ds = generate_dataset(&cfg).unwrap();
    let pool = StartPool::from_predictor(&ds.trajectories, &d.pred, cfg.physics.control_dt(), &cfg.robot_model()).unwrap();
    let starts = eval::fall_starts(&pool, cfg.eval.generalization_trials, &cfg).unwrap();
    let ctrls = vec![
        ("stage12".to_string(), Controller::Policy(&p.stage12)),
        ("damping".to_string(), Controller::Baseline(Baseline::Damping, Variant::GaitB)),
    ];
    let s = eval::evaluate_suite(&ctrls, &starts, &cfg, derive_seed(cfg.seed, "generalize", 0)).unwrap();
    let fc = s.improvement("stage12", "damping", "f_contact_max").unwrap_or(f64::NEG_INFINITY);
    let fj = s.improvement("stage12", "damping", "f_joint_max").unwrap_or(f64::NEG_INFINITY);
    let pass = fc >= 15.0 && fj >= 15.0;
    report("9", pass, &format!("gait-B falls ({}): f_contact -{fc:.1}%, f_joint -{fj:.1}% vs damping", starts.len()));
    assert!(pass);
}

fn fallguard(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_fallguard"))
        .current_dir(dir)
        .args(args)
        .args(["--config", config_path("smoke.toml").to_str().unwrap(), "--jobs", "1"])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "fallguard {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn smoke_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fallguard(dir, &["gen-data", "--out", "data.fgd"]);
    fallguard(dir, &["train-predictor", "--data", "data.fgd", "--out", "pred.ckpt", "--curve", "pred_curve.csv"]);
    fallguard(dir, &["eval-predictor", "--weights", "pred.ckpt", "--data", "data.fgd", "--csv", "pred_eval.csv"]);
    fallguard(dir, &["train-policy", "--stage", "1", "--out", "s1.ckpt", "--curve", "s1_curve.csv"]);
    fallguard(
        dir,
        &["evaluate", "--policy", "stage1=s1.ckpt", "--data", "data.fgd", "--predictor", "pred.ckpt", "--csv", "eval.csv"],
    );
    let mut csvs: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    csvs.sort();
    csvs
}

#[test]
fn criterion_10_pipeline_is_deterministic() {
    let _serial = serial();
    let t = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = smoke_pipeline(a.path());
    let second = smoke_pipeline(b.path());
    let secs = t.elapsed().as_secs_f64();
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    let same = first == second && first.len() == 4;
    let pass = same && secs < 2.0 * 900.0;
    report("10", pass, &format!("{} CSVs {names:?} byte-identical: {same}; two runs in {secs:.0} s", first.len()));
    assert!(same, "CSV outputs differ between runs");
    assert!(secs < 2.0 * 900.0, "smoke runs took {secs:.0} s");
}

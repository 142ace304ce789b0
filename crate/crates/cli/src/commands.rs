use std::path::{Path, PathBuf};

use fallguard::datagen::{generate_dataset, read_dataset, write_dataset, Dataset, Variant};
use fallguard::eval::{self, Baseline, Controller, SuiteSummary};
use fallguard::nn::Checkpoint;
use fallguard::predictor::{
    ablation_configs, ablation_grid, evaluate_far_lt, far_on_rule, train_predictor, AblationRow, Arch, FallPredictor,
    LabelRule,
};
use fallguard::rl::{train_policy, ActorCritic, CurveRow, Stage, StartPool};
use fallguard::rng::derive_seed;
use fallguard::{Error, PipelineConfig, Result};

use crate::manifest::RunManifest;
use crate::{ArchArg, Command, Common, EvalArgs, VariantArg};

/// Loaded config, effective seed and a fresh manifest.
struct Ctx {
    cfg: PipelineConfig,
    seed: u64,
    manifest: RunManifest,
}

fn setup(name: &str, c: &Common) -> Result<Ctx> {
    if c.jobs > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(c.jobs).build_global();
    }
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let manifest = RunManifest::new(name, &c.config, cfg.digest(), cfg.seed);
    Ok(Ctx {
        seed: cfg.seed,
        cfg,
        manifest,
    })
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn load_dataset(ctx: &mut Ctx, path: &Path) -> Result<Dataset> {
    ctx.manifest.input(path).map_err(|e| io_err(path, e))?;
    read_dataset(path)
}

fn load_checkpoint(ctx: &mut Ctx, path: &Path) -> Result<Checkpoint> {
    ctx.manifest.input(path).map_err(|e| io_err(path, e))?;
    Checkpoint::load(path)
}

fn load_predictor(ctx: &mut Ctx, path: &Path) -> Result<(FallPredictor, LabelRule)> {
    FallPredictor::from_checkpoint(&load_checkpoint(ctx, path)?)
}

fn save_checkpoint(ctx: &mut Ctx, mut ck: Checkpoint, path: &Path) -> Result<()> {
    ck.set_meta("manifest", crate::manifest::manifest_path(path).display());
    ck.save(path)?;
    ctx.manifest.output(path).map_err(|e| io_err(path, e))
}

fn write_csv(ctx: &mut Ctx, path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    ctx.manifest.output(path).map_err(|e| io_err(path, e))
}

fn finish(ctx: Ctx) -> Result<()> {
    for p in ctx.manifest.finish()? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            common,
            n,
            variant,
            out,
        } => gen_data(&common, n, variant, &out),
        Command::TrainPredictor {
            common,
            data,
            out,
            arch,
            curve,
            ablation,
        } => train_pred(&common, &data, out.as_deref(), arch, curve.as_deref(), ablation.as_deref()),
        Command::EvalPredictor {
            common,
            weights,
            data,
            csv,
        } => eval_pred(&common, &weights, &data, &csv),
        Command::TrainPolicy {
            common,
            stage,
            init,
            data,
            predictor,
            out,
            curve,
        } => train_pol(&common, stage, init.as_deref(), data.as_deref(), predictor.as_deref(), &out, curve),
        Command::Evaluate(a) => evaluate(a, false),
        Command::Generalize(a) => evaluate(a, true),
        Command::Sweep { common, policy, csv } => sweep(&common, &policy, &csv),
        Command::Score {
            common,
            data,
            limit,
            csv,
        } => score(&common, &data, limit, &csv),
        Command::Report { common, dir, out } => {
            let mut ctx = setup("report", &common)?;
            let out = out.unwrap_or_else(|| dir.join("report.csv"));
            crate::report::report(&dir, &out, &mut ctx.manifest)?;
            finish(ctx)
        }
    }
}

fn gen_data(common: &Common, n: Option<usize>, variant: Option<VariantArg>, out: &Path) -> Result<()> {
    let mut ctx = setup("gen-data", common)?;
    if let Some(n) = n {
        ctx.cfg.datagen.n_trajectories = n;
    }
    if let Some(v) = variant {
        ctx.cfg.datagen.variant = match v {
            VariantArg::BalanceA => Variant::BalanceA,
            VariantArg::GaitB => Variant::GaitB,
        }
        .name()
        .to_string();
    }
    // Overrides change the effective config, so hash that.
    ctx.manifest.config_hash = hex::encode(ctx.cfg.digest());
    let ds = generate_dataset(&ctx.cfg)?;
    write_dataset(&ds, out)?;
    ctx.manifest.output(out).map_err(|e| io_err(out, e))?;
    ctx.manifest.note("n_trajectories", ds.trajectories.len() as f64);
    ctx.manifest.note("n_train", ds.n_train as f64);
    finish(ctx)
}

const PREDICTOR_HEADER: [&str; 9] = [
    "config_id",
    "t1_rule",
    "t2_offset_s",
    "masked",
    "far",
    "lt_mean_s",
    "miss_rate",
    "far_rule",
    "final_loss",
];

fn rule_fields(rule: &LabelRule) -> [String; 3] {
    [
        rule.t1.describe(),
        rule.t2_offset_s().map(|s| format!("{s}")).unwrap_or_else(|| rule.t2.describe()),
        rule.masked.to_string(),
    ]
}

fn ablation_record(r: &AblationRow) -> Vec<String> {
    let mut v = vec![r.config.id.clone()];
    v.extend(rule_fields(&r.config.rule));
    v.extend([
        format!("{:.8}", r.eval.far),
        format!("{:.6}", r.eval.lt_mean_s),
        format!("{:.6}", r.eval.miss_rate),
        format!("{:.8}", r.far_rule),
        format!("{:.6}", r.final_loss),
    ]);
    v
}

fn train_pred(
    common: &Common,
    data: &Path,
    out: Option<&Path>,
    arch: ArchArg,
    curve: Option<&Path>,
    ablation: Option<&Path>,
) -> Result<()> {
    let mut ctx = setup("train-predictor", common)?;
    let ds = load_dataset(&mut ctx, data)?;
    let dt = ctx.cfg.physics.control_dt();
    let seed = derive_seed(ctx.seed, "predictor", 0);
    ctx.manifest.seed("predictor", seed);
    if let Some(path) = ablation {
        let rows = ablation_grid(&ds, &ctx.cfg.predictor, &ablation_configs(), seed, dt)?;
        for r in &rows {
            ctx.manifest.note(&format!("{}_far", r.config.id), r.eval.far);
            ctx.manifest.note(&format!("{}_lt_s", r.config.id), r.eval.lt_mean_s);
        }
        write_csv(&mut ctx, path, &PREDICTOR_HEADER, rows.iter().map(ablation_record))?;
    }
    if let Some(out) = out {
        let arch = match arch {
            ArchArg::Gru => Arch::Gru,
            ArchArg::Mlp => Arch::WindowMlp,
        };
        let rule = LabelRule::from_config(&ctx.cfg.predictor);
        let (pred, log) = train_predictor(&ds, &ctx.cfg.predictor, arch, &rule, seed, dt)?;
        let ck = pred.to_checkpoint(ctx.cfg.digest(), &rule);
        save_checkpoint(&mut ctx, ck, out)?;
        if let Some(c) = curve {
            let rows = log
                .epoch_loss
                .iter()
                .enumerate()
                .map(|(i, l)| vec![(i + 1).to_string(), format!("{l:.8e}")]);
            write_csv(&mut ctx, c, &["epoch", "loss"], rows)?;
        }
        if let Some(l) = log.epoch_loss.last() {
            ctx.manifest.note("final_loss", *l);
        }
    }
    finish(ctx)
}

fn eval_pred(common: &Common, weights: &Path, data: &Path, csv: &Path) -> Result<()> {
    let mut ctx = setup("eval-predictor", common)?;
    let (pred, rule) = load_predictor(&mut ctx, weights)?;
    let ds = load_dataset(&mut ctx, data)?;
    let dt = ctx.cfg.physics.control_dt();
    let val = ds.val();
    let ev = evaluate_far_lt(&pred, val, dt)?;
    let probs = val
        .iter()
        .map(|t| pred.probabilities(t, (t.impact + 1).min(t.len())))
        .collect::<Result<Vec<_>>>()?;
    let far_rule = far_on_rule(val, &probs, &rule, dt);
    let row = AblationRow {
        config: fallguard::predictor::AblationConfig {
            id: weights.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            arch: pred.arch(),
            rule,
        },
        far_rule,
        eval: ev,
        final_loss: f64::NAN,
    };
    ctx.manifest.note("far", row.eval.far);
    ctx.manifest.note("lt_mean_s", row.eval.lt_mean_s);
    ctx.manifest.note("miss_rate", row.eval.miss_rate);
    let mut rec = ablation_record(&row);
    rec[8] = String::new();
    write_csv(&mut ctx, csv, &PREDICTOR_HEADER, [rec])?;
    finish(ctx)
}

#[derive(Clone, Copy)]
enum Split {
    Train,
    Val,
    All,
}

fn start_pool(ctx: &mut Ctx, data: &Path, predictor: &Path, split: Split) -> Result<(StartPool, Variant)> {
    let ds = load_dataset(ctx, data)?;
    let (pred, _) = load_predictor(ctx, predictor)?;
    let trajs = match split {
        Split::Train => ds.train(),
        Split::Val => ds.val(),
        Split::All => &ds.trajectories[..],
    };
    let variant = trajs
        .first()
        .map(|t| t.variant)
        .ok_or_else(|| Error::Data(format!("{}: no trajectories", data.display())))?;
    let pool = StartPool::from_predictor(trajs, &pred, ctx.cfg.physics.control_dt(), &ctx.cfg.robot_model())?;
    Ok((pool, variant))
}

fn train_pol(
    common: &Common,
    stage: u8,
    init: Option<&Path>,
    data: Option<&Path>,
    predictor: Option<&Path>,
    out: &Path,
    curve: Option<PathBuf>,
) -> Result<()> {
    let mut ctx = setup("train-policy", common)?;
    let stage = Stage::parse(stage).expect("clap restricts the stage");
    let init = match init {
        Some(p) => Some(ActorCritic::from_checkpoint(&load_checkpoint(&mut ctx, p)?)?.0),
        None => None,
    };
    let pool = match (stage, data, predictor) {
        (Stage::Two, Some(d), Some(p)) => Some(start_pool(&mut ctx, d, p, Split::Train)?.0),
        (Stage::Two, _, _) => return Err(Error::Precondition("stage 2 needs --data and --predictor".into())),
        _ => None,
    };
    ctx.manifest.seed("stage", derive_seed(ctx.seed, "stage", stage.number() as u64));
    let (ac, rows) = train_policy(&ctx.cfg, stage, init, pool.as_ref(), ctx.seed, |_| {})?;
    let ck = ac.to_checkpoint(ctx.cfg.digest(), stage.number());
    save_checkpoint(&mut ctx, ck, out)?;
    let curve = curve.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".curve.csv");
        PathBuf::from(s)
    });
    if let Some(last) = rows.last() {
        ctx.manifest.note("final_reward", last.reward.total);
    }
    write_csv(&mut ctx, &curve, &CurveRow::HEADER, rows.iter().map(CurveRow::record))?;
    finish(ctx)
}

/// `NAME=PATH`, or a bare path named after the checkpoint's stage.
fn policy_arg(ctx: &mut Ctx, arg: &str) -> Result<(String, ActorCritic)> {
    let (name, path) = match arg.split_once('=') {
        Some((n, p)) => (Some(n.to_string()), p),
        None => (None, arg),
    };
    let (ac, stage) = ActorCritic::from_checkpoint(&load_checkpoint(ctx, Path::new(path))?)?;
    let name = name.unwrap_or_else(|| if stage == 1 { "stage1".into() } else { "stage12".into() });
    Ok((name, ac))
}

fn suite_csv(ctx: &mut Ctx, path: &Path, s: &SuiteSummary) -> Result<()> {
    let mut header = vec!["init_hash", "dt"];
    header.extend(SuiteSummary::HEADER);
    let lead = [hex::encode(&s.init_hash[..8]), format!("{}", s.dt)];
    let rows = s.records().into_iter().map(|r| lead.iter().cloned().chain(r).collect());
    write_csv(ctx, path, &header, rows)
}

fn evaluate(a: EvalArgs, generalize: bool) -> Result<()> {
    let name = if generalize { "generalize" } else { "evaluate" };
    let mut ctx = setup(name, &a.common)?;
    let policies = a
        .policy
        .iter()
        .map(|p| policy_arg(&mut ctx, p))
        .collect::<Result<Vec<_>>>()?;
    let split = if generalize { Split::All } else { Split::Val };
    let (pool, variant) = start_pool(&mut ctx, &a.data, &a.predictor, split)?;
    if generalize && variant == Variant::BalanceA {
        log::warn!("generalize: dataset comes from the training controller");
    }
    let n = a.n.unwrap_or(if generalize {
        ctx.cfg.eval.generalization_trials
    } else {
        ctx.cfg.eval.n_trials
    });
    let starts = eval::fall_starts(&pool, n, &ctx.cfg)?;
    let mut ctrls: Vec<(String, Controller)> =
        policies.iter().map(|(n, ac)| (n.clone(), Controller::Policy(ac))).collect();
    for b in Baseline::ALL {
        ctrls.push((b.name().to_string(), Controller::Baseline(b, variant)));
    }
    let seed = derive_seed(ctx.seed, name, 0);
    ctx.manifest.seed(name, seed);
    let s = eval::evaluate_suite(&ctrls, &starts, &ctx.cfg, seed)?;
    for (p, _) in &policies {
        for m in ["f_contact_max", "f_joint_max", "tau_max", "impulse_j", "illegal_contact"] {
            if let Some(v) = s.improvement(p, Baseline::Damping.name(), m) {
                ctx.manifest.note(&format!("{p}_{m}_vs_damping_pct"), v);
            }
        }
    }
    suite_csv(&mut ctx, &a.csv, &s)?;
    finish(ctx)
}

fn sweep(common: &Common, policy: &Path, csv: &Path) -> Result<()> {
    let mut ctx = setup("sweep", common)?;
    let (_, ac) = policy_arg(&mut ctx, &policy.to_string_lossy())?;
    let seed = derive_seed(ctx.seed, "sweep", 0);
    ctx.manifest.seed("sweep", seed);
    let cells = eval::directional_sweep(
        Controller::Policy(&ac),
        Controller::Baseline(Baseline::Damping, Variant::BalanceA),
        &ctx.cfg,
        seed,
    )?;
    ctx.manifest.note("win_rate", eval::sweep_win_rate(&cells));
    let rows = cells.iter().map(|c| {
        vec![
            format!("{:.6}", c.pitch),
            format!("{:.6}", c.rate),
            format!("{:.6}", c.contact_improvement),
            format!("{:.6}", c.joint_improvement),
            c.both_impacted.to_string(),
        ]
    });
    write_csv(
        &mut ctx,
        csv,
        &["pitch", "rate", "f_contact_improvement_pct", "f_joint_improvement_pct", "both_impacted"],
        rows,
    )?;
    finish(ctx)
}

fn score(common: &Common, data: &Path, limit: Option<usize>, csv: &Path) -> Result<()> {
    let mut ctx = setup("score", common)?;
    let ds = load_dataset(&mut ctx, data)?;
    let model = ctx.cfg.robot_model();
    let n = limit.unwrap_or(ds.trajectories.len()).min(ds.trajectories.len());
    let mut rows = Vec::new();
    for (i, t) in ds.trajectories[..n].iter().enumerate() {
        for (f, r) in eval::score_trajectory(t, &ctx.cfg, &model).iter().enumerate() {
            rows.push(vec![
                i.to_string(),
                f.to_string(),
                format!("{:.6e}", r.total),
                format!("{:.6e}", r.contact),
                format!("{:.6e}", r.joint),
                format!("{:.6e}", r.torque),
                format!("{:.6e}", r.regulation),
            ]);
        }
    }
    write_csv(
        &mut ctx,
        csv,
        &["trajectory", "frame", "reward", "contact", "joint", "torque", "regulation"],
        rows,
    )?;
    finish(ctx)
}

//! GRU fall predictor: masked-segment training, streaming trigger, and
//! false-alarm / lead-time evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::PredictorConfig;
use crate::datagen::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{log_softmax2, Activation, Adam, Checkpoint, Dtype, Gru, GruF32, Mlp, ParamStore, Tensor2};
use crate::rng;

/// Frames concatenated by the sliding-window MLP baseline.
pub const WINDOW: usize = 5;
const THRESHOLD: f64 = 0.5;

/// Where a segment boundary sits relative to the impact frame `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// `⌊2T/3⌋`
    TwoThirds,
    /// `T − round(s / dt)`
    BeforeImpact(f64),
}

impl Boundary {
    pub fn frame(self, impact: usize, control_dt: f64) -> usize {
        match self {
            Self::TwoThirds => 2 * impact / 3,
            Self::BeforeImpact(s) => impact.saturating_sub((s / control_dt).round() as usize),
        }
    }

    pub fn describe(self) -> String {
        match self {
            Self::TwoThirds => "2T/3".into(),
            Self::BeforeImpact(s) => format!("T-{s}s"),
        }
    }

    fn encode(self) -> String {
        match self {
            Self::TwoThirds => "two_thirds".into(),
            Self::BeforeImpact(s) => format!("{s}"),
        }
    }

    fn decode(s: &str) -> Result<Self> {
        if s == "two_thirds" {
            return Ok(Self::TwoThirds);
        }
        s.parse()
            .map(Self::BeforeImpact)
            .map_err(|_| Error::Data(format!("bad boundary `{s}`")))
    }
}

/// Training-label rule: Safe up to `t1`, Falling after `t2`, and the frames
/// between either masked out or labelled Falling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRule {
    pub t1: Boundary,
    pub t2: Boundary,
    pub masked: bool,
}

impl LabelRule {
    pub fn from_config(cfg: &PredictorConfig) -> Self {
        Self {
            t1: Boundary::TwoThirds,
            t2: Boundary::BeforeImpact(cfg.t2_offset_s),
            masked: cfg.mask_ambiguous,
        }
    }

    /// Class targets and loss mask for frames `0..=impact`.
    pub fn targets(&self, impact: usize, control_dt: f64) -> (Vec<u8>, Vec<bool>) {
        let t2 = self.t2.frame(impact, control_dt);
        let t1 = self.t1.frame(impact, control_dt).min(t2);
        let labels = (0..=impact).map(|t| u8::from(t > t1)).collect();
        let mask = (0..=impact).map(|t| !(self.masked && t > t1 && t <= t2)).collect();
        (labels, mask)
    }

    /// Offset of `t2` before impact in seconds, if it is impact-relative.
    pub fn t2_offset_s(&self) -> Option<f64> {
        match self.t2 {
            Boundary::BeforeImpact(s) => Some(s),
            Boundary::TwoThirds => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Gru,
    /// MLP over the last [`WINDOW`] frames.
    WindowMlp,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gru => "gru",
            Self::WindowMlp => "window_mlp",
        }
    }
}

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(trajs: &[Trajectory]) -> Result<Self> {
        let d = trajs.first().ok_or_else(|| Error::Data("no trajectories".into()))?.layout.obs_dim();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0.0;
        for t in trajs {
            for i in 0..=t.impact.min(t.len() - 1) {
                for (k, v) in t.obs(i).iter().enumerate() {
                    sum[k] += *v as f64;
                    sq[k] += (*v as f64) * (*v as f64);
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let inv_std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| 1.0 / (s / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { mean, inv_std })
    }

    pub fn apply(&self, obs: &[f32], out: &mut [f64]) {
        for k in 0..out.len() {
            out[k] = (obs[k] as f64 - self.mean[k]) * self.inv_std[k];
        }
    }

    fn apply64(&self, obs: &[f64], out: &mut [f64]) {
        for k in 0..out.len() {
            out[k] = (obs[k] - self.mean[k]) * self.inv_std[k];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Net {
    Gru(Gru),
    Window(Mlp),
}

/// Latching trigger: fires after `debounce` consecutive positive frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trigger {
    pub debounce: usize,
    streak: usize,
    pub triggered: bool,
}

impl Trigger {
    pub fn new(debounce: usize) -> Self {
        Self {
            debounce: debounce.max(1),
            streak: 0,
            triggered: false,
        }
    }

    pub fn update(&mut self, p_fall: f64) -> bool {
        if p_fall > THRESHOLD {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= self.debounce {
            self.triggered = true;
        }
        self.triggered
    }
}

/// Recurrent state of one streaming session.
#[derive(Debug, Clone)]
pub struct StreamState {
    hidden: Vec<f64>,
    window: Vec<Vec<f64>>,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallPredictor {
    net: Net,
    pub norm: Normalizer,
    pub debounce: usize,
}

fn p_fall(logits: [f64; 2]) -> f64 {
    log_softmax2(logits)[1].exp()
}

impl FallPredictor {
    pub fn arch(&self) -> Arch {
        match self.net {
            Net::Gru(_) => Arch::Gru,
            Net::Window(_) => Arch::WindowMlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.norm.mean.len()
    }

    pub fn new_stream(&self) -> StreamState {
        let hidden = match &self.net {
            Net::Gru(g) => vec![0.0; g.hidden],
            Net::Window(_) => Vec::new(),
        };
        StreamState {
            hidden,
            window: Vec::with_capacity(WINDOW),
            trigger: Trigger::new(self.debounce),
        }
    }

    /// One frame of deployment-time inference: returns `(p_fall, triggered)`.
    pub fn predict_stream(&self, obs: &[f64], st: &mut StreamState) -> Result<(f64, bool)> {
        if obs.len() != self.input_dim() {
            return Err(Error::shape("predictor observation", self.input_dim(), obs.len()));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite observation fed to the fall predictor".into()));
        }
        let mut x = vec![0.0; obs.len()];
        self.norm.apply64(obs, &mut x);
        let p = match &self.net {
            Net::Gru(g) => {
                let (l, h) = g.step(&x, &st.hidden)?;
                st.hidden = h;
                p_fall(l)
            }
            Net::Window(m) => {
                if st.window.is_empty() {
                    st.window = vec![x.clone(); WINDOW];
                } else {
                    st.window.remove(0);
                    st.window.push(x);
                }
                let l = m.forward(&st.window.concat())?;
                p_fall([l[0], l[1]])
            }
        };
        Ok((p, st.trigger.update(p)))
    }

    /// Pre-debounce fall probabilities for the first `n` frames of `traj`.
    pub fn probabilities(&self, traj: &Trajectory, n: usize) -> Result<Vec<f64>> {
        let d = self.input_dim();
        let mut xs = Tensor2::zeros(n, d);
        for i in 0..n {
            self.norm.apply(traj.obs(i), xs.row_mut(i));
        }
        Ok(match &self.net {
            Net::Gru(g) => g.forward(&xs, &vec![0.0; g.hidden])?.logits.into_iter().map(p_fall).collect(),
            Net::Window(m) => {
                let (out, _) = m.forward_batch(&windows(&xs))?;
                (0..n).map(|i| p_fall([out.row(i)[0], out.row(i)[1]])).collect()
            }
        })
    }

    pub fn to_checkpoint(&self, config_hash: [u8; 32], rule: &LabelRule) -> Checkpoint {
        let mut c = Checkpoint::new(config_hash);
        c.set_meta("kind", "fall_predictor");
        c.set_meta("arch", self.arch().name());
        c.set_meta("debounce", self.debounce);
        c.set_meta("t1", rule.t1.encode());
        c.set_meta("t2", rule.t2.encode());
        c.set_meta("masked", rule.masked);
        let d = self.input_dim();
        c.push("norm/mean", vec![d], Dtype::F64, self.norm.mean.clone());
        c.push("norm/inv_std", vec![d], Dtype::F64, self.norm.inv_std.clone());
        match &self.net {
            Net::Gru(g) => c.push_store("net", &g.params, Dtype::F64),
            Net::Window(m) => {
                c.set_meta("sizes", m.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
                c.set_meta("activation", m.act.name());
                c.push_store("net", &m.params, Dtype::F64);
            }
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<(Self, LabelRule)> {
        if c.meta("kind")? != "fall_predictor" {
            return Err(Error::Data("checkpoint does not hold a fall predictor".into()));
        }
        let params = c.store("net")?;
        let net = match c.meta("arch")? {
            "gru" => Net::Gru(Gru::from_params(params)?),
            "window_mlp" => {
                let sizes = c
                    .meta("sizes")?
                    .split(',')
                    .map(|s| s.parse().map_err(|_| Error::Data(format!("bad layer size `{s}`"))))
                    .collect::<Result<Vec<usize>>>()?;
                let act = Activation::parse(c.meta("activation")?)
                    .ok_or_else(|| Error::Data("bad activation in checkpoint".into()))?;
                Net::Window(Mlp::from_params(&sizes, act, params)?)
            }
            other => return Err(Error::Data(format!("unknown predictor arch `{other}`"))),
        };
        let norm = Normalizer {
            mean: c.tensor("norm/mean")?.data.clone(),
            inv_std: c.tensor("norm/inv_std")?.data.clone(),
        };
        let rule = LabelRule {
            t1: Boundary::decode(c.meta("t1")?)?,
            t2: Boundary::decode(c.meta("t2")?)?,
            masked: c.meta_parse("masked")?,
        };
        let p = Self {
            net,
            norm,
            debounce: c.meta_parse("debounce")?,
        };
        let expect = match &p.net {
            Net::Gru(g) => g.input_dim,
            Net::Window(m) => m.input_dim() / WINDOW,
        };
        if expect != p.input_dim() {
            return Err(Error::shape("predictor normalizer", expect, p.input_dim()));
        }
        Ok((p, rule))
    }

    /// Single-precision deployment copy (GRU only).
    pub fn to_f32(&self) -> Result<PredictorF32> {
        let Net::Gru(g) = &self.net else {
            return Err(Error::Precondition("f32 export is only available for the GRU predictor".into()));
        };
        Ok(PredictorF32 {
            gru: g.to_f32(),
            mean: self.norm.mean.iter().map(|v| *v as f32).collect(),
            inv_std: self.norm.inv_std.iter().map(|v| *v as f32).collect(),
            h: vec![0.0; g.hidden],
            x: vec![0.0; g.input_dim],
            trigger: Trigger::new(self.debounce),
        })
    }
}

/// Allocation-free f32 streaming predictor.
#[derive(Debug, Clone)]
pub struct PredictorF32 {
    gru: GruF32,
    mean: Vec<f32>,
    inv_std: Vec<f32>,
    h: Vec<f32>,
    x: Vec<f32>,
    pub trigger: Trigger,
}

impl PredictorF32 {
    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.trigger = Trigger::new(self.trigger.debounce);
    }

    pub fn step(&mut self, obs: &[f32]) -> Result<(f32, bool)> {
        if obs.len() != self.x.len() {
            return Err(Error::shape("predictor observation", self.x.len(), obs.len()));
        }
        for k in 0..obs.len() {
            if !obs[k].is_finite() {
                return Err(Error::Numerical("non-finite observation fed to the fall predictor".into()));
            }
            self.x[k] = (obs[k] - self.mean[k]) * self.inv_std[k];
        }
        let l = self.gru.step(&self.x, &mut self.h);
        let p = 1.0 / (1.0 + (l[0] - l[1]).exp());
        Ok((p, self.trigger.update(p as f64)))
    }
}

/// Row `i` holds frames `i−4..=i` (clamped at the start), oldest first.
fn windows(xs: &Tensor2) -> Tensor2 {
    let d = xs.cols;
    let mut out = Tensor2::zeros(xs.rows, WINDOW * d);
    for i in 0..xs.rows {
        let row = out.row_mut(i);
        for k in 0..WINDOW {
            let src = (i + k + 1).saturating_sub(WINDOW);
            row[k * d..(k + 1) * d].copy_from_slice(xs.row(src));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Frame-weighted mean masked NLL per epoch.
    pub epoch_loss: Vec<f64>,
}

struct Sample {
    xs: Tensor2,
    labels: Vec<u8>,
    mask: Vec<bool>,
    active: usize,
}

fn sample(traj: &Trajectory, norm: &Normalizer, rule: &LabelRule, control_dt: f64) -> Sample {
    let n = (traj.impact + 1).min(traj.len());
    let mut xs = Tensor2::zeros(n, norm.mean.len());
    for i in 0..n {
        norm.apply(traj.obs(i), xs.row_mut(i));
    }
    let (mut labels, mut mask) = rule.targets(traj.impact, control_dt);
    labels.truncate(n);
    mask.truncate(n);
    let active = mask.iter().filter(|m| **m).count();
    Sample {
        xs,
        labels,
        mask,
        active,
    }
}

/// Loss sum and gradient of one sequence, scaled by `1 / total_active`.
fn sequence_grad(net: &Net, s: &Sample, total_active: usize, zero: &ParamStore) -> Result<(f64, ParamStore)> {
    let mut g = zero.clone();
    if s.active == 0 {
        return Ok((0.0, g));
    }
    let scale = s.active as f64 / total_active as f64;
    let loss = match net {
        Net::Gru(gru) => gru.loss_and_grad(&s.xs, &s.labels, &s.mask, scale, &mut g)?.0,
        Net::Window(m) => {
            let rows: Vec<usize> = (0..s.xs.rows).filter(|i| s.mask[*i]).collect();
            let all = windows(&s.xs);
            let mut x = Tensor2::zeros(rows.len(), all.cols);
            for (k, i) in rows.iter().enumerate() {
                x.row_mut(k).copy_from_slice(all.row(*i));
            }
            let (out, cache) = m.forward_batch(&x)?;
            let mut dout = Tensor2::zeros(rows.len(), 2);
            let mut sum = 0.0;
            let k = 1.0 / total_active as f64;
            for (r, i) in rows.iter().enumerate() {
                let ls = log_softmax2([out.row(r)[0], out.row(r)[1]]);
                let y = s.labels[*i] as usize;
                sum -= ls[y];
                let d = dout.row_mut(r);
                d[0] = ls[0].exp() * k;
                d[1] = ls[1].exp() * k;
                d[y] -= k;
            }
            m.backward(&cache, &dout, &mut g)?;
            sum / s.active as f64
        }
    };
    Ok((loss * s.active as f64, g))
}

fn params_mut(net: &mut Net) -> &mut ParamStore {
    match net {
        Net::Gru(g) => &mut g.params,
        Net::Window(m) => &mut m.params,
    }
}

/// Trains a predictor on the training split with masked NLL and AdamW.
pub fn train_predictor(
    ds: &Dataset,
    cfg: &PredictorConfig,
    arch: Arch,
    rule: &LabelRule,
    seed: u64,
    control_dt: f64,
) -> Result<(FallPredictor, TrainLog)> {
    let train = ds.train();
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let norm = Normalizer::fit(train)?;
    let d = norm.mean.len();
    let mut init = rng::stream(seed, "predictor-init", 0);
    let mut net = match arch {
        Arch::Gru => Net::Gru(Gru::new(d, cfg.hidden, &mut init)),
        Arch::WindowMlp => Net::Window(Mlp::new(&[WINDOW * d, cfg.hidden, cfg.hidden, 2], Activation::Tanh, &mut init)),
    };
    let mut adam = Adam::new(params_mut(&mut net), cfg.lr, cfg.weight_decay);
    let zero = params_mut(&mut net).zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(seed, "predictor-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        for batch in order.chunks(cfg.batch.max(1)) {
            let samples: Vec<Sample> = batch.iter().map(|i| sample(&train[*i], &norm, rule, control_dt)).collect();
            let total: usize = samples.iter().map(|s| s.active).sum();
            if total == 0 {
                continue;
            }
            let parts: Vec<Result<(f64, ParamStore)>> =
                samples.par_iter().map(|s| sequence_grad(&net, s, total, &zero)).collect();
            let mut grads = zero.clone();
            for p in parts {
                let (l, g) = p?;
                loss_sum += l;
                grads.add_scaled(&g, 1.0);
            }
            frames += total;
            if cfg.grad_clip > 0.0 {
                grads.clip_norm(cfg.grad_clip);
            }
            adam.step(params_mut(&mut net), &grads)?;
        }
        let mean = loss_sum / frames.max(1) as f64;
        log::info!("predictor epoch {}: loss {mean:.5}", epoch + 1);
        epoch_loss.push(mean);
    }
    Ok((
        FallPredictor {
            net,
            norm,
            debounce: cfg.debounce,
        },
        TrainLog { epoch_loss },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorEval {
    /// Pre-debounce fraction of Safe frames (`t ≤ ⌊2T/3⌋`) flagged as falling.
    pub far: f64,
    /// Mean lead time over trajectories triggered before impact (s).
    pub lt_mean_s: f64,
    pub lead_times: Vec<f64>,
    /// Fraction of trajectories never triggered before impact.
    pub miss_rate: f64,
    pub safe_frames: usize,
}

/// Scores per-frame fall probabilities against the impact frames. The Safe
/// set is fixed by the evaluation segmentation, independent of the rule
/// used for training.
pub fn evaluate_probabilities(trajs: &[Trajectory], probs: &[Vec<f64>], debounce: usize, control_dt: f64) -> PredictorEval {
    let mut false_alarms = 0usize;
    let mut safe = 0usize;
    let mut lead_times = Vec::new();
    let mut misses = 0usize;
    for (t, p) in trajs.iter().zip(probs) {
        let t1 = 2 * t.impact / 3;
        for v in p.iter().take(t1 + 1) {
            safe += 1;
            if *v > THRESHOLD {
                false_alarms += 1;
            }
        }
        let mut trig = Trigger::new(debounce);
        match (0..t.impact.min(p.len())).find(|i| trig.update(p[*i])) {
            Some(f) => lead_times.push((t.impact - f) as f64 * control_dt),
            None => misses += 1,
        }
    }
    let n = trajs.len().max(1) as f64;
    PredictorEval {
        far: false_alarms as f64 / safe.max(1) as f64,
        lt_mean_s: if lead_times.is_empty() {
            0.0
        } else {
            lead_times.iter().sum::<f64>() / lead_times.len() as f64
        },
        lead_times,
        miss_rate: misses as f64 / n,
        safe_frames: safe,
    }
}

/// FAR over the frames a label rule itself calls Safe (`t ≤ t1` of the
/// rule), for comparing rows against their own training segmentation.
pub fn far_on_rule(trajs: &[Trajectory], probs: &[Vec<f64>], rule: &LabelRule, control_dt: f64) -> f64 {
    let (mut hits, mut n) = (0usize, 0usize);
    for (t, p) in trajs.iter().zip(probs) {
        let t2 = rule.t2.frame(t.impact, control_dt);
        let t1 = rule.t1.frame(t.impact, control_dt).min(t2);
        for v in p.iter().take(t1 + 1) {
            n += 1;
            hits += usize::from(*v > THRESHOLD);
        }
    }
    hits as f64 / n.max(1) as f64
}

fn all_probabilities(pred: &FallPredictor, trajs: &[Trajectory]) -> Result<Vec<Vec<f64>>> {
    trajs
        .par_iter()
        .map(|t| pred.probabilities(t, (t.impact + 1).min(t.len())))
        .collect()
}

pub fn evaluate_far_lt(pred: &FallPredictor, trajs: &[Trajectory], control_dt: f64) -> Result<PredictorEval> {
    let probs = all_probabilities(pred, trajs)?;
    Ok(evaluate_probabilities(trajs, &probs, pred.debounce, control_dt))
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub id: String,
    pub arch: Arch,
    pub rule: LabelRule,
}

/// The seven predictor configurations compared in the ablation: sliding
/// window baseline and GRU, with and without the masked ambiguous segment,
/// across three `t2` offsets.
pub fn ablation_configs() -> Vec<AblationConfig> {
    use Boundary::*;
    let row = |id: &str, arch, t1, t2, masked| AblationConfig {
        id: id.into(),
        arch,
        rule: LabelRule { t1, t2, masked },
    };
    vec![
        row("mlp_unmasked_t2_0.2", Arch::WindowMlp, BeforeImpact(0.2), BeforeImpact(0.2), false),
        row("gru_unmasked_t2_0.2", Arch::Gru, BeforeImpact(0.2), BeforeImpact(0.2), false),
        row("gru_unmasked_t2_2T/3", Arch::Gru, TwoThirds, TwoThirds, false),
        row("mlp_masked_t2_0.2", Arch::WindowMlp, TwoThirds, BeforeImpact(0.2), true),
        row("gru_masked_t2_0.1", Arch::Gru, TwoThirds, BeforeImpact(0.1), true),
        row("gru_masked_t2_0.2", Arch::Gru, TwoThirds, BeforeImpact(0.2), true),
        row("gru_masked_t2_0.4", Arch::Gru, TwoThirds, BeforeImpact(0.4), true),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub eval: PredictorEval,
    /// FAR over the row's own Safe frames, see [`far_on_rule`].
    pub far_rule: f64,
    pub final_loss: f64,
}

pub fn ablation_grid(
    ds: &Dataset,
    cfg: &PredictorConfig,
    configs: &[AblationConfig],
    seed: u64,
    control_dt: f64,
) -> Result<Vec<AblationRow>> {
    configs
        .iter()
        .map(|c| {
            let (pred, log) = train_predictor(ds, cfg, c.arch, &c.rule, seed, control_dt)?;
            let probs = all_probabilities(&pred, ds.val())?;
            let eval = evaluate_probabilities(ds.val(), &probs, pred.debounce, control_dt);
            let far_rule = far_on_rule(ds.val(), &probs, &c.rule, control_dt);
            log::info!(
                "{}: FAR {:.4}% LT {:.3}s miss {:.3}",
                c.id,
                100.0 * eval.far,
                eval.lt_mean_s,
                eval.miss_rate
            );
            Ok(AblationRow {
                config: c.clone(),
                eval,
                far_rule,
                final_loss: log.epoch_loss.last().copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

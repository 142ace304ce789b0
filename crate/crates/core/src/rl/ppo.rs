//! Gaussian actor, asymmetric critic and the clipped PPO update.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::obs::{ActorObservation, CriticObservation};
use crate::config::PpoConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Checkpoint, Dtype, Mlp, ParamStore, Tensor2};
use crate::rng::Rng;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;
const LOG_STD_BOUNDS: [f64; 2] = [-5.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    /// State-independent log standard deviation, one per action.
    pub log_std: ParamStore,
    pub critic: Mlp,
}

impl ActorCritic {
    pub fn new(actor_in: usize, critic_in: usize, n_actions: usize, cfg: &PpoConfig, rng: &mut Rng) -> Result<Self> {
        let act = Activation::parse(&cfg.activation).ok_or_else(|| Error::Config("ppo.activation: unknown".into()))?;
        let sizes = |i: usize, o: usize| {
            let mut v = vec![i];
            v.extend_from_slice(&cfg.hidden);
            v.push(o);
            v
        };
        let mut actor = Mlp::new(&sizes(actor_in, n_actions), act, rng);
        // Start close to the default posture.
        let last = actor.params.tensors.len() - 2;
        actor.params.tensors[last].data.iter_mut().for_each(|w| *w *= 0.01);
        actor.params.tensors[last + 1].data.iter_mut().for_each(|b| *b = 0.0);
        let critic = Mlp::new(&sizes(critic_in, 1), act, rng);
        let mut log_std = ParamStore::new();
        log_std.push("log_std", Tensor2::from_vec(1, n_actions, vec![cfg.init_log_std; n_actions])?);
        Ok(Self { actor, log_std, critic })
    }

    pub fn n_actions(&self) -> usize {
        self.actor.output_dim()
    }

    fn log_std_vec(&self) -> &[f64] {
        &self.log_std.tensors[0].data
    }

    /// Deterministic action: the Gaussian mean.
    pub fn act_mean(&self, obs: &ActorObservation) -> Result<Vec<f64>> {
        self.actor.forward(&obs.0)
    }

    /// Samples an action and returns it with its log-probability.
    pub fn act(&self, obs: &ActorObservation, rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
        let mean = self.act_mean(obs)?;
        let a: Vec<f64> = mean
            .iter()
            .zip(self.log_std_vec())
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = log_prob(&a, &mean, self.log_std_vec());
        Ok((a, lp))
    }

    pub fn value(&self, obs: &CriticObservation) -> Result<f64> {
        Ok(self.critic.forward(&obs.flat())?[0])
    }

    pub fn to_checkpoint(&self, config_hash: [u8; 32], stage: u8) -> Checkpoint {
        let mut c = Checkpoint::new(config_hash);
        c.set_meta("kind", "policy");
        c.set_meta("stage", stage);
        c.set_meta("activation", self.actor.act.name());
        let join = |s: &[usize]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        c.set_meta("actor_sizes", join(&self.actor.sizes));
        c.set_meta("critic_sizes", join(&self.critic.sizes));
        c.push_store("actor", &self.actor.params, Dtype::F64);
        c.push_store("critic", &self.critic.params, Dtype::F64);
        c.push_store("std", &self.log_std, Dtype::F64);
        c
    }

    /// Returns the networks and the stage that produced them.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<(Self, u8)> {
        if c.meta("kind")? != "policy" {
            return Err(Error::Data("checkpoint does not hold a policy".into()));
        }
        let act = Activation::parse(c.meta("activation")?).ok_or_else(|| Error::Data("bad activation".into()))?;
        let sizes = |k: &str| -> Result<Vec<usize>> {
            c.meta(k)?
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::Data(format!("bad layer size `{s}`"))))
                .collect()
        };
        let actor = Mlp::from_params(&sizes("actor_sizes")?, act, c.store("actor")?)?;
        let critic = Mlp::from_params(&sizes("critic_sizes")?, act, c.store("critic")?)?;
        let log_std = c.store("std")?;
        if log_std.tensors.len() != 1 || log_std.tensors[0].data.len() != actor.output_dim() {
            return Err(Error::shape("policy log_std", actor.output_dim(), log_std.tensors.first().map_or(0, |t| t.data.len())));
        }
        Ok((Self { actor, log_std, critic }, c.meta_parse("stage")?))
    }
}

pub fn log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (LOG_2PI + 1.0)).sum()
}

/// Transitions of whole episodes laid out back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub actor_obs: Tensor2,
    pub critic_obs: Tensor2,
    pub actions: Tensor2,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// True on the last transition of each episode.
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Generalized advantage estimates and value targets. Episodes end at
/// `dones` without bootstrapping.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_v, carry) = if dones[t] || t + 1 == n { (0.0, 0.0) } else { (values[t + 1], running) };
        let delta = rewards[t] + gamma * next_v - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

pub fn normalize(v: &mut [f64]) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    v.iter_mut().for_each(|x| *x = (*x - mean) * inv);
}

/// Running spread of discounted returns. Rewards are divided by it before
/// advantage estimation so the critic regresses unit-scale targets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReturnScale {
    count: f64,
    mean: f64,
    m2: f64,
}

impl ReturnScale {
    pub fn observe(&mut self, rewards: &[f64], dones: &[bool], gamma: f64) {
        let mut g = 0.0;
        for t in (0..rewards.len()).rev() {
            if dones[t] || t + 1 == rewards.len() {
                g = 0.0;
            }
            g = rewards[t] + gamma * g;
            self.count += 1.0;
            let d = g - self.mean;
            self.mean += d / self.count;
            self.m2 += d * (g - self.mean);
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt().max(1e-8)
        }
    }
}

/// Optimizer state carried across updates.
#[derive(Debug, Clone)]
pub struct PpoState {
    actor_opt: Adam,
    std_opt: Adam,
    critic_opt: Adam,
    pub lr: f64,
    pub returns: ReturnScale,
}

impl PpoState {
    pub fn new(ac: &ActorCritic, lr: f64) -> Self {
        Self {
            actor_opt: Adam::new(&ac.actor.params, lr, 0.0),
            std_opt: Adam::new(&ac.log_std, lr, 0.0),
            critic_opt: Adam::new(&ac.critic.params, lr, 0.0),
            lr,
            returns: ReturnScale::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub value_loss: f64,
    /// Mean approximate KL of the last epoch.
    pub kl: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    /// Learning rate used for this update.
    pub lr: f64,
}

/// Halves or doubles `lr` when `kl` leaves `[target/2, 2·target]`.
pub fn adapt_lr(lr: f64, kl: f64, cfg: &PpoConfig) -> f64 {
    if kl > 2.0 * cfg.target_kl {
        (lr / 2.0).max(cfg.lr_min)
    } else if kl < 0.5 * cfg.target_kl {
        (lr * 2.0).min(cfg.lr_max)
    } else {
        lr
    }
}

fn rows(t: &Tensor2, idx: &[usize]) -> Tensor2 {
    let mut out = Tensor2::zeros(idx.len(), t.cols);
    for (k, i) in idx.iter().enumerate() {
        out.row_mut(k).copy_from_slice(t.row(*i));
    }
    out
}

/// Surrogate, value and entropy terms with their gradients for one
/// minibatch. Returns `(actor_loss, value_loss, kl, clip_fraction)`.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_grads(
    ac: &ActorCritic,
    batch: &Batch,
    idx: &[usize],
    adv: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    g_actor: &mut ParamStore,
    g_std: &mut ParamStore,
    g_critic: &mut ParamStore,
) -> Result<(f64, f64, f64, f64)> {
    let n = idx.len();
    let inv_n = 1.0 / n as f64;
    let na = ac.n_actions();
    let log_std = ac.log_std_vec().to_vec();
    let (mean, cache) = ac.actor.forward_batch(&rows(&batch.actor_obs, idx))?;
    let mut dmean = Tensor2::zeros(n, na);
    let gstd = &mut g_std.tensors[0].data;
    let (mut loss, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    for (r, &i) in idx.iter().enumerate() {
        let a = batch.actions.row(i);
        let m = mean.row(r);
        let lp = log_prob(a, m, &log_std);
        let log_ratio = lp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let adv = adv[i];
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        loss -= unclipped.min(clipped_obj) * inv_n;
        kl += ((ratio - 1.0) - log_ratio) * inv_n;
        let active = !((adv >= 0.0 && ratio > 1.0 + cfg.clip) || (adv < 0.0 && ratio < 1.0 - cfg.clip));
        if !active {
            clipped += 1;
            continue;
        }
        // d(loss)/d(logp)
        let g = -ratio * adv * inv_n;
        let d = dmean.row_mut(r);
        for j in 0..na {
            let inv_var = (-2.0 * log_std[j]).exp();
            let diff = a[j] - m[j];
            d[j] = g * diff * inv_var;
            gstd[j] += g * (diff * diff * inv_var - 1.0);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite PPO surrogate over {n} samples (kl {kl})")));
    }
    ac.actor.backward(&cache, &dmean, g_actor)?;
    // Entropy bonus: d(−c·H)/d(log_std) = −c per action.
    for g in gstd.iter_mut() {
        *g -= cfg.entropy_coef;
    }
    loss -= cfg.entropy_coef * entropy(&log_std);

    let (v, vcache) = ac.critic.forward_batch(&rows(&batch.critic_obs, idx))?;
    let mut dv = Tensor2::zeros(n, 1);
    let mut vloss = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        let e = v.row(r)[0] - returns[i];
        vloss += e * e * inv_n;
        dv.row_mut(r)[0] = 2.0 * cfg.value_coef * e * inv_n;
    }
    if !vloss.is_finite() {
        return Err(Error::Numerical(format!("non-finite value loss over {n} samples")));
    }
    ac.critic.backward(&vcache, &dv, g_critic)?;
    Ok((loss, vloss, kl, clipped as f64 * inv_n))
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates over `batch`,
/// then adapts the learning rate from the last epoch's KL.
pub fn ppo_update(ac: &mut ActorCritic, st: &mut PpoState, batch: &Batch, cfg: &PpoConfig, rng: &mut Rng) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty rollout batch".into()));
    }
    let rewards: Vec<f64> = if cfg.normalize_returns {
        st.returns.observe(&batch.rewards, &batch.dones, cfg.gamma);
        let k = 1.0 / st.returns.std();
        batch.rewards.iter().map(|r| r * k).collect()
    } else {
        batch.rewards.clone()
    };
    let (mut adv, returns) = gae(&rewards, &batch.values, &batch.dones, cfg.gamma, cfg.lambda);
    normalize(&mut adv);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mb = batch.len().div_ceil(cfg.minibatches);
    let mut stats = UpdateStats {
        lr: st.lr,
        ..Default::default()
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut kl, mut n_mb) = (0.0, 0.0);
        for idx in order.chunks(mb) {
            let mut ga = ac.actor.params.zeros_like();
            let mut gs = ac.log_std.zeros_like();
            let mut gc = ac.critic.params.zeros_like();
            let (l, v, k, c) = minibatch_grads(ac, batch, idx, &adv, &returns, cfg, &mut ga, &mut gs, &mut gc)?;
            if cfg.max_grad_norm > 0.0 {
                let norm = (ga.norm().powi(2) + gs.norm().powi(2)).sqrt();
                if norm > cfg.max_grad_norm {
                    ga.scale(cfg.max_grad_norm / norm);
                    gs.scale(cfg.max_grad_norm / norm);
                }
                gc.clip_norm(cfg.max_grad_norm);
            }
            for opt in [&mut st.actor_opt, &mut st.std_opt, &mut st.critic_opt] {
                opt.lr = st.lr;
            }
            st.actor_opt.step(&mut ac.actor.params, &ga)?;
            st.std_opt.step(&mut ac.log_std, &gs)?;
            st.critic_opt.step(&mut ac.critic.params, &gc)?;
            for ls in &mut ac.log_std.tensors[0].data {
                *ls = ls.clamp(LOG_STD_BOUNDS[0], LOG_STD_BOUNDS[1]);
            }
            if epoch + 1 == cfg.epochs {
                stats.actor_loss += l;
                stats.value_loss += v;
                stats.clip_fraction += c;
            }
            kl += k;
            n_mb += 1.0;
        }
        stats.kl = kl / n_mb;
    }
    let n_mb = order.chunks(mb).count() as f64;
    stats.actor_loss /= n_mb;
    stats.value_loss /= n_mb;
    stats.clip_fraction /= n_mb;
    stats.entropy = entropy(ac.log_std_vec());
    st.lr = adapt_lr(st.lr, stats.kl, cfg);
    Ok(stats)
}

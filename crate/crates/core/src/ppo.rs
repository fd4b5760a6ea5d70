//! PPO with GAE, a clipped surrogate and a KL-driven learning rate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{clip_grad_norm, Adam, Mlp};
use crate::policy::{PolicyBundle, ACTION_DIM, OBS_DIM};
use crate::{Error, Result};

pub const LR_MIN: f64 = 1e-6;
pub const LR_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub desired_kl: f64,
    pub epochs: usize,
    /// Rollout length per environment and iteration.
    pub steps_per_env: usize,
    /// Samples per mini-batch, per environment.
    pub minibatch_steps: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 1.0,
            gamma: 0.99,
            lambda: 0.95,
            desired_kl: 0.01,
            epochs: 5,
            steps_per_env: 24,
            minibatch_steps: 6,
            learning_rate: 1e-3,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("ppo.gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("ppo.lambda", "must lie in [0, 1]"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("ppo.clip", "must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("ppo.epochs", "must be > 0"));
        }
        if self.steps_per_env == 0 || self.minibatch_steps == 0 || !self.steps_per_env.is_multiple_of(self.minibatch_steps) {
            return Err(Error::config(
                "ppo.minibatch_steps",
                "must be > 0 and divide steps_per_env",
            ));
        }
        if !(self.learning_rate >= LR_MIN && self.learning_rate <= LR_MAX) {
            return Err(Error::config("ppo.learning_rate", format!("must lie in [{LR_MIN}, {LR_MAX}]")));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("ppo.max_grad_norm", "must be > 0"));
        }
        Ok(())
    }

    pub fn minibatches(&self) -> usize {
        self.steps_per_env / self.minibatch_steps
    }
}

/// Which encoder produces the latent inside the PPO graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSource {
    /// E_p on [s, p, l]; trained jointly with actor and critic.
    Privileged,
    /// E_s on the observation history; E_p stays frozen.
    Proprioceptive,
}

/// Which encoders feed the actor and the critic inside the PPO graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PpoGraph {
    /// Trained through the actor (and the critic, see below).
    pub actor_latent: LatentSource,
    /// A different source than `actor_latent` is used frozen.
    pub critic_latent: LatentSource,
    /// Value gradients reach the shared encoder.
    pub critic_trains_encoder: bool,
}

impl PpoGraph {
    pub const TEACHER: PpoGraph = PpoGraph {
        actor_latent: LatentSource::Privileged,
        critic_latent: LatentSource::Privileged,
        critic_trains_encoder: true,
    };

    pub fn reinforce(critic_latent: LatentSource) -> Self {
        PpoGraph {
            actor_latent: LatentSource::Proprioceptive,
            critic_latent,
            critic_trains_encoder: false,
        }
    }

    fn critic_shares_encoder(&self) -> bool {
        self.actor_latent == self.critic_latent
    }
}

/// Rollout storage, env-major: sample `i = env * steps + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub envs: usize,
    pub steps: usize,
    pub history_dim: usize,
    pub privileged_dim: usize,
    pub actor_load_dim: usize,
    /// Flattened observation histories, oldest first.
    pub history: Vec<f64>,
    /// Privileged-encoder inputs [s, p, (l)], also the critic prefix.
    pub privileged: Vec<f64>,
    pub obs: Vec<f64>,
    /// Load slot of the actor (truth or a detached estimate), possibly empty.
    pub actor_load: Vec<f64>,
    /// Ground-truth load characteristics.
    pub load: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub means: Vec<f64>,
    pub log_std: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// V(s_T) per env for the step after the last one.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(envs: usize, steps: usize, history_dim: usize, privileged_dim: usize, actor_load_dim: usize) -> Self {
        let n = envs * steps;
        RolloutBuffer {
            envs,
            steps,
            history_dim,
            privileged_dim,
            actor_load_dim,
            history: vec![0.0; n * history_dim],
            privileged: vec![0.0; n * privileged_dim],
            obs: vec![0.0; n * OBS_DIM],
            actor_load: vec![0.0; n * actor_load_dim],
            load: vec![0.0; n * crate::load::LOAD_DIM],
            actions: vec![0.0; n * ACTION_DIM],
            log_probs: vec![0.0; n],
            means: vec![0.0; n * ACTION_DIM],
            log_std: Vec::new(),
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            bootstrap: vec![0.0; envs],
        }
    }

    pub fn len(&self) -> usize {
        self.envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, env: usize, t: usize) -> usize {
        env * self.steps + t
    }
}

/// Advantages and returns for an env-major buffer.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    steps: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 || steps == 0 {
        return Err(Error::contract("empty rollout buffer"));
    }
    if values.len() != n || dones.len() != n || !n.is_multiple_of(steps) || bootstrap.len() != n / steps {
        return Err(Error::contract("rollout buffer is not rectangular"));
    }
    let mut adv = vec![0.0; n];
    for env in 0..n / steps {
        let mut next_value = bootstrap[env];
        let mut next_adv = 0.0;
        for t in (0..steps).rev() {
            let i = env * steps + t;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shift and scale to zero mean and unit variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

pub fn adaptive_lr(lr: f64, kl: f64, desired: f64) -> f64 {
    let next = if kl > 2.0 * desired {
        lr / 1.5
    } else if kl < desired / 2.0 {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(LR_MIN, LR_MAX)
}

/// KL(old || new) between diagonal Gaussians.
pub fn gaussian_kl(old_mean: &[f64], old_log_std: &[f64], new_mean: &[f64], new_log_std: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..old_mean.len() {
        let (so, sn) = (old_log_std[i].exp(), new_log_std[i].exp());
        let d = old_mean[i] - new_mean[i];
        kl += new_log_std[i] - old_log_std[i] + (so * so + d * d) / (2.0 * sn * sn) - 0.5;
    }
    kl
}

/// Optimizer state for the networks PPO trains.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoOptimizer {
    pub lr: f64,
    pub actor: Adam,
    pub critic: Adam,
    pub head: Adam,
    /// Matches whichever encoder is live.
    pub encoder: Adam,
}

impl PpoOptimizer {
    pub fn new(bundle: &PolicyBundle, source: LatentSource, lr: f64) -> Self {
        PpoOptimizer {
            lr,
            actor: Adam::new(bundle.actor.params.len()),
            critic: Adam::new(bundle.critic.params.len()),
            head: Adam::new(bundle.head.log_std.len()),
            encoder: Adam::new(encoder(bundle, source).params.len()),
        }
    }
}

fn encoder(bundle: &PolicyBundle, source: LatentSource) -> &Mlp {
    match source {
        LatentSource::Privileged => &bundle.privileged,
        LatentSource::Proprioceptive => &bundle.proprio,
    }
}

/// Parameter gradients of one mini-batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoGrads {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub encoder: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PpoGrads {
    fn zeros(bundle: &PolicyBundle, source: LatentSource) -> Self {
        PpoGrads {
            actor: vec![0.0; bundle.actor.params.len()],
            critic: vec![0.0; bundle.critic.params.len()],
            encoder: vec![0.0; encoder(bundle, source).params.len()],
            log_std: vec![0.0; bundle.head.log_std.len()],
        }
    }
}

/// Loss terms and diagnostics of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinibatchStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean KL(old || current) before the gradient step.
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Per-update averages.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// KL(old || new) over the whole buffer after the update.
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
}

/// Prepared targets for the update.
pub struct PpoTargets {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

pub fn prepare_targets(buf: &RolloutBuffer, cfg: &PpoConfig) -> Result<PpoTargets> {
    let (mut advantages, returns) =
        compute_gae(&buf.rewards, &buf.values, &buf.dones, &buf.bootstrap, buf.steps, cfg.gamma, cfg.lambda)?;
    normalize_advantages(&mut advantages);
    Ok(PpoTargets { advantages, returns })
}

fn gather(src: &[f64], dim: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
    }
    out
}

fn encoder_input(buf: &RolloutBuffer, source: LatentSource) -> (&[f64], usize) {
    match source {
        LatentSource::Privileged => (&buf.privileged, buf.privileged_dim),
        LatentSource::Proprioceptive => (&buf.history, buf.history_dim),
    }
}

struct Forward {
    latent: crate::nn::Tape,
    actor: crate::nn::Tape,
    critic: crate::nn::Tape,
}

fn latent_rows(bundle: &PolicyBundle, buf: &RolloutBuffer, idx: &[usize], source: LatentSource) -> Result<crate::nn::Tape> {
    let (src, dim) = encoder_input(buf, source);
    encoder(bundle, source).forward_batch(&gather(src, dim, idx), idx.len())
}

fn forward(bundle: &PolicyBundle, buf: &RolloutBuffer, idx: &[usize], graph: &PpoGraph) -> Result<Forward> {
    let b = idx.len();
    let latent = latent_rows(bundle, buf, idx, graph.actor_latent)?;
    let critic_latent = if graph.critic_shares_encoder() {
        None
    } else {
        Some(latent_rows(bundle, buf, idx, graph.critic_latent)?.output)
    };
    let z_dim = bundle.arch.latent_dim;
    let la = buf.actor_load_dim;
    let mut actor_in = Vec::with_capacity(b * bundle.actor.input_dim());
    let mut critic_in = Vec::with_capacity(b * bundle.critic.input_dim());
    for (k, &i) in idx.iter().enumerate() {
        let z = &latent.output[k * z_dim..(k + 1) * z_dim];
        actor_in.extend_from_slice(&buf.obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
        actor_in.extend_from_slice(z);
        actor_in.extend_from_slice(&buf.actor_load[i * la..(i + 1) * la]);
        critic_in.extend_from_slice(&buf.privileged[i * buf.privileged_dim..(i + 1) * buf.privileged_dim]);
        critic_in.extend_from_slice(critic_latent.as_ref().map_or(z, |c| &c[k * z_dim..(k + 1) * z_dim]));
    }
    Ok(Forward {
        actor: bundle.actor.forward_batch(&actor_in, b)?,
        critic: bundle.critic.forward_batch(&critic_in, b)?,
        latent,
    })
}

/// Loss and gradients of one mini-batch.
pub fn minibatch_grads(
    bundle: &PolicyBundle,
    buf: &RolloutBuffer,
    targets: &PpoTargets,
    idx: &[usize],
    cfg: &PpoConfig,
    graph: &PpoGraph,
) -> Result<(MinibatchStats, PpoGrads)> {
    let b = idx.len();
    if b == 0 {
        return Err(Error::contract("empty mini-batch"));
    }
    let bf = b as f64;
    let fw = forward(bundle, buf, idx, graph)?;
    let head = &bundle.head;
    let mut grads = PpoGrads::zeros(bundle, graph.actor_latent);
    let mut d_mean = vec![0.0; b * ACTION_DIM];
    let mut d_value = vec![0.0; b];
    let (mut surrogate, mut value_loss, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    for (k, &i) in idx.iter().enumerate() {
        let mean = &fw.actor.output[k * ACTION_DIM..(k + 1) * ACTION_DIM];
        let action = &buf.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM];
        let ratio = (head.log_prob(mean, action) - buf.log_probs[i]).exp();
        let a = targets.advantages[i];
        let plain = ratio * a;
        let bounded = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        surrogate -= plain.min(bounded) / bf;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        // The clipped branch is constant in the parameters.
        if plain <= bounded {
            head.log_prob_grad(
                mean,
                action,
                -a * ratio / bf,
                &mut d_mean[k * ACTION_DIM..(k + 1) * ACTION_DIM],
                &mut grads.log_std,
            );
        }
        let err = fw.critic.output[k] - targets.returns[i];
        value_loss += err * err / bf;
        d_value[k] = 2.0 * cfg.value_coef * err / bf;
        kl += gaussian_kl(&buf.means[i * ACTION_DIM..(i + 1) * ACTION_DIM], &buf.log_std, mean, &head.log_std) / bf;
    }
    let entropy = head.entropy();
    let loss = surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "ppo loss".into(),
            stats: format!("surrogate {surrogate}, value {value_loss}, entropy {entropy}, kl {kl}"),
        });
    }
    for g in grads.log_std.iter_mut() {
        *g -= cfg.entropy_coef;
    }

    let z_dim = bundle.arch.latent_dim;
    let mut d_z = vec![0.0; b * z_dim];
    let d_actor_in = bundle.actor.backward(&fw.actor, &d_mean, &mut grads.actor, true).unwrap_or_default();
    let a_in = bundle.actor.input_dim();
    for k in 0..b {
        for j in 0..z_dim {
            d_z[k * z_dim + j] += d_actor_in[k * a_in + OBS_DIM + j];
        }
    }
    let c_in = bundle.critic.input_dim();
    let to_encoder = graph.critic_trains_encoder && graph.critic_shares_encoder();
    if let Some(d_critic_in) = bundle.critic.backward(&fw.critic, &d_value, &mut grads.critic, to_encoder) {
        for k in 0..b {
            for j in 0..z_dim {
                d_z[k * z_dim + j] += d_critic_in[k * c_in + buf.privileged_dim + j];
            }
        }
    }
    encoder(bundle, graph.actor_latent).backward(&fw.latent, &d_z, &mut grads.encoder, false);

    Ok((
        MinibatchStats {
            surrogate,
            value_loss,
            entropy,
            kl,
            clip_fraction: clipped as f64 / bf,
        },
        grads,
    ))
}

/// Mean KL(old || current) over the whole buffer.
pub fn buffer_kl(bundle: &PolicyBundle, buf: &RolloutBuffer, graph: &PpoGraph) -> Result<f64> {
    let idx: Vec<usize> = (0..buf.len()).collect();
    let fw = forward(bundle, buf, &idx, graph)?;
    let n = idx.len() as f64;
    Ok(idx
        .iter()
        .map(|&i| {
            gaussian_kl(
                &buf.means[i * ACTION_DIM..(i + 1) * ACTION_DIM],
                &buf.log_std,
                &fw.actor.output[i * ACTION_DIM..(i + 1) * ACTION_DIM],
                &bundle.head.log_std,
            )
        })
        .sum::<f64>()
        / n)
}

/// Shuffled mini-batches covering every sample exactly once.
pub fn minibatch_indices<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let size = n / count;
    perm.chunks(size.max(1)).map(|c| c.to_vec()).collect()
}

/// Full PPO update: epochs of shuffled mini-batches with per-mini-batch
/// learning-rate adaptation.
pub fn ppo_update<R: Rng>(
    bundle: &mut PolicyBundle,
    opt: &mut PpoOptimizer,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    graph: &PpoGraph,
    rng: &mut R,
) -> Result<UpdateStats> {
    if buf.is_empty() {
        return Err(Error::contract("empty rollout buffer"));
    }
    let targets = prepare_targets(buf, cfg)?;
    let mut acc = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        for idx in minibatch_indices(buf.len(), cfg.minibatches(), rng) {
            let (stats, mut g) = minibatch_grads(bundle, buf, &targets, &idx, cfg, graph)?;
            opt.lr = adaptive_lr(opt.lr, stats.kl, cfg.desired_kl);
            clip_grad_norm(
                &mut [&mut g.actor, &mut g.critic, &mut g.encoder, &mut g.log_std],
                cfg.max_grad_norm,
            );
            let lr = opt.lr;
            opt.actor.step(&mut bundle.actor.params, &g.actor, lr);
            opt.critic.step(&mut bundle.critic.params, &g.critic, lr);
            opt.head.step(&mut bundle.head.log_std, &g.log_std, lr);
            let enc = match graph.actor_latent {
                LatentSource::Privileged => &mut bundle.privileged,
                LatentSource::Proprioceptive => &mut bundle.proprio,
            };
            opt.encoder.step(&mut enc.params, &g.encoder, lr);
            acc.surrogate += stats.surrogate;
            acc.value_loss += stats.value_loss;
            acc.entropy += stats.entropy;
            acc.clip_fraction += stats.clip_fraction;
            count += 1.0;
        }
    }
    acc.surrogate /= count;
    acc.value_loss /= count;
    acc.entropy /= count;
    acc.clip_fraction /= count;
    acc.mean_kl = buffer_kl(bundle, buf, graph)?;
    acc.lr = opt.lr;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_spot_values() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[false], &[0.0], 1, 0.99, 0.95).unwrap();
        assert_eq!((a[0], r[0]), (1.0, 1.0));
        let (a, _) = compute_gae(&[1.0; 3], &[0.5; 3], &[false; 3], &[0.0], 3, 0.99, 0.95).unwrap();
        for (got, want) in a.iter().zip([2.37307, 1.46525, 0.5]) {
            assert!((got - want).abs() < 5e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn done_masks_later_rewards() {
        let (a, _) = compute_gae(&[1.0, 1.0, 50.0], &[0.2, 0.3, 0.4], &[false, true, false], &[9.0], 3, 0.99, 0.95)
            .unwrap();
        assert_eq!(a[1], 1.0 - 0.3);
    }

    #[test]
    fn empty_buffer_is_rejected() {
        assert!(matches!(compute_gae(&[], &[], &[], &[], 1, 0.99, 0.95), Err(Error::Contract(_))));
    }

    #[test]
    fn adaptive_lr_rule() {
        assert_eq!(adaptive_lr(1e-3, 0.01, 0.01), 1e-3);
        assert_eq!(adaptive_lr(1e-3, 0.03, 0.01), 1e-3 / 1.5);
        assert_eq!(adaptive_lr(1e-3, 0.001, 0.01), 1.5e-3);
        assert_eq!(adaptive_lr(LR_MIN, 1.0, 0.01), LR_MIN);
        assert_eq!(adaptive_lr(LR_MAX, 0.0, 0.01), LR_MAX);
    }

    #[test]
    fn minibatches_partition_the_buffer() {
        let mut rng = rand::rngs::mock::StepRng::new(3, 7);
        let parts = minibatch_indices(96, 4, &mut rng);
        assert_eq!(parts.len(), 4);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..96).collect::<Vec<_>>());
    }
}

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_estimation_loss, reconstruction_loss, supervised_epochs, CurriculumState, Env, StepOutcome, Termination, TrainConfig};
use crate::load::LOAD_DIM;
use crate::nn::Adam;
use crate::policy::{ActorLoad, PolicyBundle, ACTION_DIM, DYN_DIM, OBS_DIM, STATE_DIM};
use crate::ppo::{ppo_update, LatentSource, PpoGraph, PpoOptimizer, RolloutBuffer};
use crate::rewards::TERM_COUNT;
use crate::{Error, Result};

/// Finished episodes averaged into the logged reward and length.
const EPISODE_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// PPO through E_p; E_s regresses onto z.
    Teacher,
    /// PPO through E_s with E_p frozen.
    Reinforce,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Teacher => "teacher",
            Phase::Reinforce => "reinforce",
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub phase: Phase,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub learning_rate: f64,
    /// Mean over the last finished episodes; NaN before the first one.
    pub mean_episode_reward: f64,
    pub mean_episode_length: f64,
    pub episodes: usize,
    pub falls: usize,
    pub load_falls: usize,
    pub divergences: usize,
    pub mean_level: f64,
    /// Measured on this iteration's rollout before any supervised step.
    pub reconstruction_loss: f64,
    pub estimation_loss: Option<f64>,
    /// Mean weighted reward terms per step (before the reward scale).
    #[serde(skip)]
    pub reward_terms: [f64; TERM_COUNT],
}

/// Learnable state and progress; what a checkpoint stores.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub bundle: PolicyBundle,
    pub ppo_opt: PpoOptimizer,
    pub proprio_opt: Adam,
    pub estimator_opt: Option<Adam>,
    pub iteration: usize,
    pub levels: Vec<usize>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub bundle: PolicyBundle,
    pub ppo_opt: PpoOptimizer,
    /// Supervised fitting of E_s in the teacher phase.
    pub proprio_opt: Adam,
    pub estimator_opt: Option<Adam>,
    pub envs: Vec<Env>,
    pub curriculum: CurriculumState,
    pub iteration: usize,
    ppo_source: LatentSource,
    rng: ChaCha8Rng,
    episode_rewards: VecDeque<f64>,
    episode_lengths: VecDeque<f64>,
}

/// Per-step network inputs of every environment.
struct Rows {
    history: Vec<f64>,
    privileged: Vec<f64>,
    obs: Vec<f64>,
    load: Vec<f64>,
}

fn gather_rows(envs: &[Env], privileged_load: bool) -> Rows {
    let mut rows = Rows {
        history: Vec::new(),
        privileged: Vec::new(),
        obs: Vec::with_capacity(envs.len() * OBS_DIM),
        load: Vec::with_capacity(envs.len() * LOAD_DIM),
    };
    for env in envs {
        env.history.flatten_into(&mut rows.history);
        let l = env.load_characteristics();
        rows.privileged.extend_from_slice(&env.full_state().0);
        rows.privileged.extend_from_slice(&env.params.to_vec());
        if privileged_load {
            rows.privileged.extend_from_slice(&l.0);
        }
        rows.obs.extend_from_slice(&env.obs.0);
        rows.load.extend_from_slice(&l.0);
    }
    rows
}

/// Batched action means, values and actor load slots for `rows`.
struct Pass {
    means: Vec<f64>,
    values: Vec<f64>,
    actor_load: Vec<f64>,
}

fn latent(bundle: &PolicyBundle, source: LatentSource, rows: &Rows, n: usize) -> Result<Vec<f64>> {
    Ok(match source {
        LatentSource::Privileged => bundle.privileged.forward_batch(&rows.privileged, n)?.output,
        LatentSource::Proprioceptive => bundle.proprio.forward_batch(&rows.history, n)?.output,
    })
}

fn policy_pass(bundle: &PolicyBundle, graph: &PpoGraph, rows: &Rows, n: usize, want_means: bool) -> Result<Pass> {
    let z_dim = bundle.arch.latent_dim;
    let z = latent(bundle, graph.actor_latent, rows, n)?;
    let zc = if graph.critic_latent == graph.actor_latent {
        None
    } else {
        Some(latent(bundle, graph.critic_latent, rows, n)?)
    };
    let actor_load = match bundle.flags.actor_load {
        ActorLoad::None => Vec::new(),
        ActorLoad::Truth => rows.load.clone(),
        ActorLoad::Estimate => match &bundle.estimator {
            Some(e) => e.forward_batch(&rows.history, n)?.output,
            None => return Err(Error::RoleMismatch(format!("role {} has no load estimator", bundle.role))),
        },
    };
    let la = actor_load.len() / n;
    let pdim = rows.privileged.len() / n;
    let mut critic_in = Vec::with_capacity(n * bundle.critic.input_dim());
    let mut actor_in = Vec::with_capacity(n * bundle.actor.input_dim());
    for e in 0..n {
        let ze = &z[e * z_dim..(e + 1) * z_dim];
        critic_in.extend_from_slice(&rows.privileged[e * pdim..(e + 1) * pdim]);
        critic_in.extend_from_slice(zc.as_ref().map_or(ze, |c| &c[e * z_dim..(e + 1) * z_dim]));
        if want_means {
            actor_in.extend_from_slice(&rows.obs[e * OBS_DIM..(e + 1) * OBS_DIM]);
            actor_in.extend_from_slice(ze);
            actor_in.extend_from_slice(&actor_load[e * la..(e + 1) * la]);
        }
    }
    let values = bundle.critic.forward_batch(&critic_in, n)?.output;
    let means = if want_means {
        bundle.actor.forward_batch(&actor_in, n)?.output
    } else {
        Vec::new()
    };
    if !values.iter().chain(&means).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            what: "policy outputs during rollout".into(),
            stats: format!("{n} envs"),
        });
    }
    Ok(Pass {
        means,
        values,
        actor_load,
    })
}

#[derive(Default)]
struct Tally {
    episodes: usize,
    falls: usize,
    load_falls: usize,
    divergences: usize,
    terms: [f64; TERM_COUNT],
    steps: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bundle = PolicyBundle::for_role(config.role, &config.arch, &mut rng)?;
        let state = TrainerState {
            ppo_opt: PpoOptimizer::new(&bundle, LatentSource::Privileged, config.ppo.learning_rate),
            proprio_opt: Adam::new(bundle.proprio.params.len()),
            estimator_opt: bundle.estimator.as_ref().map(|e| Adam::new(e.params.len())),
            bundle,
            iteration: 0,
            levels: vec![0; config.envs],
        };
        Self::from_state(config, state)
    }

    /// Continue from a saved state. Environments start fresh episodes at the
    /// saved curriculum levels; their random streams are not restored.
    pub fn from_state(config: TrainConfig, state: TrainerState) -> Result<Self> {
        config.validate()?;
        state.bundle.check_shapes()?;
        if state.bundle.role != config.role {
            return Err(Error::RoleMismatch(format!(
                "state holds a {} policy but the config trains {}",
                state.bundle.role, config.role
            )));
        }
        if state.levels.len() != config.envs {
            return Err(Error::contract(format!(
                "state has {} curriculum levels for {} envs",
                state.levels.len(),
                config.envs
            )));
        }
        let mut curriculum = CurriculumState::new(config.envs, config.curriculum.max_level);
        let envs: Vec<Env> = (0..config.envs)
            .into_par_iter()
            .map(|i| {
                let mut env = Env::training(i, &config);
                if state.levels[i] > 0 {
                    env.level = state.levels[i].min(config.curriculum.max_level);
                    env.reset_training(&config);
                }
                env
            })
            .collect();
        for env in &envs {
            curriculum.levels[env.index] = env.level;
        }
        let ppo_source = if state.iteration < config.teacher_iterations {
            LatentSource::Privileged
        } else {
            LatentSource::Proprioceptive
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        rng.set_word_pos(state.iteration as u128 * 1024);
        Ok(Trainer {
            bundle: state.bundle,
            ppo_opt: state.ppo_opt,
            proprio_opt: state.proprio_opt,
            estimator_opt: state.estimator_opt,
            iteration: state.iteration,
            envs,
            curriculum,
            ppo_source,
            rng,
            episode_rewards: VecDeque::with_capacity(EPISODE_WINDOW),
            episode_lengths: VecDeque::with_capacity(EPISODE_WINDOW),
            config,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            bundle: self.bundle.clone(),
            ppo_opt: self.ppo_opt.clone(),
            proprio_opt: self.proprio_opt.clone(),
            estimator_opt: self.estimator_opt.clone(),
            iteration: self.iteration,
            levels: self.curriculum.levels.clone(),
        }
    }

    pub fn phase(&self) -> Phase {
        if self.iteration < self.config.teacher_iterations {
            Phase::Teacher
        } else {
            Phase::Reinforce
        }
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.total_iterations()
    }

    fn graph(&self, phase: Phase) -> PpoGraph {
        match phase {
            Phase::Teacher => PpoGraph::TEACHER,
            Phase::Reinforce => PpoGraph::reinforce(self.config.reinforce.critic_latent),
        }
    }

    /// Collect one rollout with the current policy.
    fn collect(&mut self, graph: &PpoGraph) -> Result<(RolloutBuffer, Tally)> {
        let cfg = &self.config;
        let bundle = &self.bundle;
        let n = self.envs.len();
        let steps = cfg.ppo.steps_per_env;
        let pdim = STATE_DIM + DYN_DIM + if bundle.flags.privileged_load { LOAD_DIM } else { 0 };
        let la = if bundle.flags.actor_takes_load() { LOAD_DIM } else { 0 };
        let hdim = cfg.arch.history_dim();
        let mut buf = RolloutBuffer::new(n, steps, hdim, pdim, la);
        buf.log_std = bundle.head.log_std.clone();
        let mut tally = Tally::default();
        let mut actions = vec![0.0; n * ACTION_DIM];

        for t in 0..steps {
            let rows = gather_rows(&self.envs, bundle.flags.privileged_load);
            let pass = policy_pass(bundle, graph, &rows, n, true)?;
            for (e, env) in self.envs.iter_mut().enumerate() {
                let i = buf.index(e, t);
                let mean = &pass.means[e * ACTION_DIM..(e + 1) * ACTION_DIM];
                let a = bundle.head.sample(mean, env.rng());
                buf.log_probs[i] = bundle.head.log_prob(mean, &a);
                buf.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM].copy_from_slice(&a);
                buf.means[i * ACTION_DIM..(i + 1) * ACTION_DIM].copy_from_slice(mean);
                buf.values[i] = pass.values[e];
                buf.history[i * hdim..(i + 1) * hdim].copy_from_slice(&rows.history[e * hdim..(e + 1) * hdim]);
                buf.privileged[i * pdim..(i + 1) * pdim].copy_from_slice(&rows.privileged[e * pdim..(e + 1) * pdim]);
                buf.obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(&rows.obs[e * OBS_DIM..(e + 1) * OBS_DIM]);
                buf.actor_load[i * la..(i + 1) * la].copy_from_slice(&pass.actor_load[e * la..(e + 1) * la]);
                buf.load[i * LOAD_DIM..(i + 1) * LOAD_DIM].copy_from_slice(&rows.load[e * LOAD_DIM..(e + 1) * LOAD_DIM]);
                actions[e * ACTION_DIM..(e + 1) * ACTION_DIM].copy_from_slice(&a);
            }
            let outcomes: Vec<StepOutcome> = self
                .envs
                .par_iter_mut()
                .zip(actions.par_chunks(ACTION_DIM))
                .map(|(env, a)| env.step_training(a, cfg))
                .collect();
            for (e, out) in outcomes.iter().enumerate() {
                let i = buf.index(e, t);
                buf.rewards[i] = out.scaled_reward;
                buf.dones[i] = out.verdict.is_done();
                for (acc, v) in tally.terms.iter_mut().zip(&out.reward.terms) {
                    *acc += v;
                }
                tally.steps += 1;
                match out.verdict {
                    Termination::Fell => tally.falls += 1,
                    Termination::LoadFell => tally.load_falls += 1,
                    Termination::Diverged => tally.divergences += 1,
                    _ => {}
                }
                if let Some(s) = &out.summary {
                    tally.episodes += 1;
                    if self.episode_rewards.len() == EPISODE_WINDOW {
                        self.episode_rewards.pop_front();
                        self.episode_lengths.pop_front();
                    }
                    self.episode_rewards.push_back(s.total_reward);
                    self.episode_lengths.push_back(s.steps as f64);
                }
                if let Some((level, event)) = out.curriculum {
                    self.curriculum.record(e, level, event);
                }
            }
        }
        let rows = gather_rows(&self.envs, bundle.flags.privileged_load);
        buf.bootstrap = policy_pass(bundle, graph, &rows, n, false)?.values;
        Ok((buf, tally))
    }

    /// One full iteration: rollout, PPO update and the supervised updates.
    pub fn run_iteration(&mut self) -> Result<IterationLog> {
        if self.is_finished() {
            return Err(Error::contract("training already finished"));
        }
        let phase = self.phase();
        let graph = self.graph(phase);
        if graph.actor_latent != self.ppo_source {
            let live = match graph.actor_latent {
                LatentSource::Privileged => self.bundle.privileged.params.len(),
                LatentSource::Proprioceptive => self.bundle.proprio.params.len(),
            };
            self.ppo_opt.encoder = Adam::new(live);
            self.ppo_source = graph.actor_latent;
        }
        let (buf, tally) = self.collect(&graph)?;
        let n = buf.len();
        let z_dim = self.config.arch.latent_dim;
        let weights = self.config.supervised.planar_weights();

        let z = self.bundle.privileged.forward_batch(&buf.privileged, n)?.output;
        let zs = self.bundle.proprio.forward_batch(&buf.history, n)?.output;
        let rec = reconstruction_loss(&zs, &z, z_dim)?;
        let est = match &self.bundle.estimator {
            Some(e) => Some(load_estimation_loss(
                &e.forward_batch(&buf.history, n)?.output,
                &buf.load,
                &weights,
            )?),
            None => None,
        };

        let stats = ppo_update(&mut self.bundle, &mut self.ppo_opt, &buf, &self.config.ppo, &graph, &mut self.rng)?;

        let sup = &self.config.supervised;
        let minibatches = self.config.ppo.steps_per_env / sup.minibatch_steps;
        if phase == Phase::Teacher {
            // Targets come from the encoder as updated by PPO, held fixed.
            let target = self.bundle.privileged.forward_batch(&buf.privileged, n)?.output;
            supervised_epochs(
                &mut self.bundle.proprio,
                &mut self.proprio_opt,
                &buf.history,
                &target,
                None,
                sup.epochs,
                minibatches,
                sup.learning_rate,
                &mut self.rng,
            )?;
        }
        if phase == Phase::Teacher || self.config.reinforce.train_estimator {
            if let (Some(net), Some(opt)) = (self.bundle.estimator.as_mut(), self.estimator_opt.as_mut()) {
                supervised_epochs(
                    net,
                    opt,
                    &buf.history,
                    &buf.load,
                    Some(&weights),
                    sup.epochs,
                    minibatches,
                    sup.learning_rate,
                    &mut self.rng,
                )?;
            }
        }

        let window = |q: &VecDeque<f64>| {
            if q.is_empty() {
                f64::NAN
            } else {
                q.iter().sum::<f64>() / q.len() as f64
            }
        };
        let mut reward_terms = tally.terms;
        for v in reward_terms.iter_mut() {
            *v /= tally.steps.max(1) as f64;
        }
        let log = IterationLog {
            iteration: self.iteration,
            phase,
            surrogate: stats.surrogate,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            mean_kl: stats.mean_kl,
            clip_fraction: stats.clip_fraction,
            learning_rate: stats.lr,
            mean_episode_reward: window(&self.episode_rewards),
            mean_episode_length: window(&self.episode_lengths),
            episodes: tally.episodes,
            falls: tally.falls,
            load_falls: tally.load_falls,
            divergences: tally.divergences,
            mean_level: self.curriculum.mean_level(),
            reconstruction_loss: rec,
            estimation_loss: est,
            reward_terms,
        };
        self.iteration += 1;
        Ok(log)
    }

    fn run_phase(&mut self, phase: Phase, observe: &mut dyn FnMut(&Trainer, &IterationLog) -> Result<()>) -> Result<()> {
        while !self.is_finished() && self.phase() == phase {
            let log = self.run_iteration()?;
            observe(self, &log)?;
        }
        Ok(())
    }

    /// Iterate until the teacher-student phase is over.
    pub fn run_teacher_student_phase(&mut self, observe: &mut dyn FnMut(&Trainer, &IterationLog) -> Result<()>) -> Result<()> {
        self.run_phase(Phase::Teacher, observe)
    }

    /// Iterate until the reinforce phase is over.
    pub fn run_student_reinforce_phase(
        &mut self,
        observe: &mut dyn FnMut(&Trainer, &IterationLog) -> Result<()>,
    ) -> Result<()> {
        self.run_phase(Phase::Reinforce, observe)
    }

    pub fn run(&mut self, observe: &mut dyn FnMut(&Trainer, &IterationLog) -> Result<()>) -> Result<()> {
        self.run_teacher_student_phase(observe)?;
        self.run_student_reinforce_phase(observe)
    }
}

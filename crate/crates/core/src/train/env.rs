use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{randomize_env, terrain_for_level, update_curriculum, CurriculumEvent, EnvDraw, EpisodeSummary, TrainConfig};
use crate::load::{LoadBody, LoadCharacteristics, LoadState};
use crate::policy::{DynParams, FullState, ObsNoise, Observation, ObservationHistory, ACTION_DIM};
use crate::rewards::{compute_reward, RewardBreakdown, RewardConfig, RewardInputs};
use crate::sim::{
    step_with, Actuation, RobotModel, RobotState, SimConfig, TerrainKind, TerrainProfile, Wrench, JOINT_COUNT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Running,
    Fell,
    Timeout,
    LoadFell,
    /// The simulator diverged; the environment was reset.
    Diverged,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Running => "running",
            Termination::Fell => "fell",
            Termination::Timeout => "timeout",
            Termination::LoadFell => "load_fell",
            Termination::Diverged => "diverged",
        }
    }

    pub fn is_done(self) -> bool {
        self != Termination::Running
    }
}

/// Fell: torso contact or |pitch| beyond `fall_pitch`. Load fell: the load
/// left the plate. Timeout: `steps` reached `max_steps`.
pub fn check_termination(
    state: &RobotState,
    load: &LoadState,
    steps: usize,
    max_steps: usize,
    fall_pitch: f64,
) -> Termination {
    if state.torso_contact || state.pitch.abs() > fall_pitch {
        Termination::Fell
    } else if load.fallen() {
        Termination::LoadFell
    } else if steps >= max_steps {
        Termination::Timeout
    } else {
        Termination::Running
    }
}

/// Per-environment behaviour that does not change between episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSettings {
    pub noise: ObsNoise,
    pub rewards: RewardConfig,
    pub history: usize,
    pub max_steps: usize,
    /// Push period in control steps; `None` disables pushes.
    pub push_steps: Option<usize>,
    pub push_speed: f64,
    pub action_scale: f64,
    pub action_clip: f64,
    pub fall_pitch: f64,
    pub reward_scale: f64,
}

impl EnvSettings {
    pub fn training(cfg: &TrainConfig) -> Self {
        let mut rewards = cfg.rewards;
        if !cfg.role.flags().load_rewards {
            rewards.weights.load_lin_vel = 0.0;
        }
        EnvSettings {
            noise: cfg.noise,
            rewards,
            history: cfg.arch.history,
            max_steps: cfg.episode_steps(),
            push_steps: Some(cfg.push_steps()),
            push_speed: cfg.episode.push_speed,
            action_scale: cfg.episode.action_scale,
            action_clip: cfg.episode.action_clip,
            fall_pitch: cfg.episode.fall_pitch,
            reward_scale: cfg.episode.reward_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    /// `reward.total * reward_scale`, the value PPO trains on.
    pub scaled_reward: f64,
    pub verdict: Termination,
    pub pushed: bool,
    /// Present when this step ended the episode.
    pub summary: Option<EpisodeSummary>,
    pub curriculum: Option<(usize, CurriculumEvent)>,
}

/// One simulated robot with its load, terrain and episode bookkeeping.
#[derive(Debug, Clone)]
pub struct Env {
    pub index: usize,
    pub settings: EnvSettings,
    rng: ChaCha8Rng,
    pub kind: TerrainKind,
    pub level: usize,
    pub terrain: TerrainProfile,
    pub params: DynParams,
    pub model: RobotModel,
    pub sim: SimConfig,
    pub delay_substeps: usize,
    pub robot: RobotState,
    pub load: LoadBody,
    pub command: f64,
    pub obs: Observation,
    pub history: ObservationHistory,
    /// a_{t-1}, a_{t-2}.
    actions: [[f64; ACTION_DIM]; 2],
    target: [f64; JOINT_COUNT],
    air_time: [f64; 2],
    pub steps: usize,
    start_x: f64,
    tracking_sum: f64,
    reward_sum: f64,
}

impl Env {
    /// Environment seeded with its own stream of `root_seed`, set up from
    /// `draw`.
    pub fn new(
        index: usize,
        settings: EnvSettings,
        root_seed: u64,
        kind: TerrainKind,
        terrain: TerrainProfile,
        draw: EnvDraw,
        command: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(index as u64 + 1);
        let history = ObservationHistory::new(settings.history);
        let obs = Observation([0.0; crate::policy::OBS_DIM]);
        let mut env = Env {
            index,
            settings,
            rng,
            kind,
            level: 0,
            terrain,
            params: draw.params,
            model: draw.model.clone(),
            sim: draw.sim.clone(),
            delay_substeps: 0,
            robot: draw.robot.clone(),
            load: LoadBody::new(draw.load_params, draw.load_state),
            command,
            obs,
            history,
            actions: [[0.0; ACTION_DIM]; 2],
            target: draw.model.default_joint_angles,
            air_time: [0.0; 2],
            steps: 0,
            start_x: 0.0,
            tracking_sum: 0.0,
            reward_sum: 0.0,
        };
        env.install(terrain, draw, command);
        env
    }

    /// Training environment at curriculum level 0 with a fresh random draw.
    pub fn training(index: usize, cfg: &TrainConfig) -> Self {
        let kind = TerrainKind::ALL[index % TerrainKind::ALL.len()];
        let mut env = Env::new(
            index,
            EnvSettings::training(cfg),
            cfg.seed,
            kind,
            TerrainProfile::Plane,
            randomize_env(&cfg.randomization, &cfg.model, &cfg.sim, &TerrainProfile::Plane, &mut ChaCha8Rng::seed_from_u64(0)),
            0.0,
        );
        env.reset_training(cfg);
        env
    }

    /// Start an episode from `draw` on `terrain`.
    pub fn install(&mut self, terrain: TerrainProfile, draw: EnvDraw, command: f64) {
        self.terrain = terrain;
        self.params = draw.params;
        self.model = draw.model;
        self.sim = draw.sim;
        self.delay_substeps = draw.delay_substeps;
        self.robot = draw.robot;
        self.load = LoadBody::new(draw.load_params, draw.load_state);
        self.command = command;
        self.actions = [[0.0; ACTION_DIM]; 2];
        self.target = self.model.default_joint_angles;
        self.air_time = [0.0; 2];
        self.steps = 0;
        self.start_x = self.robot.base_position[0];
        self.tracking_sum = 0.0;
        self.reward_sum = 0.0;
        self.history.clear();
        self.observe();
    }

    /// New training episode: terrain at the current level, fresh
    /// randomization, load and command.
    pub fn reset_training(&mut self, cfg: &TrainConfig) {
        let terrain = terrain_for_level(self.kind, self.level, &cfg.curriculum, self.rng.gen());
        let draw = randomize_env(&cfg.randomization, &cfg.model, &cfg.sim, &terrain, &mut self.rng);
        let [lo, hi] = cfg.episode.lin_vel_command;
        let command = if lo == hi { lo } else { self.rng.gen_range(lo..=hi) };
        self.install(terrain, draw, command);
    }

    fn observe(&mut self) {
        self.obs = Observation::build(
            &self.model,
            &self.robot,
            self.command,
            &self.actions[0],
            &self.settings.noise,
            &mut self.rng,
        );
        self.history.push(&self.obs);
    }

    pub fn full_state(&self) -> FullState {
        FullState::build(&self.obs, &self.robot, &self.terrain)
    }

    pub fn load_characteristics(&self) -> LoadCharacteristics {
        self.load.characteristics(&self.model, &self.robot)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn previous_action(&self) -> &[f64; ACTION_DIM] {
        &self.actions[0]
    }

    /// Apply one policy action for a control period. The episode is not
    /// reset here; see [`Env::step_training`].
    pub fn step(&mut self, raw_action: &[f64]) -> StepOutcome {
        self.advance(raw_action, false)
    }

    /// A control period with every motor switched off.
    pub fn step_limp(&mut self) -> StepOutcome {
        self.advance(&[0.0; ACTION_DIM], true)
    }

    fn advance(&mut self, raw_action: &[f64], limp: bool) -> StepOutcome {
        let s = &self.settings;
        let mut a = [0.0; ACTION_DIM];
        let mut target = [0.0; JOINT_COUNT];
        for j in 0..ACTION_DIM {
            a[j] = raw_action[j].clamp(-s.action_clip, s.action_clip);
            target[j] = self.model.default_joint_angles[j] + s.action_scale * a[j];
        }
        let actuation = if limp {
            Actuation::Limp
        } else {
            Actuation::Pd {
                target,
                previous: self.target,
                delay_substeps: self.delay_substeps,
            }
        };
        let mut pushed = false;
        if let Some(k) = s.push_steps {
            if self.steps > 0 && self.steps.is_multiple_of(k) {
                let sign = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
                self.robot.base_velocity[0] = sign * s.push_speed;
                pushed = true;
            }
        }
        let next = step_with(
            &self.model,
            &self.robot,
            &actuation,
            &self.terrain,
            &Wrench::ZERO,
            &self.sim,
            Some(&mut self.load),
            None,
        );
        self.load.finish_period();
        self.steps += 1;
        let robot = match next {
            Ok(r) => r,
            Err(_) => {
                let zero = RewardBreakdown {
                    terms: [0.0; crate::rewards::TERM_COUNT],
                    total: 0.0,
                };
                return StepOutcome {
                    reward: zero,
                    scaled_reward: 0.0,
                    verdict: Termination::Diverged,
                    pushed,
                    summary: Some(self.summary(Termination::Diverged)),
                    curriculum: None,
                };
            }
        };
        self.robot = robot;

        let dt = self.sim.control_dt();
        let mut touchdown = [0.0; 2];
        for k in 0..2 {
            let contact = self.robot.foot_contact[k];
            let first = contact && self.air_time[k] > 0.0;
            self.air_time[k] += dt;
            if first {
                touchdown[k] = self.air_time[k];
            }
            if contact {
                self.air_time[k] = 0.0;
            }
        }

        let load_v = (!self.load.state.fallen()).then(|| self.load_characteristics().velocity());
        let reward = compute_reward(
            &self.settings.rewards,
            &RewardInputs {
                model: &self.model,
                state: &self.robot,
                terrain: &self.terrain,
                command: self.command,
                action: &a,
                prev_action: &self.actions[0],
                prev_prev_action: &self.actions[1],
                load_velocity: load_v,
                touchdown_air_time: touchdown,
            },
        );
        let err = self.command - self.robot.base_velocity_local()[0];
        self.tracking_sum += (-4.0 * err * err).exp();
        let scaled_reward = reward.total * self.settings.reward_scale;
        self.reward_sum += scaled_reward;
        self.actions = [a, self.actions[0]];
        self.target = target;

        let verdict = check_termination(
            &self.robot,
            &self.load.state,
            self.steps,
            self.settings.max_steps,
            self.settings.fall_pitch,
        );
        if !verdict.is_done() {
            self.observe();
        }
        StepOutcome {
            reward,
            scaled_reward,
            verdict,
            pushed,
            summary: verdict.is_done().then(|| self.summary(verdict)),
            curriculum: None,
        }
    }

    fn summary(&self, verdict: Termination) -> EpisodeSummary {
        let travelled = self.robot.base_position[0] - self.start_x;
        EpisodeSummary {
            steps: self.steps,
            duration_s: self.steps as f64 * self.sim.control_dt(),
            command: self.command,
            mean_tracking: self.tracking_sum / self.steps.max(1) as f64,
            distance: if self.command < 0.0 { -travelled } else { travelled },
            total_reward: self.reward_sum,
            verdict,
        }
    }

    /// Step, and on episode end update the curriculum level and reset.
    pub fn step_training(&mut self, raw_action: &[f64], cfg: &TrainConfig) -> StepOutcome {
        let mut out = self.step(raw_action);
        if let Some(summary) = &out.summary {
            if summary.verdict != Termination::Diverged {
                let (level, event) = update_curriculum(self.level, summary, &cfg.curriculum, &mut self.rng);
                self.level = level;
                out.curriculum = Some((level, event));
            }
            self.reset_training(cfg);
        }
        out
    }
}

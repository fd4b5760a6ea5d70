use serde::{Deserialize, Serialize};

use crate::load::{LoadRanges, LOAD_DIM};
use crate::policy::{ArchConfig, ObsNoise, Role};
use crate::ppo::{LatentSource, PpoConfig};
use crate::rewards::RewardConfig;
use crate::sim::{RobotModel, SimConfig};
use crate::{Error, Result};

/// Uniform sampling ranges, `[lower, upper]`, one per randomized quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainRandomizationRanges {
    /// Multiplies each link's nominal mass and inertia.
    pub link_mass_factor: [f64; 2],
    /// kg added rigidly at the torso.
    pub payload_mass: [f64; 2],
    /// Per-axis base CoM offset (cm).
    pub base_com_cm: [f64; 2],
    /// Per-axis leg segment CoM offset (cm).
    pub leg_com_cm: [f64; 2],
    pub friction: [f64; 2],
    pub kp_factor: [f64; 2],
    pub kd_factor: [f64; 2],
    pub motor_strength: [f64; 2],
    pub action_delay_ms: [f64; 2],
    pub load_mass: [f64; 2],
    pub load_size: [f64; 2],
    pub load_friction: [f64; 2],
    pub load_initial_velocity: [f64; 2],
}

impl Default for DomainRandomizationRanges {
    fn default() -> Self {
        let load = LoadRanges::default();
        DomainRandomizationRanges {
            link_mass_factor: [0.8, 1.2],
            payload_mass: [-1.0, 3.0],
            base_com_cm: [-5.0, 5.0],
            leg_com_cm: [-1.5, 1.5],
            friction: [0.05, 1.25],
            kp_factor: [0.8, 1.2],
            kd_factor: [0.8, 1.2],
            motor_strength: [0.8, 1.2],
            action_delay_ms: [0.0, 10.0],
            load_mass: load.mass,
            load_size: load.size,
            load_friction: load.friction,
            load_initial_velocity: load.initial_speed,
        }
    }
}

impl DomainRandomizationRanges {
    pub fn load_ranges(&self) -> LoadRanges {
        LoadRanges {
            mass: self.load_mass,
            size: self.load_size,
            friction: self.load_friction,
            initial_speed: self.load_initial_velocity,
        }
    }

    fn rows(&self) -> [(&'static str, [f64; 2]); 9] {
        [
            ("link_mass_factor", self.link_mass_factor),
            ("payload_mass", self.payload_mass),
            ("base_com_cm", self.base_com_cm),
            ("leg_com_cm", self.leg_com_cm),
            ("friction", self.friction),
            ("kp_factor", self.kp_factor),
            ("kd_factor", self.kd_factor),
            ("motor_strength", self.motor_strength),
            ("action_delay_ms", self.action_delay_ms),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.rows() {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::config(
                    format!("randomization.{name}"),
                    "lower bound must not exceed upper bound",
                ));
            }
        }
        for (name, r) in [
            ("link_mass_factor", self.link_mass_factor),
            ("kp_factor", self.kp_factor),
            ("kd_factor", self.kd_factor),
            ("motor_strength", self.motor_strength),
        ] {
            if !(r[0] > 0.0) {
                return Err(Error::config(format!("randomization.{name}"), "factors must be > 0"));
            }
        }
        if !(self.friction[0] >= 0.0 && self.action_delay_ms[0] >= 0.0) {
            return Err(Error::config("randomization", "friction and delay must be >= 0"));
        }
        self.load_ranges().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub length_s: f64,
    pub push_interval_s: f64,
    pub push_speed: f64,
    /// Forward velocity command range (m/s).
    pub lin_vel_command: [f64; 2],
    /// Joint target offset per unit action (rad).
    pub action_scale: f64,
    pub action_clip: f64,
    /// |pitch| beyond this counts as a fall (rad).
    pub fall_pitch: f64,
    /// Multiplies every per-step reward before PPO sees it.
    pub reward_scale: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            length_s: 20.0,
            push_interval_s: 15.0,
            push_speed: 2.0,
            lin_vel_command: [-1.0, 1.0],
            action_scale: 0.25,
            action_clip: 10.0,
            fall_pitch: 1.0,
            reward_scale: 0.02,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_s > 0.0) {
            return Err(Error::config("episode.length_s", "must be > 0"));
        }
        if !(self.push_interval_s > 0.0 && self.push_speed >= 0.0) {
            return Err(Error::config("episode.push_interval_s", "interval must be > 0, speed >= 0"));
        }
        if !(self.lin_vel_command[0] <= self.lin_vel_command[1]) {
            return Err(Error::config("episode.lin_vel_command", "lower bound exceeds upper bound"));
        }
        if !(self.action_scale > 0.0 && self.action_clip > 0.0) {
            return Err(Error::config("episode.action_scale", "scale and clip must be > 0"));
        }
        if !(self.fall_pitch > 0.0 && self.reward_scale > 0.0) {
            return Err(Error::config("episode.fall_pitch", "fall pitch and reward scale must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    pub max_level: usize,
    /// Promote when the mean unweighted tracking term exceeds this.
    pub promote_tracking: f64,
    /// Demote when the robot covers less than this share of the commanded
    /// distance.
    pub demote_distance: f64,
    pub max_step_height: f64,
    pub step_width: f64,
    /// Peak-to-peak height of the roughest ground (m).
    pub max_rough_height: f64,
    pub rough_correlation_length: f64,
    /// Steepest slope (rad).
    pub max_slope: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            max_level: 9,
            promote_tracking: 0.8,
            demote_distance: 0.5,
            max_step_height: 0.085,
            step_width: 0.2,
            max_rough_height: 0.095,
            rough_correlation_length: 0.1,
            max_slope: 26f64.to_radians(),
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.promote_tracking > 0.0 && self.promote_tracking <= 1.0) {
            return Err(Error::config("curriculum.promote_tracking", "must lie in (0, 1]"));
        }
        if !(self.demote_distance >= 0.0) {
            return Err(Error::config("curriculum.demote_distance", "must be >= 0"));
        }
        if !(self.max_step_height >= 0.0 && self.step_width > 0.0) {
            return Err(Error::config("curriculum.max_step_height", "heights >= 0, width > 0"));
        }
        if !(self.max_rough_height >= 0.0 && self.rough_correlation_length > 0.0) {
            return Err(Error::config("curriculum.max_rough_height", "height >= 0, correlation length > 0"));
        }
        if !(self.max_slope >= 0.0 && self.max_slope < std::f64::consts::FRAC_PI_2) {
            return Err(Error::config("curriculum.max_slope", "must lie in [0, pi/2)"));
        }
        Ok(())
    }
}

/// Supervised training of the proprioceptive encoder and load estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedConfig {
    pub epochs: usize,
    /// Samples per mini-batch, per environment.
    pub minibatch_steps: usize,
    pub learning_rate: f64,
    /// Estimation loss weights in the spatial layout (position xyz,
    /// velocity xyz, mass, friction).
    pub load_loss_weights: [f64; 8],
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 5,
            minibatch_steps: 6,
            learning_rate: 1e-3,
            load_loss_weights: [3.0, 3.0, 3.0, 1.0, 1.0, 1.0, 10.0, 10.0],
        }
    }
}

impl SupervisedConfig {
    /// Weights for the planar l_t: x position, x velocity, mass, friction.
    pub fn planar_weights(&self) -> [f64; LOAD_DIM] {
        let w = &self.load_loss_weights;
        [w[0], w[3], w[6], w[7]]
    }

    pub fn validate(&self, steps_per_env: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("supervised.epochs", "must be > 0"));
        }
        if self.minibatch_steps == 0 || !steps_per_env.is_multiple_of(self.minibatch_steps) {
            return Err(Error::config("supervised.minibatch_steps", "must be > 0 and divide ppo.steps_per_env"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("supervised.learning_rate", "must be > 0"));
        }
        if !self.load_loss_weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(Error::config("supervised.load_loss_weights", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReinforceConfig {
    /// Latent the critic receives during the reinforce phase.
    pub critic_latent: LatentSource,
    /// Keep fitting the load estimator during the reinforce phase.
    pub train_estimator: bool,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            critic_latent: LatentSource::Proprioceptive,
            train_estimator: true,
        }
    }
}

/// Everything a training run depends on besides the code itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub role: Role,
    pub seed: u64,
    pub envs: usize,
    pub teacher_iterations: usize,
    pub reinforce_iterations: usize,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    pub episode: EpisodeConfig,
    pub noise: ObsNoise,
    pub randomization: DomainRandomizationRanges,
    pub curriculum: CurriculumConfig,
    pub ppo: PpoConfig,
    pub supervised: SupervisedConfig,
    pub reinforce: ReinforceConfig,
    pub rewards: RewardConfig,
    pub arch: ArchConfig,
    pub sim: SimConfig,
    pub model: RobotModel,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            role: Role::Ours,
            seed: 0,
            envs: 64,
            teacher_iterations: 1500,
            reinforce_iterations: 300,
            checkpoint_every: 500,
            episode: EpisodeConfig::default(),
            noise: ObsNoise::default(),
            randomization: DomainRandomizationRanges::default(),
            curriculum: CurriculumConfig::default(),
            ppo: PpoConfig::default(),
            supervised: SupervisedConfig::default(),
            reinforce: ReinforceConfig::default(),
            rewards: RewardConfig::default(),
            arch: ArchConfig::desk(),
            sim: SimConfig::default(),
            model: RobotModel::default(),
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            envs: 8192,
            teacher_iterations: 7500,
            reinforce_iterations: 1500,
            arch: ArchConfig::paper(),
            ..TrainConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(TrainConfig::desk()),
            "paper" => Ok(TrainConfig::paper()),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.teacher_iterations + self.reinforce_iterations
    }

    pub fn episode_steps(&self) -> usize {
        (self.episode.length_s * self.sim.control_frequency).round() as usize
    }

    pub fn push_steps(&self) -> usize {
        ((self.episode.push_interval_s * self.sim.control_frequency).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.envs == 0 {
            return Err(Error::config("envs", "must be > 0"));
        }
        if self.teacher_iterations == 0 {
            return Err(Error::config("teacher_iterations", "must be > 0"));
        }
        if self.reinforce_iterations == 0 {
            return Err(Error::config("reinforce_iterations", "must be > 0"));
        }
        self.episode.validate()?;
        self.randomization.validate()?;
        self.curriculum.validate()?;
        self.ppo.validate()?;
        self.supervised.validate(self.ppo.steps_per_env)?;
        self.arch.validate()?;
        self.sim.validate()?;
        self.model.validate()
    }
}

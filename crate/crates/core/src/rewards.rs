//! Per-step reward terms.

use serde::{Deserialize, Serialize};

use crate::sim::{RobotModel, RobotState, TerrainProfile, JOINT_COUNT};

pub const TERM_COUNT: usize = 15;

/// Column names, in breakdown order.
pub const TERM_NAMES: [&str; TERM_COUNT] = [
    "lin_vel_tracking",
    "ang_vel_tracking",
    "lin_vel_z",
    "ang_vel_xy",
    "joint_acc",
    "joint_power",
    "joint_torque",
    "base_height",
    "action_rate",
    "action_smoothness",
    "collision",
    "joint_limit",
    "feet_air_time",
    "feet_contact_forces",
    "load_lin_vel",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub lin_vel_tracking: f64,
    pub ang_vel_tracking: f64,
    pub lin_vel_z: f64,
    pub ang_vel_xy: f64,
    pub joint_acc: f64,
    pub joint_power: f64,
    pub joint_torque: f64,
    pub base_height: f64,
    pub action_rate: f64,
    pub action_smoothness: f64,
    pub collision: f64,
    pub joint_limit: f64,
    pub feet_air_time: f64,
    pub feet_contact_forces: f64,
    pub load_lin_vel: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lin_vel_tracking: 2.0,
            ang_vel_tracking: 0.5,
            lin_vel_z: -2.0,
            ang_vel_xy: -0.05,
            joint_acc: -2.5e-7,
            joint_power: -2e-5,
            joint_torque: -1e-5,
            base_height: -1.2,
            action_rate: -0.02,
            action_smoothness: -0.001,
            collision: -1.0,
            joint_limit: -2.0,
            feet_air_time: 1.0,
            feet_contact_forces: -2.0,
            load_lin_vel: 2.0,
        }
    }
}

impl RewardWeights {
    pub const ZERO: RewardWeights = RewardWeights {
        lin_vel_tracking: 0.0,
        ang_vel_tracking: 0.0,
        lin_vel_z: 0.0,
        ang_vel_xy: 0.0,
        joint_acc: 0.0,
        joint_power: 0.0,
        joint_torque: 0.0,
        base_height: 0.0,
        action_rate: 0.0,
        action_smoothness: 0.0,
        collision: 0.0,
        joint_limit: 0.0,
        feet_air_time: 0.0,
        feet_contact_forces: 0.0,
        load_lin_vel: 0.0,
    };

    pub fn as_array(&self) -> [f64; TERM_COUNT] {
        [
            self.lin_vel_tracking,
            self.ang_vel_tracking,
            self.lin_vel_z,
            self.ang_vel_xy,
            self.joint_acc,
            self.joint_power,
            self.joint_torque,
            self.base_height,
            self.action_rate,
            self.action_smoothness,
            self.collision,
            self.joint_limit,
            self.feet_air_time,
            self.feet_contact_forces,
            self.load_lin_vel,
        ]
    }
}

/// Reward settings beyond the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    /// Use the printed smoothness expression ‖a_t − 2a_{t−1} − a_{t−2}‖²
    /// instead of the second difference.
    pub literal_smoothness: bool,
    /// Per-foot force above which contact forces are penalized (N).
    pub contact_force_threshold: f64,
    /// Air time credited as neutral at touchdown (s).
    pub air_time_target: f64,
    /// Minimum command magnitude for air-time credit (m/s).
    pub air_time_command: f64,
    /// A joint counts as at its limit within this fraction of its range.
    pub limit_margin: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            weights: RewardWeights::default(),
            literal_smoothness: false,
            contact_force_threshold: 200.0,
            air_time_target: 0.5,
            air_time_command: 0.1,
            limit_margin: 0.01,
        }
    }
}

/// Everything a reward evaluation reads.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs<'a> {
    pub model: &'a RobotModel,
    pub state: &'a RobotState,
    pub terrain: &'a TerrainProfile,
    /// Forward velocity command (m/s); the yaw command is zero in the plane.
    pub command: f64,
    pub action: &'a [f64; JOINT_COUNT],
    pub prev_action: &'a [f64; JOINT_COUNT],
    pub prev_prev_action: &'a [f64; JOINT_COUNT],
    /// Load velocity in the base frame (m/s); `None` once the load is off
    /// the robot, which earns no load reward.
    pub load_velocity: Option<f64>,
    /// Air time of each foot that touched down this step (s), zero otherwise.
    pub touchdown_air_time: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    /// Weighted terms in [`TERM_NAMES`] order.
    pub terms: [f64; TERM_COUNT],
    pub total: f64,
}

impl RewardBreakdown {
    pub fn get(&self, name: &str) -> Option<f64> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.terms[i])
    }
}

fn sq_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum()
}

/// Unweighted term values in [`TERM_NAMES`] order.
pub fn raw_terms(cfg: &RewardConfig, input: &RewardInputs) -> [f64; TERM_COUNT] {
    let s = input.state;
    let [vx, vz] = s.base_velocity_local();
    let lin_err = input.command - vx;
    let ang_err = 0.0 - s.pitch_rate;
    let height = s.base_position[1] - input.terrain.sample_height(s.base_position[0]);
    let a = input.action;
    let a1 = input.prev_action;
    let a2 = input.prev_prev_action;
    let smooth_sign = if cfg.literal_smoothness { -1.0 } else { 1.0 };
    let limits = (0..JOINT_COUNT)
        .filter(|&j| {
            let (lo, hi) = (input.model.joint_lower[j], input.model.joint_upper[j]);
            let margin = cfg.limit_margin * (hi - lo);
            s.q[j] <= lo + margin || s.q[j] >= hi - margin
        })
        .count() as f64;
    let air = if input.command.abs() > cfg.air_time_command {
        input
            .touchdown_air_time
            .iter()
            .filter(|t| **t > 0.0)
            .map(|t| t - cfg.air_time_target)
            .sum()
    } else {
        0.0
    };
    let contact_excess: f64 = s
        .foot_forces
        .iter()
        .map(|f| (f[0].hypot(f[1]) - cfg.contact_force_threshold).max(0.0))
        .sum();
    [
        (-4.0 * lin_err * lin_err).exp(),
        (-4.0 * ang_err * ang_err).exp(),
        vz * vz,
        // No roll or yaw rate exists in the sagittal plane.
        0.0,
        sq_norm(s.qdd.iter().copied()),
        (0..JOINT_COUNT).map(|j| s.tau[j].abs() * s.qd[j].abs()).sum(),
        sq_norm(s.tau.iter().copied()),
        (input.model.base_height_target - height).powi(2),
        sq_norm((0..JOINT_COUNT).map(|j| a[j] - a1[j])),
        sq_norm((0..JOINT_COUNT).map(|j| a[j] - 2.0 * a1[j] + smooth_sign * a2[j])),
        s.collision_count as f64,
        limits,
        air,
        contact_excess,
        input.load_velocity.map_or(0.0, |v| 1.0 / (1.0 + v.abs())),
    ]
}

pub fn compute_reward(cfg: &RewardConfig, input: &RewardInputs) -> RewardBreakdown {
    let raw = raw_terms(cfg, input);
    let w = cfg.weights.as_array();
    let mut terms = [0.0; TERM_COUNT];
    for i in 0..TERM_COUNT {
        terms[i] = w[i] * raw[i];
    }
    RewardBreakdown {
        terms,
        total: terms.iter().sum(),
    }
}

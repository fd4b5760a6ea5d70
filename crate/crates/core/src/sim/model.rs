use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of actuated joints: front hip, front knee, rear hip, rear knee.
pub const JOINT_COUNT: usize = 4;
/// Generalized coordinates: base x, base z, base pitch, then the four joints.
pub const DOF: usize = 3 + JOINT_COUNT;
/// Rigid links: torso, front thigh, front calf, rear thigh, rear calf.
pub const LINK_COUNT: usize = 5;

pub const TORSO: usize = 0;

/// Planar sagittal quadruped. Each planar leg stands for a left/right pair
/// driven in phase, so every planar joint carries `actuators_per_joint` motors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    /// kg, ordered torso, front thigh, front calf, rear thigh, rear calf.
    pub link_masses: [f64; LINK_COUNT],
    /// m. The torso entry is the body length.
    pub link_lengths: [f64; LINK_COUNT],
    /// kg·m² about each link's center of mass.
    pub link_inertias: [f64; LINK_COUNT],
    /// Center-of-mass offsets in each link's own frame (m). For the torso the
    /// frame is the base frame; for leg segments the first component runs
    /// along the segment and the second perpendicular to it.
    pub link_com_offsets: [[f64; 2]; LINK_COUNT],
    /// Rigid mass added at the torso center of mass (kg, may be negative).
    pub payload_mass: f64,
    /// Torso height, used for the torso collision corners (m).
    pub torso_height: f64,
    /// Horizontal distance from the base origin to each hip (m).
    pub hip_offset: f64,
    pub default_joint_angles: [f64; JOINT_COUNT],
    pub joint_lower: [f64; JOINT_COUNT],
    pub joint_upper: [f64; JOINT_COUNT],
    /// Per-motor torque limit (N·m).
    pub torque_limits: [f64; JOINT_COUNT],
    pub actuators_per_joint: f64,
    /// Nominal base height above the terrain (m).
    pub base_height_target: f64,
    /// Plate length along the body x axis (m).
    pub plate_length: f64,
    /// Plate surface height above the base origin (m).
    pub plate_height: f64,
    /// Plate center x offset in the base frame (m).
    pub plate_offset: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        // Hip angle acos(0.75) puts the feet straight under the hips at 0.30 m
        // with 0.2 m segments.
        let hip = 0.722_734_247_813_415_6;
        let knee = -2.0 * hip;
        // The rear leg mirrors the front one (knees point away from each other).
        let torso_len = 0.40;
        let torso_h = 0.10;
        let torso_m = 6.0;
        let thigh = (1.5, 0.2);
        let calf = (0.35, 0.2);
        Self {
            link_masses: [torso_m, thigh.0, calf.0, thigh.0, calf.0],
            link_lengths: [torso_len, thigh.1, calf.1, thigh.1, calf.1],
            link_inertias: [
                torso_m * (torso_len * torso_len + torso_h * torso_h) / 12.0,
                thigh.0 * thigh.1 * thigh.1 / 12.0,
                calf.0 * calf.1 * calf.1 / 12.0,
                thigh.0 * thigh.1 * thigh.1 / 12.0,
                calf.0 * calf.1 * calf.1 / 12.0,
            ],
            link_com_offsets: [[0.0; 2]; LINK_COUNT],
            payload_mass: 0.0,
            torso_height: torso_h,
            hip_offset: 0.19,
            default_joint_angles: [hip, knee, -hip, -knee],
            joint_lower: [-1.0, -2.7, -2.4, 0.5],
            joint_upper: [2.4, -0.5, 1.0, 2.7],
            torque_limits: [23.7, 45.4, 23.7, 45.4],
            actuators_per_joint: 2.0,
            base_height_target: 0.30,
            plate_length: 0.8,
            plate_height: 0.08,
            plate_offset: 0.0,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        for i in 0..LINK_COUNT {
            if !(self.link_masses[i] > 0.0) {
                return Err(Error::config("link_masses", format!("entry {i} must be > 0")));
            }
            if !(self.link_lengths[i] > 0.0) {
                return Err(Error::config("link_lengths", format!("entry {i} must be > 0")));
            }
            if !(self.link_inertias[i] > 0.0) {
                return Err(Error::config("link_inertias", format!("entry {i} must be > 0")));
            }
        }
        if !(self.link_masses[TORSO] + self.payload_mass > 0.0) {
            return Err(Error::config("payload_mass", "torso mass plus payload must stay > 0"));
        }
        for j in 0..JOINT_COUNT {
            if !(self.joint_lower[j] < self.joint_upper[j]) {
                return Err(Error::config("joint_lower", format!("joint {j}: lower must be < upper")));
            }
            if !(self.torque_limits[j] > 0.0) {
                return Err(Error::config("torque_limits", format!("joint {j} must be > 0")));
            }
        }
        if !(self.plate_length > 0.0) {
            return Err(Error::config("plate_length", "must be > 0"));
        }
        if !(self.actuators_per_joint > 0.0) {
            return Err(Error::config("actuators_per_joint", "must be > 0"));
        }
        Ok(())
    }

    pub fn torso_mass(&self) -> f64 {
        self.link_masses[TORSO] + self.payload_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.link_masses.iter().sum::<f64>() + self.payload_mass
    }

    pub fn plate_half_length(&self) -> f64 {
        0.5 * self.plate_length
    }

    /// Hip x position in the base frame for leg 0 (front) or 1 (rear).
    pub fn hip_x(&self, leg: usize) -> f64 {
        if leg == 0 {
            self.hip_offset
        } else {
            -self.hip_offset
        }
    }
}

/// Physics and actuation settings shared by every simulator step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub control_frequency: f64,
    pub substeps: usize,
    /// Gravitational acceleration magnitude (m/s²), acting along -z.
    pub gravity: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub ground_friction: f64,
    pub kp: f64,
    pub kd: f64,
    /// Multiplies every motor torque before clamping.
    pub motor_strength: f64,
    /// Any state magnitude beyond this is reported as divergence.
    pub divergence_bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_frequency: 50.0,
            substeps: 4,
            gravity: 9.81,
            contact_stiffness: 2.0e4,
            contact_damping: 2.0e2,
            ground_friction: 1.0,
            kp: 20.0,
            kd: 0.5,
            motor_strength: 1.0,
            divergence_bound: 1.0e4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_frequency > 0.0) {
            return Err(Error::config("control_frequency", "must be > 0"));
        }
        if self.substeps < 1 {
            return Err(Error::config("substeps", "must be >= 1"));
        }
        if !(self.contact_stiffness >= 0.0) {
            return Err(Error::config("contact_stiffness", "must be >= 0"));
        }
        if !(self.contact_damping >= 0.0) {
            return Err(Error::config("contact_damping", "must be >= 0"));
        }
        if !(self.ground_friction >= 0.0) {
            return Err(Error::config("ground_friction", "must be >= 0"));
        }
        Ok(())
    }

    /// Control period in seconds.
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_frequency
    }

    /// Physics substep in seconds.
    pub fn physics_dt(&self) -> f64 {
        self.control_dt() / self.substeps as f64
    }
}

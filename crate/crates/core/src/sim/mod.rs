//! Planar articulated quadruped: torso plus two 2-segment legs in the
//! sagittal plane, PD joint actuation, penalty foot-ground contact and
//! parameterized terrain profiles.

mod dynamics;
mod model;
mod terrain;

pub use dynamics::{
    mechanical_energy, pd_torques, reset, reset_at, step, step_with, Actuation, Attachment, Body,
    ContactReport, Coupling, Dynamics, Kinematics, Mat7, PointJacobian, PointKinematics,
    RobotState, StepTrace, Vec2, Vec7, Wrench, RESET_JOINT_NOISE,
};
pub use model::{RobotModel, SimConfig, DOF, JOINT_COUNT, LINK_COUNT, TORSO};
pub use terrain::{GroundContact, TerrainKind, TerrainProfile};

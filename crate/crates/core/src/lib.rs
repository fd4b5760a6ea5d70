//! Planar quadruped carrying a sliding load on a torso-mounted plate, trained
//! with a two-phase teacher-student PPO pipeline and a concurrently trained
//! proprioceptive load estimator.
//!
//! Module map:
//! - [`sim`]: planar 5-link articulated robot, PD actuation, penalty contact, terrain.
//! - [`load`]: Coulomb stick-slip load on the plate and the load-characteristics vector.
//! - [`nn`]: dense networks, reverse-mode gradients, Adam, Gaussian head, checkpoints.
//! - [`policy`]: encoder/estimator/actor/critic wiring with per-role input routing.
//! - [`rewards`]: per-step reward terms with breakdown.
//! - [`ppo`]: GAE, clipped surrogate update, adaptive learning rate.
//! - [`train`]: environments, randomization, curriculum, both training phases.
//! - [`eval`]: dynamic and stationary scenarios and the policy comparison table.
//! - [`persist`]: run configuration, presets, manifests and checkpoint files.

// Negated comparisons reject NaN; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod load;
pub mod nn;
pub mod persist;
pub mod policy;
pub mod ppo;
pub mod rewards;
pub mod sim;
pub mod train;

pub use error::{Error, Result};

//! Observation layouts and the five-network policy bundle.
//!
//! Layouts (planar):
//!
//! * `o_t` (16): pitch rate, projected gravity (x, z), forward velocity
//!   command, joint positions relative to the default pose (4), joint
//!   velocities (4), previous action (4).
//! * `s_t` (36): `o_t`, forward base velocity, 9 terrain height samples,
//!   joint torques (4), joint accelerations (4), foot contact force norms (2).
//! * `p_t` (21): see [`DynParams::to_vec`].
//! * `l_t` (4): load position and velocity along the base x axis, load mass,
//!   load friction coefficient.
//!
//! Observation channels are multiplied by fixed scales so every input is of
//! order one; noise is added before scaling, in physical units.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::load::LOAD_DIM;
use crate::nn::{GaussianHead, Mlp, MlpSpec};
use crate::sim::{RobotModel, RobotState, TerrainProfile, JOINT_COUNT, LINK_COUNT};
use crate::{Error, Result};

pub const OBS_DIM: usize = 16;
pub const STATE_DIM: usize = 36;
pub const DYN_DIM: usize = 21;
pub const ACTION_DIM: usize = JOINT_COUNT;
pub const HEIGHT_SAMPLES: usize = 9;
/// Spacing of the terrain samples around the base (m).
pub const HEIGHT_SPACING: f64 = 0.1;

/// Per-channel scales applied to observations.
pub mod scale {
    pub const ANG_VEL: f64 = 0.25;
    pub const COMMAND: f64 = 2.0;
    pub const JOINT_VEL: f64 = 0.05;
    pub const LIN_VEL: f64 = 2.0;
    pub const HEIGHT: f64 = 5.0;
    pub const TORQUE: f64 = 0.05;
    pub const JOINT_ACC: f64 = 0.002;
    pub const FOOT_FORCE: f64 = 0.01;
}

/// Additive uniform noise amplitudes on the proprioceptive channels, in
/// physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsNoise {
    pub angular_velocity: f64,
    pub gravity: f64,
    pub joint_position: f64,
    pub joint_velocity: f64,
}

impl ObsNoise {
    pub const NONE: ObsNoise = ObsNoise {
        angular_velocity: 0.0,
        gravity: 0.0,
        joint_position: 0.0,
        joint_velocity: 0.0,
    };
}

impl Default for ObsNoise {
    fn default() -> Self {
        ObsNoise {
            angular_velocity: 0.2,
            gravity: 0.05,
            joint_position: 0.01,
            joint_velocity: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

fn noise<R: Rng>(rng: &mut R, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.gen_range(-amp..=amp)
    } else {
        0.0
    }
}

impl Observation {
    pub fn build<R: Rng>(
        model: &RobotModel,
        state: &RobotState,
        command: f64,
        prev_action: &[f64; ACTION_DIM],
        noise_amp: &ObsNoise,
        rng: &mut R,
    ) -> Self {
        let mut o = [0.0; OBS_DIM];
        o[0] = (state.pitch_rate + noise(rng, noise_amp.angular_velocity)) * scale::ANG_VEL;
        let g = state.projected_gravity();
        o[1] = g[0] + noise(rng, noise_amp.gravity);
        o[2] = g[1] + noise(rng, noise_amp.gravity);
        o[3] = command * scale::COMMAND;
        for j in 0..JOINT_COUNT {
            o[4 + j] = state.q[j] - model.default_joint_angles[j] + noise(rng, noise_amp.joint_position);
            o[8 + j] = (state.qd[j] + noise(rng, noise_amp.joint_velocity)) * scale::JOINT_VEL;
            o[12 + j] = prev_action[j];
        }
        Observation(o)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// The last H+1 observations, oldest first, zero-padded after a reset.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationHistory {
    frames: Vec<[f64; OBS_DIM]>,
}

impl ObservationHistory {
    /// Empty (all-zero) history holding `h + 1` frames.
    pub fn new(h: usize) -> Self {
        ObservationHistory {
            frames: vec![[0.0; OBS_DIM]; h + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, o: &Observation) {
        self.frames.rotate_left(1);
        let last = self.frames.len() - 1;
        self.frames[last] = o.0;
    }

    pub fn clear(&mut self) {
        self.frames.iter_mut().for_each(|f| *f = [0.0; OBS_DIM]);
    }

    pub fn newest(&self) -> &[f64; OBS_DIM] {
        &self.frames[self.frames.len() - 1]
    }

    /// Flattened, oldest first.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for f in &self.frames {
            out.extend_from_slice(f);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.frames.len() * OBS_DIM);
        self.flatten_into(&mut v);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState(pub [f64; STATE_DIM]);

impl FullState {
    pub fn build(obs: &Observation, state: &RobotState, terrain: &TerrainProfile) -> Self {
        let mut s = [0.0; STATE_DIM];
        s[..OBS_DIM].copy_from_slice(&obs.0);
        s[16] = state.base_velocity_local()[0] * scale::LIN_VEL;
        let [x, z] = state.base_position;
        let half = (HEIGHT_SAMPLES / 2) as f64;
        for k in 0..HEIGHT_SAMPLES {
            let dx = (k as f64 - half) * HEIGHT_SPACING;
            s[17 + k] = (z - terrain.sample_height(x + dx)) * scale::HEIGHT;
        }
        for j in 0..JOINT_COUNT {
            s[26 + j] = state.tau[j] * scale::TORQUE;
            s[30 + j] = state.qdd[j] * scale::JOINT_ACC;
        }
        for k in 0..2 {
            let f = state.foot_forces[k];
            s[34 + k] = f[0].hypot(f[1]) * scale::FOOT_FORCE;
        }
        FullState(s)
    }
}

/// Active randomization values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynParams {
    pub kp_factor: f64,
    pub kd_factor: f64,
    pub motor_strength: f64,
    pub link_mass_factors: [f64; LINK_COUNT],
    pub payload_mass: f64,
    pub base_com: [f64; 2],
    /// CoM offsets of the thighs and calves (front thigh, front calf, rear
    /// thigh, rear calf), each along and across the segment.
    pub leg_com: [[f64; 2]; 4],
    pub friction: f64,
    /// Action delay (ms).
    pub action_delay_ms: f64,
}

impl DynParams {
    pub const NOMINAL: DynParams = DynParams {
        kp_factor: 1.0,
        kd_factor: 1.0,
        motor_strength: 1.0,
        link_mass_factors: [1.0; LINK_COUNT],
        payload_mass: 0.0,
        base_com: [0.0; 2],
        leg_com: [[0.0; 2]; 4],
        friction: 1.0,
        action_delay_ms: 0.0,
    };

    /// p_t layout: kp factor, kd factor, motor strength, link mass factors
    /// (5), payload mass, base CoM (2), leg CoM (8), friction, delay (ms).
    pub fn to_vec(&self) -> [f64; DYN_DIM] {
        let mut p = [0.0; DYN_DIM];
        p[0] = self.kp_factor;
        p[1] = self.kd_factor;
        p[2] = self.motor_strength;
        p[3..8].copy_from_slice(&self.link_mass_factors);
        p[8] = self.payload_mass;
        p[9..11].copy_from_slice(&self.base_com);
        for (i, c) in self.leg_com.iter().enumerate() {
            p[11 + 2 * i] = c[0];
            p[12 + 2 * i] = c[1];
        }
        p[19] = self.friction;
        p[20] = self.action_delay_ms;
        p
    }
}

/// Comparison policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Nlw,
    Lw,
    Oracle,
    Ours,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Nlw, Role::Lw, Role::Oracle, Role::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Role::Nlw => "nlw",
            Role::Lw => "lw",
            Role::Oracle => "oracle",
            Role::Ours => "ours",
        }
    }

    /// The role matrix: which load inputs each policy family receives.
    pub fn flags(self) -> RoleFlags {
        let (privileged_load, actor_load, estimator, load_rewards) = match self {
            Role::Nlw => (false, ActorLoad::None, false, false),
            Role::Lw => (true, ActorLoad::None, false, true),
            Role::Oracle => (true, ActorLoad::Truth, false, true),
            Role::Ours => (true, ActorLoad::Estimate, true, true),
        };
        RoleFlags {
            privileged_load,
            actor_load,
            estimator,
            load_rewards,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nlw" => Ok(Role::Nlw),
            "lw" => Ok(Role::Lw),
            "oracle" => Ok(Role::Oracle),
            "ours" => Ok(Role::Ours),
            other => Err(Error::config("role", format!("unknown role `{other}`"))),
        }
    }
}

/// What the actor receives in its load-characteristics slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorLoad {
    None,
    /// Ground truth from the simulator.
    Truth,
    /// Output of the load estimator.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleFlags {
    /// l_t feeds the privileged encoder and the critic.
    pub privileged_load: bool,
    pub actor_load: ActorLoad,
    pub estimator: bool,
    pub load_rewards: bool,
}

impl RoleFlags {
    pub fn actor_takes_load(&self) -> bool {
        self.actor_load != ActorLoad::None
    }
}

/// Network widths and latent size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub latent_dim: usize,
    /// H: the history holds H + 1 observations.
    pub history: usize,
    pub privileged_hidden: Vec<usize>,
    pub proprio_hidden: Vec<usize>,
    pub estimator_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Initial action standard deviation.
    pub init_std: f64,
}

impl ArchConfig {
    pub fn desk() -> Self {
        ArchConfig {
            latent_dim: 16,
            history: 15,
            privileged_hidden: vec![128, 64, 32],
            proprio_hidden: vec![128, 64, 32],
            estimator_hidden: vec![128, 64, 32],
            actor_hidden: vec![128, 64, 32],
            critic_hidden: vec![128, 64, 32],
            init_std: 1.0,
        }
    }

    pub fn paper() -> Self {
        ArchConfig {
            latent_dim: 32,
            history: 15,
            privileged_hidden: vec![512, 256, 128],
            proprio_hidden: vec![512, 256, 128],
            estimator_hidden: vec![512, 256, 64],
            actor_hidden: vec![512, 256, 128],
            critic_hidden: vec![512, 256, 128],
            init_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("arch.latent_dim", "must be > 0"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("arch.init_std", "must be > 0"));
        }
        Ok(())
    }

    pub fn history_dim(&self) -> usize {
        (self.history + 1) * OBS_DIM
    }
}

/// Network input/output shapes implied by an architecture and role flags.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleSpecs {
    pub privileged: MlpSpec,
    pub proprio: MlpSpec,
    pub estimator: Option<MlpSpec>,
    pub actor: MlpSpec,
    pub critic: MlpSpec,
}

impl BundleSpecs {
    pub fn new(arch: &ArchConfig, flags: &RoleFlags) -> Self {
        let l = |on: bool| if on { LOAD_DIM } else { 0 };
        let z = arch.latent_dim;
        BundleSpecs {
            privileged: MlpSpec::new(STATE_DIM + DYN_DIM + l(flags.privileged_load), &arch.privileged_hidden, z, true),
            proprio: MlpSpec::new(arch.history_dim(), &arch.proprio_hidden, z, true),
            estimator: flags
                .estimator
                .then(|| MlpSpec::new(arch.history_dim(), &arch.estimator_hidden, LOAD_DIM, false)),
            actor: MlpSpec::new(OBS_DIM + z + l(flags.actor_takes_load()), &arch.actor_hidden, ACTION_DIM, false),
            critic: MlpSpec::new(STATE_DIM + DYN_DIM + l(flags.privileged_load) + z, &arch.critic_hidden, 1, false),
        }
    }
}

/// Sample from the action distribution or return its mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mean,
}

/// Privileged encoder, proprioceptive encoder, optional load estimator, actor,
/// critic and the Gaussian action head, together with the role they were
/// built for.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub role: Role,
    pub flags: RoleFlags,
    pub arch: ArchConfig,
    pub privileged: Mlp,
    pub proprio: Mlp,
    pub estimator: Option<Mlp>,
    pub actor: Mlp,
    pub critic: Mlp,
    pub head: GaussianHead,
}

impl PolicyBundle {
    /// Fresh bundle; `flags` must equal the role's row of the role matrix.
    pub fn new<R: Rng>(role: Role, flags: RoleFlags, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        if flags != role.flags() {
            return Err(Error::RoleMismatch(format!(
                "role {role} requires {:?}, got {flags:?}",
                role.flags()
            )));
        }
        arch.validate()?;
        let specs = BundleSpecs::new(arch, &flags);
        let gain = std::f64::consts::SQRT_2;
        let bundle = PolicyBundle {
            role,
            flags,
            arch: arch.clone(),
            privileged: Mlp::orthogonal(specs.privileged, gain, rng)?,
            proprio: Mlp::orthogonal(specs.proprio, gain, rng)?,
            estimator: specs.estimator.map(|s| Mlp::orthogonal(s, 1.0, rng)).transpose()?,
            actor: Mlp::orthogonal(specs.actor, 0.01, rng)?,
            critic: Mlp::orthogonal(specs.critic, 1.0, rng)?,
            head: GaussianHead::new(ACTION_DIM, arch.init_std),
        };
        bundle.check_shapes()?;
        Ok(bundle)
    }

    pub fn for_role<R: Rng>(role: Role, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        PolicyBundle::new(role, role.flags(), arch, rng)
    }

    /// Every network shape agrees with the role flags, and both encoders
    /// emit latents of the same size.
    pub fn check_shapes(&self) -> Result<()> {
        if self.flags != self.role.flags() {
            return Err(Error::RoleMismatch(format!("flags {:?} do not belong to role {}", self.flags, self.role)));
        }
        let want = BundleSpecs::new(&self.arch, &self.flags);
        let same = self.privileged.spec == want.privileged
            && self.proprio.spec == want.proprio
            && self.estimator.as_ref().map(|m| &m.spec) == want.estimator.as_ref()
            && self.actor.spec == want.actor
            && self.critic.spec == want.critic
            && self.head.dim() == ACTION_DIM;
        if !same {
            return Err(Error::RoleMismatch(format!("network shapes do not match role {}", self.role)));
        }
        if self.privileged.output_dim() != self.proprio.output_dim() {
            return Err(Error::contract("privileged and proprioceptive latents differ in size"));
        }
        Ok(())
    }

    fn load_slot(&self, on: bool, l: Option<&[f64]>, who: &str) -> Result<()> {
        match (on, l) {
            (true, Some(v)) if v.len() == LOAD_DIM => Ok(()),
            (true, Some(v)) => Err(Error::contract(format!("{who}: load input has {} entries", v.len()))),
            (true, None) => Err(Error::RoleMismatch(format!("{who} of role {} needs load characteristics", self.role))),
            (false, Some(_)) => Err(Error::RoleMismatch(format!("{who} of role {} takes no load input", self.role))),
            (false, None) => Ok(()),
        }
    }

    pub fn privileged_input(&self, s: &[f64], p: &[f64], l: Option<&[f64]>, out: &mut Vec<f64>) -> Result<()> {
        self.load_slot(self.flags.privileged_load, l, "privileged encoder")?;
        out.extend_from_slice(s);
        out.extend_from_slice(p);
        if let Some(l) = l {
            out.extend_from_slice(l);
        }
        Ok(())
    }

    pub fn actor_input(&self, o: &[f64], z: &[f64], l: Option<&[f64]>, out: &mut Vec<f64>) -> Result<()> {
        self.load_slot(self.flags.actor_takes_load(), l, "actor")?;
        out.extend_from_slice(o);
        out.extend_from_slice(z);
        if let Some(l) = l {
            out.extend_from_slice(l);
        }
        Ok(())
    }

    pub fn critic_input(&self, s: &[f64], p: &[f64], l: Option<&[f64]>, z: &[f64], out: &mut Vec<f64>) -> Result<()> {
        self.load_slot(self.flags.privileged_load, l, "critic")?;
        out.extend_from_slice(s);
        out.extend_from_slice(p);
        if let Some(l) = l {
            out.extend_from_slice(l);
        }
        out.extend_from_slice(z);
        Ok(())
    }

    /// z_t = E_p(s_t, p_t[, l_t]), unit norm.
    pub fn encode_privileged(&self, s: &FullState, p: &DynParams, l: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.privileged.input_dim());
        self.privileged_input(&s.0, &p.to_vec(), l, &mut x)?;
        self.privileged.forward(&x)
    }

    /// z^s_t = E_s(o_{t-H:t}), unit norm.
    pub fn encode_proprioceptive(&self, history: &ObservationHistory) -> Result<Vec<f64>> {
        self.proprio.forward(&history.flat())
    }

    /// l̂_t = E_l(o_{t-H:t}).
    pub fn estimate_load(&self, history: &ObservationHistory) -> Result<Vec<f64>> {
        match &self.estimator {
            Some(net) => net.forward(&history.flat()),
            None => Err(Error::RoleMismatch(format!("role {} has no load estimator", self.role))),
        }
    }

    pub fn act<R: Rng>(
        &self,
        o: &Observation,
        z: &[f64],
        l: Option<&[f64]>,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let mut x = Vec::with_capacity(self.actor.input_dim());
        self.actor_input(&o.0, z, l, &mut x)?;
        let mean = self.actor.forward(&x)?;
        let action = match mode {
            ActMode::Mean => mean.clone(),
            ActMode::Sample => self.head.sample(&mean, rng),
        };
        let logp = self.head.log_prob(&mean, &action);
        Ok((action, logp))
    }

    pub fn evaluate_value(&self, s: &FullState, p: &DynParams, l: Option<&[f64]>, z: &[f64]) -> Result<f64> {
        let mut x = Vec::with_capacity(self.critic.input_dim());
        self.critic_input(&s.0, &p.to_vec(), l, z, &mut x)?;
        Ok(self.critic.forward(&x)?[0])
    }
}

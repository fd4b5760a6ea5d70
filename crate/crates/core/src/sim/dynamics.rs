use nalgebra::{Cholesky, SMatrix, SVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{RobotModel, SimConfig, DOF, JOINT_COUNT, LINK_COUNT, TORSO};
use super::terrain::{GroundContact, TerrainProfile};
use crate::{Error, Result};

pub type Mat7 = SMatrix<f64, DOF, DOF>;
pub type Vec7 = SVector<f64, DOF>;
pub type PointJacobian = SMatrix<f64, 2, DOF>;
pub type Vec2 = Vector2<f64>;

/// Bound on the uniform joint perturbation applied by [`reset`] (rad).
pub const RESET_JOINT_NOISE: f64 = 0.05;

/// Full planar robot state. Vectors are in the world frame unless noted;
/// `pitch` is counter-clockwise in the x-z plane (nose up is positive).
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub base_position: [f64; 2],
    pub pitch: f64,
    pub base_velocity: [f64; 2],
    pub pitch_rate: f64,
    pub q: [f64; JOINT_COUNT],
    pub qd: [f64; JOINT_COUNT],
    /// Mean joint acceleration over the last control period.
    pub qdd: [f64; JOINT_COUNT],
    /// Per-motor torque commanded during the last substep.
    pub tau: [f64; JOINT_COUNT],
    /// Mean ground reaction force on each foot over the last control period.
    pub foot_forces: [[f64; 2]; 2],
    pub foot_contact: [bool; 2],
    /// Mean total ground reaction force over every contact point.
    pub ground_force: [f64; 2],
    /// Knee and torso points that touched the ground during the last period.
    pub collision_count: u32,
    pub torso_contact: bool,
}

impl RobotState {
    pub fn generalized_position(&self) -> Vec7 {
        Vec7::from_column_slice(&[
            self.base_position[0],
            self.base_position[1],
            self.pitch,
            self.q[0],
            self.q[1],
            self.q[2],
            self.q[3],
        ])
    }

    pub fn generalized_velocity(&self) -> Vec7 {
        Vec7::from_column_slice(&[
            self.base_velocity[0],
            self.base_velocity[1],
            self.pitch_rate,
            self.qd[0],
            self.qd[1],
            self.qd[2],
            self.qd[3],
        ])
    }

    fn set_generalized(&mut self, pos: &Vec7, vel: &Vec7) {
        self.base_position = [pos[0], pos[1]];
        self.pitch = pos[2];
        self.base_velocity = [vel[0], vel[1]];
        self.pitch_rate = vel[2];
        for j in 0..JOINT_COUNT {
            self.q[j] = pos[3 + j];
            self.qd[j] = vel[3 + j];
        }
    }

    pub fn set_generalized_velocity(&mut self, vel: &Vec7) {
        let pos = self.generalized_position();
        self.set_generalized(&pos, vel);
    }

    /// Base linear velocity expressed in the base frame.
    pub fn base_velocity_local(&self) -> [f64; 2] {
        let (s, c) = self.pitch.sin_cos();
        let [vx, vz] = self.base_velocity;
        [c * vx + s * vz, -s * vx + c * vz]
    }

    /// Gravity direction (unit, pointing down) expressed in the base frame.
    pub fn projected_gravity(&self) -> [f64; 2] {
        let (s, c) = self.pitch.sin_cos();
        [-s, -c]
    }

    pub fn is_finite(&self) -> bool {
        self.base_position.iter().all(|v| v.is_finite())
            && self.pitch.is_finite()
            && self.base_velocity.iter().all(|v| v.is_finite())
            && self.pitch_rate.is_finite()
            && self.q.iter().chain(&self.qd).chain(&self.qdd).all(|v| v.is_finite())
    }
}

/// Wrench on the base: a world-frame force through the base origin plus a
/// moment about it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Wrench {
    pub force: [f64; 2],
    pub moment: f64,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench {
        force: [0.0, 0.0],
        moment: 0.0,
    };

    /// Wrench of `force` applied at `point_offset` (world-frame vector from
    /// the base origin to the application point).
    pub fn at_point(force: [f64; 2], point_offset: [f64; 2]) -> Self {
        Wrench {
            force,
            moment: point_offset[0] * force[1] - point_offset[1] * force[0],
        }
    }
}

/// How the joints are driven during a control period.
#[derive(Debug, Clone, PartialEq)]
pub enum Actuation {
    /// Constant per-motor torques.
    Torques([f64; JOINT_COUNT]),
    /// PD tracking of `target`, re-evaluated every substep. The first
    /// `delay_substeps` substeps still track `previous`.
    Pd {
        target: [f64; JOINT_COUNT],
        previous: [f64; JOINT_COUNT],
        delay_substeps: usize,
    },
    /// No joint torque at all.
    Limp,
}

impl Actuation {
    pub fn hold(target: [f64; JOINT_COUNT]) -> Self {
        Actuation::Pd {
            target,
            previous: target,
            delay_substeps: 0,
        }
    }
}

/// PD law per motor: kp·(q_des − q) − kd·q̇, scaled by motor strength and
/// clamped to the motor torque limits.
pub fn pd_torques(
    q_des: &[f64],
    state: &RobotState,
    model: &RobotModel,
    cfg: &SimConfig,
) -> Result<[f64; JOINT_COUNT]> {
    if q_des.len() != JOINT_COUNT {
        return Err(Error::contract(format!(
            "pd target has {} entries, robot has {JOINT_COUNT} joints",
            q_des.len()
        )));
    }
    let mut tau = [0.0; JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        let raw = cfg.kp * (q_des[j] - state.q[j]) - cfg.kd * state.qd[j];
        let lim = model.torque_limits[j];
        tau[j] = (cfg.motor_strength * raw).clamp(-lim, lim);
    }
    Ok(tau)
}

/// Which rigid body a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Body {
    Torso,
    Thigh(usize),
    Calf(usize),
}

/// Position, velocity, Jacobian and velocity-product acceleration of a point.
#[derive(Debug, Clone)]
pub struct PointKinematics {
    pub position: Vec2,
    pub velocity: Vec2,
    pub jacobian: PointJacobian,
    /// Acceleration of the point when all generalized accelerations are zero.
    pub bias: Vec2,
}

#[derive(Debug, Clone)]
struct LegFrames {
    hip: Vec2,
    knee: Vec2,
    foot: Vec2,
    thigh_angle: f64,
    calf_angle: f64,
    thigh_rate: f64,
    calf_rate: f64,
}

/// Forward kinematics of one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub base: Vec2,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub qd: Vec7,
    legs: [LegFrames; 2],
    rot: [f64; 2],
}

fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// Unit vector of a leg segment whose absolute angle is `a` (0 = straight down).
fn segment_dir(a: f64) -> Vec2 {
    Vec2::new(a.sin(), -a.cos())
}

impl Kinematics {
    pub fn new(model: &RobotModel, state: &RobotState) -> Self {
        let base = Vec2::new(state.base_position[0], state.base_position[1]);
        let (s, c) = state.pitch.sin_cos();
        let leg = |k: usize| {
            let hip_local = Vec2::new(model.hip_x(k), 0.0);
            let hip = base + Vec2::new(c * hip_local.x - s * hip_local.y, s * hip_local.x + c * hip_local.y);
            let thigh_angle = state.pitch + state.q[2 * k];
            let calf_angle = thigh_angle + state.q[2 * k + 1];
            let knee = hip + model.link_lengths[1 + 2 * k] * segment_dir(thigh_angle);
            let foot = knee + model.link_lengths[2 + 2 * k] * segment_dir(calf_angle);
            let thigh_rate = state.pitch_rate + state.qd[2 * k];
            LegFrames {
                hip,
                knee,
                foot,
                thigh_angle,
                calf_angle,
                thigh_rate,
                calf_rate: thigh_rate + state.qd[2 * k + 1],
            }
        };
        Kinematics {
            base,
            pitch: state.pitch,
            pitch_rate: state.pitch_rate,
            qd: state.generalized_velocity(),
            legs: [leg(0), leg(1)],
            rot: [c, s],
        }
    }

    /// Rotate a base-frame vector into the world frame.
    pub fn to_world(&self, v: [f64; 2]) -> Vec2 {
        let [c, s] = self.rot;
        Vec2::new(c * v[0] - s * v[1], s * v[0] + c * v[1])
    }

    pub fn foot(&self, leg: usize) -> Vec2 {
        self.legs[leg].foot
    }

    pub fn knee(&self, leg: usize) -> Vec2 {
        self.legs[leg].knee
    }

    pub fn hip(&self, leg: usize) -> Vec2 {
        self.legs[leg].hip
    }

    /// Kinematics of a world point rigidly attached to `body`.
    pub fn point(&self, body: Body, position: Vec2) -> PointKinematics {
        let mut jac = PointJacobian::zeros();
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        let from_base = perp(position - self.base);
        jac[(0, 2)] = from_base.x;
        jac[(1, 2)] = from_base.y;
        let bias = match body {
            Body::Torso => -self.pitch_rate * self.pitch_rate * (position - self.base),
            Body::Thigh(k) => {
                let l = &self.legs[k];
                let r = perp(position - l.hip);
                jac[(0, 3 + 2 * k)] = r.x;
                jac[(1, 3 + 2 * k)] = r.y;
                -self.pitch_rate * self.pitch_rate * (l.hip - self.base)
                    - l.thigh_rate * l.thigh_rate * (position - l.hip)
            }
            Body::Calf(k) => {
                let l = &self.legs[k];
                let r = perp(position - l.hip);
                jac[(0, 3 + 2 * k)] = r.x;
                jac[(1, 3 + 2 * k)] = r.y;
                let r = perp(position - l.knee);
                jac[(0, 4 + 2 * k)] = r.x;
                jac[(1, 4 + 2 * k)] = r.y;
                -self.pitch_rate * self.pitch_rate * (l.hip - self.base)
                    - l.thigh_rate * l.thigh_rate * (l.knee - l.hip)
                    - l.calf_rate * l.calf_rate * (position - l.knee)
            }
        };
        PointKinematics {
            position,
            velocity: jac * self.qd,
            jacobian: jac,
            bias,
        }
    }

    /// Center of mass of link `i` in world coordinates.
    pub fn link_com(&self, model: &RobotModel, i: usize) -> Vec2 {
        let off = model.link_com_offsets[i];
        if i == TORSO {
            return self.base + self.to_world(off);
        }
        let k = (i - 1) / 2;
        let l = &self.legs[k];
        let (origin, angle) = if i % 2 == 1 {
            (l.hip, l.thigh_angle)
        } else {
            (l.knee, l.calf_angle)
        };
        let dir = segment_dir(angle);
        origin + (0.5 * model.link_lengths[i] + off[0]) * dir + off[1] * perp(dir)
    }

    fn link_body(i: usize) -> Body {
        match i {
            TORSO => Body::Torso,
            1 => Body::Thigh(0),
            2 => Body::Calf(0),
            3 => Body::Thigh(1),
            _ => Body::Calf(1),
        }
    }

    fn angular_row(i: usize) -> Vec7 {
        let mut row = Vec7::zeros();
        row[2] = 1.0;
        if i != TORSO {
            let k = (i - 1) / 2;
            row[3 + 2 * k] = 1.0;
            if i.is_multiple_of(2) {
                row[4 + 2 * k] = 1.0;
            }
        }
        row
    }
}

fn link_mass(model: &RobotModel, i: usize) -> f64 {
    if i == TORSO {
        model.torso_mass()
    } else {
        model.link_masses[i]
    }
}

/// Mass matrix and unconstrained generalized forces of one configuration.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub mass: Mat7,
    /// Gravity minus velocity-product terms.
    pub bias_force: Vec7,
    chol: Cholesky<f64, nalgebra::Const<DOF>>,
}

impl Dynamics {
    pub fn new(model: &RobotModel, kin: &Kinematics, gravity: f64) -> Result<Self> {
        let mut mass = Mat7::zeros();
        let mut bias_force = Vec7::zeros();
        let g = Vec2::new(0.0, -gravity);
        for i in 0..LINK_COUNT {
            let m = link_mass(model, i);
            let p = kin.point(Kinematics::link_body(i), kin.link_com(model, i));
            let jt = p.jacobian.transpose();
            mass += m * jt * p.jacobian;
            let w = Kinematics::angular_row(i);
            mass += model.link_inertias[i] * w * w.transpose();
            bias_force += jt * (m * (g - p.bias));
        }
        let chol = Cholesky::new(mass).ok_or_else(|| Error::Diverged {
            substep: 0,
            detail: "mass matrix lost positive definiteness".into(),
        })?;
        Ok(Dynamics {
            mass,
            bias_force,
            chol,
        })
    }

    /// M⁻¹ v.
    pub fn inverse_mass_times(&self, v: &Vec7) -> Vec7 {
        self.chol.solve(v)
    }

    /// Scalar effective mass of a point along unit direction `dir`.
    pub fn effective_mass(&self, jac: &PointJacobian, dir: Vec2) -> f64 {
        let jt_dir = jac.transpose() * dir;
        let inv = jt_dir.dot(&self.inverse_mass_times(&jt_dir));
        if inv > 0.0 {
            1.0 / inv
        } else {
            f64::INFINITY
        }
    }

    /// Solve (M + extra_mass) q̈ = rhs. The augmented matrix need not be symmetric.
    pub fn solve(&self, extra_mass: Option<&Mat7>, rhs: &Vec7) -> Result<Vec7> {
        match extra_mass {
            None => Ok(self.chol.solve(rhs)),
            Some(extra) => (self.mass + extra).lu().solve(rhs).ok_or_else(|| Error::Diverged {
                substep: 0,
                detail: "coupled mass matrix is singular".into(),
            }),
        }
    }
}

/// Extra inertia and forces contributed by a body riding on the robot:
/// the body adds `mass` to the left-hand side and `force` to the right-hand
/// side of the generalized equations of motion.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub mass: Mat7,
    pub force: Vec7,
}

/// A body coupled to the robot (the plate load) that is advanced in lock-step
/// with every physics substep.
pub trait Attachment {
    /// Velocity jump to apply to the robot before forces are evaluated
    /// (impacts). `None` when nothing happens.
    fn impulse(&mut self, model: &RobotModel, kin: &Kinematics, dynamics: &Dynamics) -> Option<Vec7>;

    /// Inertia and forces for the body's current contact regime.
    fn coupling(&self, model: &RobotModel, kin: &Kinematics, gravity: f64) -> Option<Coupling>;

    /// Check the current regime against solved accelerations; returns `true`
    /// when the regime changed and the substep must be re-solved.
    fn revise(&mut self, model: &RobotModel, kin: &Kinematics, qdd: &Vec7, gravity: f64) -> bool;

    /// Advance the attached body once the robot's accelerations are final.
    fn advance(
        &mut self,
        model: &RobotModel,
        kin: &Kinematics,
        qdd: &Vec7,
        gravity: f64,
        dt: f64,
    ) -> Result<()>;
}

struct ContactPoint {
    body: Body,
    position: Vec2,
    foot: Option<usize>,
    torso: bool,
}

fn contact_points(model: &RobotModel, kin: &Kinematics) -> [ContactPoint; 6] {
    let corner = |sign: f64| kin.base + kin.to_world([sign * 0.5 * model.link_lengths[TORSO], -0.5 * model.torso_height]);
    [
        ContactPoint { body: Body::Calf(0), position: kin.foot(0), foot: Some(0), torso: false },
        ContactPoint { body: Body::Calf(1), position: kin.foot(1), foot: Some(1), torso: false },
        ContactPoint { body: Body::Thigh(0), position: kin.knee(0), foot: None, torso: false },
        ContactPoint { body: Body::Thigh(1), position: kin.knee(1), foot: None, torso: false },
        ContactPoint { body: Body::Torso, position: corner(1.0), foot: None, torso: true },
        ContactPoint { body: Body::Torso, position: corner(-1.0), foot: None, torso: true },
    ]
}

/// Tangential damping of a sticking contact (N·s/m).
const STICK_DAMPING: f64 = 1.0e5;
/// Below this tangential speed a fresh contact starts out sticking (m/s).
const STICK_SPEED: f64 = 1.0e-3;
const MAX_REGIME_PASSES: usize = 12;

#[derive(Debug, Clone, Copy, Default)]
pub struct ContactReport {
    pub normal: f64,
    pub tangential: f64,
    pub force: [f64; 2],
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Regime {
    Off,
    Stick,
    /// Sliding along `sign`·t.
    Slip { sign: f64, forced: bool },
}

/// One penetrating contact, linearized for a linearly-implicit substep: the
/// normal force is N = a_n − b_n·nᵀJq̈ and a sticking tangential force is
/// F_t = a_t − b_t·tᵀJq̈.
struct Linearized {
    slot: usize,
    point: PointKinematics,
    n: Vec2,
    t: Vec2,
    a_n: f64,
    b_n: f64,
    a_t: f64,
    b_t: f64,
    regime: Regime,
    foot: Option<usize>,
    torso: bool,
}

impl Linearized {
    fn new(slot: usize, cp: &ContactPoint, kin: &Kinematics, ground: GroundContact, cfg: &SimConfig, dt: f64) -> Self {
        let point = kin.point(cp.body, cp.position);
        let n = Vec2::new(ground.normal[0], ground.normal[1]);
        let t = Vec2::new(n.y, -n.x);
        let vn = point.velocity.dot(&n) + dt * point.bias.dot(&n);
        let vt = point.velocity.dot(&t) + dt * point.bias.dot(&t);
        let gain = cfg.contact_stiffness * dt + cfg.contact_damping;
        let vt_now = point.velocity.dot(&t);
        let regime = if vt_now.abs() < STICK_SPEED {
            Regime::Stick
        } else {
            Regime::Slip {
                sign: vt_now.signum(),
                forced: false,
            }
        };
        Linearized {
            slot,
            n,
            t,
            a_n: cfg.contact_stiffness * ground.penetration - gain * vn,
            b_n: gain * dt,
            a_t: -STICK_DAMPING * vt,
            b_t: STICK_DAMPING * dt,
            regime,
            foot: cp.foot,
            torso: cp.torso,
            point,
        }
    }

    fn assemble(&self, mu: f64, lhs: &mut Mat7, rhs: &mut Vec7) {
        let jt = self.point.jacobian.transpose();
        match self.regime {
            Regime::Off => {}
            Regime::Stick => {
                let jn = jt * self.n;
                let jtt = jt * self.t;
                *lhs += self.b_n * jn * jn.transpose() + self.b_t * jtt * jtt.transpose();
                *rhs += self.a_n * jn + self.a_t * jtt;
            }
            Regime::Slip { sign, .. } => {
                // F_t = −sign·μ·N with N implicit.
                let dir = self.n - sign * mu * self.t;
                let jd = jt * dir;
                let jn = jt * self.n;
                *lhs += self.b_n * jd * jn.transpose();
                *rhs += self.a_n * jd;
            }
        }
    }

    fn forces(&self, mu: f64, qdd: &Vec7) -> (f64, f64) {
        let acc = self.point.jacobian * qdd;
        let normal = self.a_n - self.b_n * self.n.dot(&acc);
        let tangential = match self.regime {
            Regime::Off => return (0.0, 0.0),
            Regime::Stick => self.a_t - self.b_t * self.t.dot(&acc),
            Regime::Slip { sign, .. } => -sign * mu * normal,
        };
        (normal, tangential)
    }

    /// Update the regime from a solved substep; `true` when it changed.
    fn revise(&mut self, mu: f64, qdd: &Vec7, dt: f64) -> bool {
        let (normal, tangential) = self.forces(mu, qdd);
        let next = match self.regime {
            Regime::Off => Regime::Off,
            _ if normal < 0.0 => Regime::Off,
            Regime::Stick if tangential.abs() > mu * normal => Regime::Slip {
                sign: -tangential.signum(),
                forced: true,
            },
            Regime::Stick => Regime::Stick,
            Regime::Slip { sign, forced } => {
                let v_next = self.point.velocity.dot(&self.t)
                    + dt * self.t.dot(&(self.point.jacobian * qdd + self.point.bias));
                if !forced && v_next * sign < 0.0 {
                    Regime::Stick
                } else {
                    self.regime
                }
            }
        };
        let changed = next != self.regime;
        self.regime = next;
        changed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Drive {
    /// Implicit PD toward a goal.
    Linear,
    Saturated(f64),
}

/// Total mechanical energy (kinetic plus gravitational potential).
pub fn mechanical_energy(model: &RobotModel, state: &RobotState, gravity: f64) -> Result<f64> {
    let kin = Kinematics::new(model, state);
    let dynamics = Dynamics::new(model, &kin, gravity)?;
    let v = state.generalized_velocity();
    let kinetic = 0.5 * v.dot(&(dynamics.mass * v));
    let potential: f64 = (0..LINK_COUNT)
        .map(|i| link_mass(model, i) * gravity * kin.link_com(model, i).y)
        .sum();
    Ok(kinetic + potential)
}

/// Per-substep diagnostics, collected only when requested.
#[derive(Debug, Clone, Default)]
pub struct StepTrace {
    pub contacts: Vec<[ContactReport; 6]>,
}

/// Advance one control period with no attached body.
pub fn step(
    model: &RobotModel,
    state: &RobotState,
    actuation: &Actuation,
    terrain: &TerrainProfile,
    wrench: &Wrench,
    cfg: &SimConfig,
) -> Result<RobotState> {
    step_with(model, state, actuation, terrain, wrench, cfg, None, None)
}

/// Advance one control period: `cfg.substeps` semi-implicit Euler substeps of
/// the articulated dynamics with penalty ground contact, an optional external
/// base wrench, and an optional attached body coupled at every substep.
///
/// PD drives and contact spring-dampers are linearized in the unknown
/// accelerations (linearly-implicit Euler); torque saturation, contact
/// separation and stick/slip are resolved by re-solving until the regimes are
/// consistent with the solution.
#[allow(clippy::too_many_arguments)]
pub fn step_with(
    model: &RobotModel,
    state: &RobotState,
    actuation: &Actuation,
    terrain: &TerrainProfile,
    wrench: &Wrench,
    cfg: &SimConfig,
    mut attachment: Option<&mut dyn Attachment>,
    mut trace: Option<&mut StepTrace>,
) -> Result<RobotState> {
    if !state.is_finite() {
        return Err(Error::contract("input state is not finite"));
    }
    if !(wrench.force.iter().all(|v| v.is_finite()) && wrench.moment.is_finite()) {
        return Err(Error::contract("external wrench is not finite"));
    }
    let dt = cfg.physics_dt();
    let mu = cfg.ground_friction;
    let gear = model.actuators_per_joint;
    let mut s = state.clone();
    let start_qd = state.qd;
    let mut force_sum = [[0.0; 2]; 2];
    let mut collided = [false; 4];
    let mut torso_contact = false;
    let mut ground_sum = [0.0; 2];

    for sub in 0..cfg.substeps {
        let mut kin = Kinematics::new(model, &s);
        let mut dynamics = Dynamics::new(model, &kin, cfg.gravity).map_err(|e| with_substep(e, sub))?;
        if let Some(att) = attachment.as_deref_mut() {
            if let Some(dv) = att.impulse(model, &kin, &dynamics) {
                let v = s.generalized_velocity() + dv;
                s.set_generalized_velocity(&v);
                kin = Kinematics::new(model, &s);
                dynamics = Dynamics::new(model, &kin, cfg.gravity).map_err(|e| with_substep(e, sub))?;
            }
        }

        // Joint drive: τ = strength·(kp·(goal − q − dt·q̇⁺) − kd·q̇⁺), q̇⁺ = q̇ + dt·q̈.
        let goal = match actuation {
            Actuation::Pd {
                target,
                previous,
                delay_substeps,
            } => Some(if sub < *delay_substeps { *previous } else { *target }),
            _ => None,
        };
        let drive_gain = cfg.motor_strength * (cfg.kp * dt + cfg.kd);
        let drive_free = |j: usize| match goal {
            Some(g) => cfg.motor_strength * cfg.kp * (g[j] - s.q[j]) - drive_gain * s.qd[j],
            None => 0.0,
        };
        let mut drives = [Drive::Linear; JOINT_COUNT];
        let fixed_tau = match actuation {
            Actuation::Torques(t) => Some(*t),
            Actuation::Limp => Some([0.0; JOINT_COUNT]),
            Actuation::Pd { .. } => None,
        };
        if fixed_tau.is_none() {
            for (j, d) in drives.iter_mut().enumerate() {
                let lim = model.torque_limits[j];
                let free = drive_free(j);
                if free.abs() > lim {
                    *d = Drive::Saturated(lim * free.signum());
                }
            }
        }

        let points = contact_points(model, &kin);
        let mut contacts: Vec<Linearized> = points
            .iter()
            .enumerate()
            .filter_map(|(slot, cp)| {
                terrain
                    .contact(cp.position.x, cp.position.y)
                    .map(|g| Linearized::new(slot, cp, &kin, g, cfg, dt))
            })
            .collect();

        let mut base_rhs = dynamics.bias_force;
        base_rhs[0] += wrench.force[0];
        base_rhs[1] += wrench.force[1];
        base_rhs[2] += wrench.moment;

        let mut qdd = Vec7::zeros();
        for pass in 0..MAX_REGIME_PASSES {
            let mut lhs = dynamics.mass;
            let mut rhs = base_rhs;
            match fixed_tau {
                Some(t) => {
                    for j in 0..JOINT_COUNT {
                        rhs[3 + j] += gear * t[j];
                    }
                }
                None => {
                    for j in 0..JOINT_COUNT {
                        match drives[j] {
                            Drive::Linear => {
                                lhs[(3 + j, 3 + j)] += gear * drive_gain * dt;
                                rhs[3 + j] += gear * drive_free(j);
                            }
                            Drive::Saturated(t) => rhs[3 + j] += gear * t,
                        }
                    }
                }
            }
            for c in &contacts {
                c.assemble(mu, &mut lhs, &mut rhs);
            }
            if let Some(att) = attachment.as_deref() {
                if let Some(cpl) = att.coupling(model, &kin, cfg.gravity) {
                    lhs += cpl.mass;
                    rhs += cpl.force;
                }
            }
            qdd = lhs.lu().solve(&rhs).ok_or_else(|| Error::Diverged {
                substep: sub,
                detail: "substep system is singular".into(),
            })?;
            if pass + 1 == MAX_REGIME_PASSES {
                break;
            }
            let mut changed = false;
            if fixed_tau.is_none() {
                for j in 0..JOINT_COUNT {
                    let lim = model.torque_limits[j];
                    let linear = drive_free(j) - drive_gain * dt * qdd[3 + j];
                    let next = if linear.abs() > lim {
                        Drive::Saturated(lim * linear.signum())
                    } else {
                        Drive::Linear
                    };
                    if next != drives[j] && !(pass > 4 && next == Drive::Linear) {
                        drives[j] = next;
                        changed = true;
                    }
                }
            }
            for c in contacts.iter_mut() {
                changed |= c.revise(mu, &qdd, dt);
            }
            if let Some(att) = attachment.as_deref_mut() {
                changed |= att.revise(model, &kin, &qdd, cfg.gravity);
            }
            if !changed {
                break;
            }
        }

        s.tau = match fixed_tau {
            Some(t) => t,
            None => {
                let mut t = [0.0; JOINT_COUNT];
                for j in 0..JOINT_COUNT {
                    t[j] = match drives[j] {
                        Drive::Linear => drive_free(j) - drive_gain * dt * qdd[3 + j],
                        Drive::Saturated(v) => v,
                    };
                }
                t
            }
        };

        let mut reports = [ContactReport::default(); 6];
        for c in &contacts {
            if c.regime == Regime::Off {
                continue;
            }
            let (normal, tangential) = c.forces(mu, &qdd);
            let f = normal * c.n + tangential * c.t;
            reports[c.slot] = ContactReport {
                normal,
                tangential,
                force: [f.x, f.y],
                active: true,
            };
            ground_sum[0] += f.x;
            ground_sum[1] += f.y;
            match c.foot {
                Some(k) => {
                    force_sum[k][0] += f.x;
                    force_sum[k][1] += f.y;
                }
                None => {
                    collided[c.slot - 2] = true;
                    torso_contact |= c.torso;
                }
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.contacts.push(reports);
        }

        if let Some(att) = attachment.as_deref_mut() {
            att.advance(model, &kin, &qdd, cfg.gravity, dt)?;
        }

        let mut vel = s.generalized_velocity() + dt * qdd;
        let mut pos = s.generalized_position() + dt * vel;
        for j in 0..JOINT_COUNT {
            let (lo, hi) = (model.joint_lower[j], model.joint_upper[j]);
            if pos[3 + j] < lo {
                pos[3 + j] = lo;
                vel[3 + j] = vel[3 + j].max(0.0);
            } else if pos[3 + j] > hi {
                pos[3 + j] = hi;
                vel[3 + j] = vel[3 + j].min(0.0);
            }
        }
        let worst = pos.iter().chain(vel.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        if !worst.is_finite() || worst > cfg.divergence_bound {
            return Err(Error::Diverged {
                substep: sub,
                detail: format!("state magnitude {worst:e} exceeds bound {:e}", cfg.divergence_bound),
            });
        }
        s.set_generalized(&pos, &vel);
    }

    let period = cfg.control_dt();
    for j in 0..JOINT_COUNT {
        s.qdd[j] = (s.qd[j] - start_qd[j]) / period;
    }
    let inv = 1.0 / cfg.substeps as f64;
    for k in 0..2 {
        s.foot_forces[k] = [force_sum[k][0] * inv, force_sum[k][1] * inv];
        s.foot_contact[k] = s.foot_forces[k][0].hypot(s.foot_forces[k][1]) > 1e-9;
    }
    s.collision_count = collided.iter().filter(|c| **c).count() as u32;
    s.torso_contact = torso_contact;
    s.ground_force = [ground_sum[0] * inv, ground_sum[1] * inv];
    Ok(s)
}

fn with_substep(e: Error, sub: usize) -> Error {
    match e {
        Error::Diverged { detail, .. } => Error::Diverged { substep: sub, detail },
        other => other,
    }
}

/// Robot at rest in the default pose (plus a seeded joint perturbation of at
/// most [`RESET_JOINT_NOISE`]), pitched to the terrain line under its feet and
/// lowered until the lowest foot touches the surface.
pub fn reset(model: &RobotModel, terrain: &TerrainProfile, seed: u64) -> RobotState {
    reset_at(model, terrain, 0.0, seed)
}

pub fn reset_at(model: &RobotModel, terrain: &TerrainProfile, x: f64, seed: u64) -> RobotState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = model.default_joint_angles;
    for (j, v) in q.iter_mut().enumerate() {
        *v = (*v + rng.gen_range(-RESET_JOINT_NOISE..=RESET_JOINT_NOISE))
            .clamp(model.joint_lower[j], model.joint_upper[j]);
    }
    let mut state = RobotState {
        base_position: [x, 0.0],
        pitch: 0.0,
        base_velocity: [0.0; 2],
        pitch_rate: 0.0,
        q,
        qd: [0.0; JOINT_COUNT],
        qdd: [0.0; JOINT_COUNT],
        tau: [0.0; JOINT_COUNT],
        foot_forces: [[0.0; 2]; 2],
        ground_force: [0.0; 2],
        foot_contact: [false; 2],
        collision_count: 0,
        torso_contact: false,
    };
    for _ in 0..6 {
        let kin = Kinematics::new(model, &state);
        let (f, r) = (kin.foot(0), kin.foot(1));
        let dx = f.x - r.x;
        if dx.abs() > 1e-6 {
            // Rotate the body so the foot-to-foot line runs parallel to the
            // terrain chord under the feet.
            let rise = terrain.sample_height(f.x) - terrain.sample_height(r.x);
            state.pitch += (rise / dx).atan() - (f.y - r.y).atan2(dx);
        }
        let kin = Kinematics::new(model, &state);
        let lift = (0..2)
            .map(|k| {
                let p = kin.foot(k);
                terrain.sample_height(p.x) - (p.y - state.base_position[1])
            })
            .fold(f64::NEG_INFINITY, f64::max);
        state.base_position[1] = lift;
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> RobotModel {
        RobotModel::default()
    }

    fn standing(m: &RobotModel) -> RobotState {
        let mut s = reset(m, &TerrainProfile::Plane, 0);
        s.q = m.default_joint_angles;
        s.base_position[1] = m.base_height_target;
        s
    }

    #[test]
    fn pd_examples() {
        let m = model();
        let cfg = SimConfig::default();
        let mut s = standing(&m);
        s.q = [0.0; 4];
        s.qd = [0.0; 4];
        let tau = pd_torques(&[0.1; 4], &s, &m, &cfg).unwrap();
        for t in tau {
            assert!((t - 2.0).abs() < 1e-12);
        }
        let tau = pd_torques(&[0.0; 4], &s, &m, &cfg).unwrap();
        assert_eq!(tau, [0.0; 4]);
        s.qd = [1.0; 4];
        let tau = pd_torques(&[0.0; 4], &s, &m, &cfg).unwrap();
        for t in tau {
            assert!((t + 0.5).abs() < 1e-12);
        }
        assert!(matches!(
            pd_torques(&[0.0; 3], &s, &m, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pd_clamps_to_torque_limits() {
        let m = model();
        let cfg = SimConfig::default();
        let mut s = standing(&m);
        s.q = [0.0; 4];
        let tau = pd_torques(&[10.0; 4], &s, &m, &cfg).unwrap();
        assert_eq!(tau, m.torque_limits);
    }

    #[test]
    fn jacobian_matches_finite_difference_of_positions() {
        let m = model();
        let mut s = standing(&m);
        s.pitch = 0.2;
        s.q = [0.5, -1.2, 0.9, -1.6];
        let kin = Kinematics::new(&m, &s);
        let pk = kin.point(Body::Calf(1), kin.foot(1));
        let h = 1e-6;
        let q0 = s.generalized_position();
        for c in 0..DOF {
            let mut plus = s.clone();
            let mut minus = s.clone();
            let mut dq = Vec7::zeros();
            dq[c] = h;
            plus.set_generalized(&(q0 + dq), &Vec7::zeros());
            minus.set_generalized(&(q0 - dq), &Vec7::zeros());
            let fd = (Kinematics::new(&m, &plus).foot(1) - Kinematics::new(&m, &minus).foot(1)) / (2.0 * h);
            assert!((fd.x - pk.jacobian[(0, c)]).abs() < 1e-8, "col {c}");
            assert!((fd.y - pk.jacobian[(1, c)]).abs() < 1e-8, "col {c}");
        }
    }

    #[test]
    fn bias_acceleration_matches_second_difference() {
        // Move along q(t) = q0 + v t; the foot's second derivative is the
        // velocity-product acceleration.
        let m = model();
        let mut s = standing(&m);
        s.pitch = -0.1;
        s.q = [0.4, -1.0, 1.1, -1.9];
        let v = Vec7::from_column_slice(&[0.3, -0.2, 0.7, 1.5, -2.0, 0.4, 0.9]);
        s.set_generalized_velocity(&v);
        let kin = Kinematics::new(&m, &s);
        let pk = kin.point(Body::Calf(0), kin.foot(0));
        let h = 1e-4;
        let q0 = s.generalized_position();
        let at = |t: f64| {
            let mut x = s.clone();
            x.set_generalized(&(q0 + v * t), &v);
            Kinematics::new(&m, &x).foot(0)
        };
        let acc = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
        assert!((acc - pk.bias).norm() < 1e-5, "{acc} vs {}", pk.bias);
        assert!((pk.velocity - (at(h) - at(-h)) / (2.0 * h)).norm() < 1e-8);
    }

    #[test]
    fn free_drift_translates_base() {
        let m = model();
        let cfg = SimConfig {
            gravity: 0.0,
            ..SimConfig::default()
        };
        let mut s = standing(&m);
        s.base_position = [0.0, 5.0];
        s.base_velocity = [0.7, -0.3];
        let out = step(&m, &s, &Actuation::Limp, &TerrainProfile::Plane, &Wrench::ZERO, &cfg).unwrap();
        let dt = cfg.control_dt();
        assert!((out.base_position[0] - 0.7 * dt).abs() < 1e-12);
        assert!((out.base_position[1] - (5.0 - 0.3 * dt)).abs() < 1e-12);
        assert_eq!(out.q, s.q);
    }

    #[test]
    fn non_finite_wrench_is_rejected() {
        let m = model();
        let s = standing(&m);
        let w = Wrench {
            force: [f64::NAN, 0.0],
            moment: 0.0,
        };
        let r = step(&m, &s, &Actuation::Limp, &TerrainProfile::Plane, &w, &SimConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn divergence_is_reported_with_substep() {
        let m = model();
        let cfg = SimConfig {
            divergence_bound: 1.0,
            ..SimConfig::default()
        };
        let mut s = standing(&m);
        s.base_position = [0.0, 3.0];
        s.base_velocity = [10.0, 0.0];
        let r = step(&m, &s, &Actuation::Limp, &TerrainProfile::Plane, &Wrench::ZERO, &cfg);
        assert!(matches!(r, Err(Error::Diverged { substep: 0, .. })));
    }

    #[test]
    fn reset_is_deterministic_and_on_surface() {
        let m = model();
        let slope = TerrainProfile::Slope {
            angle: 20f64.to_radians(),
        };
        let a = reset(&m, &slope, 42);
        assert_eq!(a, reset(&m, &slope, 42));
        assert_ne!(a, reset(&m, &slope, 43));
        let kin = Kinematics::new(&m, &a);
        for k in 0..2 {
            let p = kin.foot(k);
            let gap = p.y - slope.sample_height(p.x);
            assert!(gap > -1e-9 && gap < 5e-3, "foot {k} gap {gap}");
        }
    }

    #[test]
    fn reset_on_plane_is_near_nominal_height() {
        let m = model();
        let bound = 2.0 * m.link_lengths[1] * RESET_JOINT_NOISE * 2.0;
        for seed in 0..50 {
            let s = reset(&m, &TerrainProfile::Plane, seed);
            assert!((s.base_position[1] - m.base_height_target).abs() <= bound);
            assert!(s.pitch.abs() < 0.2);
        }
    }
}

//! Rigid load riding on the torso plate.
//!
//! The load is a point mass located at the bottom center of a cube of edge
//! `size`. While on the plate it moves along the plate axis under Coulomb
//! friction with a single coefficient for sticking and sliding. Off the plate
//! (drop tests, or after the plate pulls away faster than gravity) it flies
//! ballistically; the landing is plastic along the plate normal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{
    Attachment, Body, Coupling, Dynamics, Kinematics, RobotModel, RobotState, Vec2, Vec7, Wrench,
};
use crate::{Error, Result};

/// Dimension of the planar load-characteristics vector.
pub const LOAD_DIM: usize = 4;

/// Relative speeds below this count as zero when a sliding load is tested for
/// sticking (m/s).
const REST_SPEED: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub mass: f64,
    pub friction: f64,
    /// Cube edge length (m).
    pub size: f64,
}

impl LoadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::config("load.mass", "must be > 0"));
        }
        if !(self.friction >= 0.0) {
            return Err(Error::config("load.friction", "must be >= 0"));
        }
        if !(self.size > 0.0) {
            return Err(Error::config("load.size", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadPhase {
    OnPlate,
    Airborne,
    Fallen,
}

/// Load state. `position`/`velocity` are measured along the plate axis from
/// the plate center and relative to the plate; they are meaningful while the
/// load is on the plate. The world-frame fields are kept current in every
/// phase (frozen once fallen).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadState {
    pub phase: LoadPhase,
    pub position: f64,
    pub velocity: f64,
    pub stuck: bool,
    pub world_position: [f64; 2],
    pub world_velocity: [f64; 2],
}

impl LoadState {
    pub fn on_plate(position: f64, velocity: f64) -> Self {
        LoadState {
            phase: LoadPhase::OnPlate,
            position,
            velocity,
            stuck: velocity == 0.0,
            world_position: [0.0; 2],
            world_velocity: [0.0; 2],
        }
    }

    pub fn airborne(world_position: [f64; 2], world_velocity: [f64; 2]) -> Self {
        LoadState {
            phase: LoadPhase::Airborne,
            position: 0.0,
            velocity: 0.0,
            stuck: false,
            world_position,
            world_velocity,
        }
    }

    pub fn fallen(&self) -> bool {
        self.phase == LoadPhase::Fallen
    }
}

/// l_t = [position, velocity, mass, friction], position and velocity along
/// the base x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadCharacteristics(pub [f64; LOAD_DIM]);

impl LoadCharacteristics {
    /// Record used once the load has fallen off.
    pub const ABSENT: LoadCharacteristics = LoadCharacteristics([0.0; LOAD_DIM]);

    pub fn position(&self) -> f64 {
        self.0[0]
    }

    pub fn velocity(&self) -> f64 {
        self.0[1]
    }

    pub fn mass(&self) -> f64 {
        self.0[2]
    }

    pub fn friction(&self) -> f64 {
        self.0[3]
    }
}

/// Plate motion prescribed from outside, all in the world frame. The plate
/// line passes through `center` with direction angle `angle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateMotion {
    pub center: [f64; 2],
    pub angle: f64,
    pub velocity: [f64; 2],
    pub angular_velocity: f64,
    pub acceleration: [f64; 2],
    pub angular_acceleration: f64,
    /// Reference point for the reaction moment.
    pub base: [f64; 2],
    /// Half of the plate length.
    pub half_length: f64,
}

impl PlateMotion {
    /// A plate at rest, tilted by `angle`, centered at the origin.
    pub fn fixed(angle: f64, half_length: f64) -> Self {
        PlateMotion {
            center: [0.0; 2],
            angle,
            velocity: [0.0; 2],
            angular_velocity: 0.0,
            acceleration: [0.0; 2],
            angular_acceleration: 0.0,
            base: [0.0; 2],
            half_length,
        }
    }
}

/// Contact forces on the load, along the plate normal and tangent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateForces {
    pub normal: f64,
    pub friction: f64,
}

struct Frame {
    t: Vec2,
    n: Vec2,
}

impl Frame {
    fn new(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Frame {
            t: Vec2::new(c, s),
            n: Vec2::new(-s, c),
        }
    }
}

/// Normal force and the friction force needed to keep the load stuck, given
/// the acceleration of the plate point under the load.
fn holding_forces(params: &LoadParams, frame: &Frame, point_acc: Vec2, omega: f64, slide: f64, g: Vec2) -> (f64, f64) {
    let m = params.mass;
    let normal = m * (frame.n.dot(&point_acc) + 2.0 * omega * slide - frame.n.dot(&g));
    let hold = m * (frame.t.dot(&point_acc) - frame.t.dot(&g));
    (normal, hold)
}

fn off_plate(position: f64, half_length: f64, size: f64) -> bool {
    position.abs() > half_length + 0.5 * size
}

/// Direction the load slides in (+1 along the plate tangent), or `None` when
/// the load stays stuck. A stuck load breaks loose only when the holding
/// force exceeds μ·N.
fn sliding_sign(state: &LoadState, params: &LoadParams, normal: f64, hold: f64) -> Option<f64> {
    if state.stuck || state.velocity.abs() <= REST_SPEED {
        if hold.abs() <= params.friction * normal {
            None
        } else {
            Some(-hold.signum())
        }
    } else {
        Some(state.velocity.signum())
    }
}

/// Advance the load one step on a plate with prescribed motion and return the
/// reaction wrench the load exerts on the base.
pub fn step_load(
    state: &LoadState,
    params: &LoadParams,
    plate: &PlateMotion,
    gravity: f64,
    dt: f64,
) -> Result<(LoadState, Wrench)> {
    if !(dt > 0.0) {
        return Err(Error::contract(format!("load step needs dt > 0, got {dt}")));
    }
    let finite = plate.center.iter().chain(&plate.velocity).chain(&plate.acceleration).all(|v| v.is_finite())
        && plate.angle.is_finite()
        && plate.angular_velocity.is_finite()
        && plate.angular_acceleration.is_finite();
    if !finite {
        return Err(Error::contract("plate kinematics are not finite"));
    }
    let g = Vec2::new(0.0, -gravity);
    let mut next = *state;
    match state.phase {
        LoadPhase::Fallen => Ok((next, Wrench::ZERO)),
        LoadPhase::Airborne => {
            let v = Vec2::from(state.world_velocity) + dt * g;
            let p = Vec2::from(state.world_position) + dt * v;
            next.world_velocity = [v.x, v.y];
            next.world_position = [p.x, p.y];
            let frame = Frame::new(plate.angle);
            let d = p - Vec2::from(plate.center);
            if frame.n.dot(&d) <= 0.0 {
                let s = frame.t.dot(&d);
                if off_plate(s, plate.half_length, params.size) {
                    next.phase = LoadPhase::Fallen;
                } else {
                    let r = s * frame.t;
                    let plate_v = Vec2::from(plate.velocity) + plate.angular_velocity * Vec2::new(-r.y, r.x);
                    next = LoadState::on_plate(s, frame.t.dot(&(v - plate_v)));
                    let w = plate_v + next.velocity * frame.t;
                    let landed = Vec2::from(plate.center) + r;
                    next.world_velocity = [w.x, w.y];
                    next.world_position = [landed.x, landed.y];
                }
            }
            Ok((next, Wrench::ZERO))
        }
        LoadPhase::OnPlate => {
            let frame = Frame::new(plate.angle);
            let omega = plate.angular_velocity;
            let r = state.position * frame.t;
            let perp_r = Vec2::new(-r.y, r.x);
            let point_acc = Vec2::from(plate.acceleration) + plate.angular_acceleration * perp_r - omega * omega * r;
            let (normal, hold) = holding_forces(params, &frame, point_acc, omega, state.velocity, g);
            let point = Vec2::from(plate.center) + r;
            if normal <= 0.0 {
                // The plate pulls away: the load leaves it with the plate's velocity.
                let v = Vec2::from(plate.velocity) + omega * perp_r + state.velocity * frame.t + dt * g;
                let p = point + dt * v;
                next = LoadState::airborne([p.x, p.y], [v.x, v.y]);
                return Ok((next, Wrench::ZERO));
            }
            let friction = match sliding_sign(state, params, normal, hold) {
                None => {
                    next.stuck = true;
                    next.velocity = 0.0;
                    hold
                }
                Some(sign) => {
                    let friction = -sign * params.friction * normal;
                    let accel = frame.t.dot(&g) + friction / params.mass - frame.t.dot(&point_acc);
                    let v = state.velocity + dt * accel;
                    next.stuck = false;
                    // A sliding load that reverses within the step comes to rest.
                    next.velocity = if state.velocity != 0.0 && v * state.velocity < 0.0 { 0.0 } else { v };
                    friction
                }
            };
            next.position = state.position + dt * next.velocity;
            let plate_vel = Vec2::from(plate.velocity) + omega * perp_r;
            let world_v = plate_vel + next.velocity * frame.t;
            next.world_velocity = [world_v.x, world_v.y];
            let p = Vec2::from(plate.center) + next.position * frame.t;
            next.world_position = [p.x, p.y];
            if off_plate(next.position, plate.half_length, params.size) {
                next.phase = LoadPhase::Fallen;
            }
            let force = -(normal * frame.n + friction * frame.t);
            let offset = point - Vec2::from(plate.base);
            Ok((next, Wrench::at_point([force.x, force.y], [offset.x, offset.y])))
        }
    }
}

/// Contact forces the plate currently applies to the load for prescribed
/// plate motion (zero when not on the plate).
pub fn plate_forces(state: &LoadState, params: &LoadParams, plate: &PlateMotion, gravity: f64) -> PlateForces {
    if state.phase != LoadPhase::OnPlate {
        return PlateForces {
            normal: 0.0,
            friction: 0.0,
        };
    }
    let g = Vec2::new(0.0, -gravity);
    let frame = Frame::new(plate.angle);
    let omega = plate.angular_velocity;
    let r = state.position * frame.t;
    let perp_r = Vec2::new(-r.y, r.x);
    let point_acc = Vec2::from(plate.acceleration) + plate.angular_acceleration * perp_r - omega * omega * r;
    let (normal, hold) = holding_forces(params, &frame, point_acc, omega, state.velocity, g);
    let friction = match sliding_sign(state, params, normal, hold) {
        None => hold,
        Some(sign) => -sign * params.friction * normal,
    };
    PlateForces { normal, friction }
}

/// Plate surface point under plate coordinate `s`, in the base frame.
fn plate_point_local(model: &RobotModel, s: f64) -> [f64; 2] {
    [model.plate_offset + s, model.plate_height]
}

/// Load characteristics in the robot base frame.
pub fn load_characteristics(
    state: &LoadState,
    params: &LoadParams,
    model: &RobotModel,
    robot: &RobotState,
) -> LoadCharacteristics {
    match state.phase {
        LoadPhase::Fallen => LoadCharacteristics::ABSENT,
        LoadPhase::OnPlate => LoadCharacteristics([
            model.plate_offset + state.position,
            state.velocity,
            params.mass,
            params.friction,
        ]),
        LoadPhase::Airborne => {
            let (s, c) = robot.pitch.sin_cos();
            let d = [
                state.world_position[0] - robot.base_position[0],
                state.world_position[1] - robot.base_position[1],
            ];
            // Velocity relative to the rotating base frame.
            let dv = [
                state.world_velocity[0] - robot.base_velocity[0] + robot.pitch_rate * d[1],
                state.world_velocity[1] - robot.base_velocity[1] - robot.pitch_rate * d[0],
            ];
            LoadCharacteristics([
                c * d[0] + s * d[1],
                c * dv[0] + s * dv[1],
                params.mass,
                params.friction,
            ])
        }
    }
}

/// Sampling ranges for training loads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRanges {
    pub mass: [f64; 2],
    pub size: [f64; 2],
    pub friction: [f64; 2],
    pub initial_speed: [f64; 2],
}

impl Default for LoadRanges {
    fn default() -> Self {
        LoadRanges {
            mass: [0.001, 8.0],
            size: [0.025, 0.15],
            friction: [0.001, 0.2],
            initial_speed: [0.0, 0.5],
        }
    }
}

impl LoadRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("load_mass", self.mass),
            ("load_size", self.size),
            ("load_friction", self.friction),
            ("load_initial_speed", self.initial_speed),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::config(name, "lower bound exceeds upper bound"));
            }
        }
        if !(self.mass[0] > 0.0 && self.size[0] > 0.0 && self.friction[0] >= 0.0 && self.initial_speed[0] >= 0.0) {
            return Err(Error::config("load ranges", "mass and size must be > 0, friction and speed >= 0"));
        }
        Ok(())
    }
}

/// Where a scripted load starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// On the plate at plate coordinate `position` sliding at `velocity`.
    OnPlate { position: f64, velocity: f64 },
    /// Released `height` above the base origin with horizontal `velocity`.
    Drop { height: f64, velocity: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadScript {
    pub mass: f64,
    pub friction: f64,
    pub size: f64,
    pub placement: Placement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpawnMode {
    Training,
    Scripted(LoadScript),
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Create a load for a robot that has just been reset.
pub fn spawn_load(
    ranges: &LoadRanges,
    seed: u64,
    mode: &SpawnMode,
    model: &RobotModel,
    robot: &RobotState,
) -> (LoadParams, LoadState) {
    let (params, mut state) = match mode {
        SpawnMode::Training => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = LoadParams {
                mass: uniform(&mut rng, ranges.mass),
                size: uniform(&mut rng, ranges.size),
                friction: uniform(&mut rng, ranges.friction),
            };
            let half = model.plate_half_length();
            let position = rng.gen_range(-half..=half);
            let speed = uniform(&mut rng, ranges.initial_speed);
            let velocity = if rng.gen::<bool>() { speed } else { -speed };
            (params, LoadState::on_plate(position, velocity))
        }
        SpawnMode::Scripted(script) => {
            let params = LoadParams {
                mass: script.mass,
                friction: script.friction,
                size: script.size,
            };
            let state = match script.placement {
                Placement::OnPlate { position, velocity } => LoadState::on_plate(position, velocity),
                Placement::Drop { height, velocity } => LoadState::airborne(
                    [robot.base_position[0], robot.base_position[1] + height],
                    [velocity, 0.0],
                ),
            };
            (params, state)
        }
    };
    if state.phase == LoadPhase::OnPlate {
        let kin = Kinematics::new(model, robot);
        let p = kin.base + kin.to_world(plate_point_local(model, state.position));
        let pk = kin.point(Body::Torso, p);
        let v = pk.velocity + state.velocity * kin.to_world([1.0, 0.0]);
        state.world_position = [p.x, p.y];
        state.world_velocity = [v.x, v.y];
    }
    (params, state)
}

/// A load coupled to the simulated robot, advanced inside every physics
/// substep through [`Attachment`].
#[derive(Debug, Clone)]
pub struct LoadBody {
    pub params: LoadParams,
    pub state: LoadState,
    /// Sliding direction chosen for a load that breaks loose from rest.
    breakaway: Option<f64>,
    /// The plate stopped pushing during the current substep.
    lifted: bool,
    /// Reaction wrench on the base, averaged over the substeps of the last
    /// control period.
    pub reaction: Wrench,
    reaction_sum: Wrench,
    reaction_count: usize,
}

impl LoadBody {
    pub fn new(params: LoadParams, state: LoadState) -> Self {
        LoadBody {
            params,
            state,
            breakaway: None,
            lifted: false,
            reaction: Wrench::ZERO,
            reaction_sum: Wrench::ZERO,
            reaction_count: 0,
        }
    }

    /// Close a control period: publish the mean reaction wrench.
    pub fn finish_period(&mut self) {
        self.reaction = if self.reaction_count == 0 {
            Wrench::ZERO
        } else {
            let k = 1.0 / self.reaction_count as f64;
            Wrench {
                force: [self.reaction_sum.force[0] * k, self.reaction_sum.force[1] * k],
                moment: self.reaction_sum.moment * k,
            }
        };
        self.reaction_sum = Wrench::ZERO;
        self.reaction_count = 0;
    }

    pub fn characteristics(&self, model: &RobotModel, robot: &RobotState) -> LoadCharacteristics {
        load_characteristics(&self.state, &self.params, model, robot)
    }

    fn frame(kin: &Kinematics) -> Frame {
        Frame {
            t: kin.to_world([1.0, 0.0]),
            n: kin.to_world([0.0, 1.0]),
        }
    }

    fn plate_point(&self, model: &RobotModel, kin: &Kinematics) -> crate::sim::PointKinematics {
        let p = kin.base + kin.to_world(plate_point_local(model, self.state.position));
        kin.point(Body::Torso, p)
    }

    fn slide_sign(&self) -> Option<f64> {
        if self.state.stuck {
            None
        } else if self.state.velocity.abs() > REST_SPEED {
            Some(self.state.velocity.signum())
        } else {
            self.breakaway
        }
    }

    fn record(&mut self, force: Vec2, offset: Vec2) {
        let w = Wrench::at_point([force.x, force.y], [offset.x, offset.y]);
        self.reaction_sum.force[0] += w.force[0];
        self.reaction_sum.force[1] += w.force[1];
        self.reaction_sum.moment += w.moment;
        self.reaction_count += 1;
    }
}

impl Attachment for LoadBody {
    fn impulse(&mut self, model: &RobotModel, kin: &Kinematics, dynamics: &Dynamics) -> Option<Vec7> {
        if self.state.phase != LoadPhase::Airborne {
            return None;
        }
        let frame = Self::frame(kin);
        let surface = kin.base + kin.to_world(plate_point_local(model, 0.0));
        let p = Vec2::from(self.state.world_position);
        let height = frame.n.dot(&(p - surface));
        if height > 0.0 {
            return None;
        }
        let s = frame.t.dot(&(p - surface));
        if off_plate(s, model.plate_half_length(), self.params.size) {
            // Passed the plate level beside the plate: it will never land.
            self.state.phase = LoadPhase::Fallen;
            return None;
        }
        let pk = kin.point(Body::Torso, surface + s * frame.t);
        let mut v = Vec2::from(self.state.world_velocity);
        let approach = frame.n.dot(&(v - pk.velocity));
        let mut dv = Vec7::zeros();
        if approach < 0.0 {
            let m_eff = dynamics.effective_mass(&pk.jacobian, frame.n);
            let j = -approach / (1.0 / self.params.mass + 1.0 / m_eff);
            v += (j / self.params.mass) * frame.n;
            dv = -dynamics.inverse_mass_times(&(pk.jacobian.transpose() * (j * frame.n)));
        }
        let plate_v = pk.velocity + pk.jacobian * dv;
        self.state.phase = LoadPhase::OnPlate;
        self.state.position = s;
        self.state.velocity = frame.t.dot(&(v - plate_v));
        self.state.stuck = self.state.velocity == 0.0;
        self.breakaway = None;
        let landed = surface + s * frame.t;
        self.state.world_position = [landed.x, landed.y];
        self.state.world_velocity = [v.x, v.y];
        Some(dv)
    }

    fn coupling(&self, model: &RobotModel, kin: &Kinematics, gravity: f64) -> Option<Coupling> {
        if self.state.phase != LoadPhase::OnPlate || self.lifted {
            return None;
        }
        let m = self.params.mass;
        let g = Vec2::new(0.0, -gravity);
        let pk = self.plate_point(model, kin);
        let jt = pk.jacobian.transpose();
        match self.slide_sign() {
            None => Some(Coupling {
                mass: m * jt * pk.jacobian,
                force: m * jt * (g - pk.bias),
            }),
            Some(sign) => {
                let frame = Self::frame(kin);
                let d = frame.n - sign * self.params.friction * frame.t;
                let jd = jt * d;
                let jn = pk.jacobian.transpose() * frame.n;
                let free = frame.n.dot(&pk.bias) + 2.0 * kin.pitch_rate * self.state.velocity - frame.n.dot(&g);
                Some(Coupling {
                    mass: m * jd * jn.transpose(),
                    force: -m * free * jd,
                })
            }
        }
    }

    fn revise(&mut self, model: &RobotModel, kin: &Kinematics, qdd: &Vec7, gravity: f64) -> bool {
        if self.state.phase != LoadPhase::OnPlate || self.lifted {
            return false;
        }
        let pk = self.plate_point(model, kin);
        let acc = pk.jacobian * qdd + pk.bias;
        let frame = Self::frame(kin);
        let g = Vec2::new(0.0, -gravity);
        let (normal, hold) = holding_forces(&self.params, &frame, acc, kin.pitch_rate, self.state.velocity, g);
        if normal <= 0.0 {
            self.lifted = true;
            return true;
        }
        if self.state.stuck && hold.abs() > self.params.friction * normal {
            self.state.stuck = false;
            self.breakaway = Some(-hold.signum());
            return true;
        }
        false
    }

    fn advance(&mut self, model: &RobotModel, kin: &Kinematics, qdd: &Vec7, gravity: f64, dt: f64) -> Result<()> {
        let g = Vec2::new(0.0, -gravity);
        match self.state.phase {
            LoadPhase::Fallen => {}
            LoadPhase::Airborne => {
                let v = Vec2::from(self.state.world_velocity) + dt * g;
                let p = Vec2::from(self.state.world_position) + dt * v;
                self.state.world_velocity = [v.x, v.y];
                self.state.world_position = [p.x, p.y];
            }
            LoadPhase::OnPlate => {
                let pk = self.plate_point(model, kin);
                if self.lifted {
                    self.lifted = false;
                    let frame = Self::frame(kin);
                    let v = pk.velocity + self.state.velocity * frame.t + dt * g;
                    let p = pk.position + dt * v;
                    self.state = LoadState::airborne([p.x, p.y], [v.x, v.y]);
                    return Ok(());
                }
                let acc = pk.jacobian * qdd + pk.bias;
                let frame = Self::frame(kin);
                let (normal, hold) =
                    holding_forces(&self.params, &frame, acc, kin.pitch_rate, self.state.velocity, g);
                let friction = match self.slide_sign() {
                    None => {
                        self.state.velocity = 0.0;
                        hold
                    }
                    Some(sign) => {
                        let friction = -sign * self.params.friction * normal;
                        let accel = frame.t.dot(&g) + friction / self.params.mass - frame.t.dot(&acc);
                        let before = self.state.velocity;
                        let v = before + dt * accel;
                        if before != 0.0 && v * before < 0.0 {
                            self.state.velocity = 0.0;
                            self.state.stuck = true;
                        } else {
                            self.state.velocity = v;
                        }
                        friction
                    }
                };
                self.breakaway = None;
                self.record(-(normal * frame.n + friction * frame.t), pk.position - kin.base);
                self.state.position += dt * self.state.velocity;
                let world_v = pk.velocity + dt * acc + self.state.velocity * frame.t;
                let world_p = pk.position + dt * world_v;
                self.state.world_velocity = [world_v.x, world_v.y];
                self.state.world_position = [world_p.x, world_p.y];
                if !(self.state.position.is_finite() && self.state.velocity.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "load state".into(),
                        stats: format!("position {} velocity {}", self.state.position, self.state.velocity),
                    });
                }
                if off_plate(self.state.position, model.plate_half_length(), self.params.size) {
                    self.state.phase = LoadPhase::Fallen;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mass: f64, friction: f64) -> LoadParams {
        LoadParams {
            mass,
            friction,
            size: 0.1,
        }
    }

    fn accelerating(a: f64) -> PlateMotion {
        PlateMotion {
            acceleration: [a, 0.0],
            ..PlateMotion::fixed(0.0, 0.4)
        }
    }

    #[test]
    fn holds_below_stiction_threshold() {
        let p = params(2.0, 0.2);
        let mut s = LoadState::on_plate(0.0, 0.0);
        for _ in 0..200 {
            s = step_load(&s, &p, &accelerating(0.5), 9.81, 1.0 / 200.0).unwrap().0;
            assert_eq!(s.velocity, 0.0);
            assert!(s.stuck);
        }
    }

    #[test]
    fn slips_with_kinetic_friction() {
        let p = params(1.0, 0.05);
        let mut s = LoadState::on_plate(0.0, 0.0);
        let dt = 1.0 / 1000.0;
        for _ in 0..100 {
            s = step_load(&s, &p, &accelerating(2.0), 9.81, dt).unwrap().0;
        }
        let expected = -(2.0 - 0.05 * 9.81) * 0.1;
        assert!((s.velocity - expected).abs() < 1e-9, "{}", s.velocity);
        assert!((expected + 0.15095).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_dt() {
        let s = LoadState::on_plate(0.0, 0.0);
        let r = step_load(&s, &params(1.0, 0.1), &accelerating(0.0), 9.81, 0.0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn characteristics_of_centered_resting_load() {
        let model = RobotModel::default();
        let robot = crate::sim::reset(&model, &crate::sim::TerrainProfile::Plane, 0);
        let l = load_characteristics(&LoadState::on_plate(0.0, 0.0), &params(7.0, 0.01), &model, &robot);
        assert_eq!(l.0, [model.plate_offset, 0.0, 7.0, 0.01]);
        let l = load_characteristics(&LoadState::on_plate(0.1, 0.3), &params(7.0, 0.01), &model, &robot);
        assert_eq!(l.velocity(), 0.3);
    }

    #[test]
    fn fallen_load_reports_absent() {
        let model = RobotModel::default();
        let robot = crate::sim::reset(&model, &crate::sim::TerrainProfile::Plane, 0);
        let mut s = LoadState::on_plate(0.0, 0.0);
        s.phase = LoadPhase::Fallen;
        assert_eq!(
            load_characteristics(&s, &params(7.0, 0.01), &model, &robot),
            LoadCharacteristics::ABSENT
        );
    }

    #[test]
    fn leaves_plate_past_the_edge() {
        let p = params(1.0, 0.0);
        let mut s = LoadState::on_plate(0.39, 1.0);
        for _ in 0..20 {
            s = step_load(&s, &p, &PlateMotion::fixed(0.0, 0.4), 9.81, 0.005).unwrap().0;
        }
        assert!(s.fallen());
    }

    #[test]
    fn lifts_off_when_plate_drops_faster_than_gravity_and_lands_again() {
        let plate = PlateMotion {
            acceleration: [0.0, -12.0],
            ..PlateMotion::fixed(0.0, 0.4)
        };
        let s = step_load(&LoadState::on_plate(0.1, 0.0), &params(1.0, 0.5), &plate, 9.81, 0.005).unwrap().0;
        assert_eq!(s.phase, LoadPhase::Airborne);
        let (s, _) = step_load(&s, &params(1.0, 0.5), &PlateMotion::fixed(0.0, 0.4), 9.81, 0.005).unwrap();
        assert_eq!(s.phase, LoadPhase::OnPlate);
        assert!((s.position - 0.1).abs() < 1e-12);
        // Beside the plate the same descent means the load is gone.
        let beside = LoadState::airborne([0.6, 0.0], [0.0, -1.0]);
        assert!(step_load(&beside, &params(1.0, 0.5), &PlateMotion::fixed(0.0, 0.4), 9.81, 0.005).unwrap().0.fallen());
    }

    #[test]
    fn spawn_is_deterministic_and_scripted_drop_is_exact() {
        let model = RobotModel::default();
        let robot = crate::sim::reset(&model, &crate::sim::TerrainProfile::Plane, 2);
        let r = LoadRanges::default();
        let a = spawn_load(&r, 5, &SpawnMode::Training, &model, &robot);
        assert_eq!(a, spawn_load(&r, 5, &SpawnMode::Training, &model, &robot));
        let script = LoadScript {
            mass: 7.0,
            friction: 0.02,
            size: 0.1,
            placement: Placement::Drop {
                height: 0.3,
                velocity: 0.2,
            },
        };
        let (p, s) = spawn_load(&r, 0, &SpawnMode::Scripted(script), &model, &robot);
        assert_eq!(p, LoadParams { mass: 7.0, friction: 0.02, size: 0.1 });
        assert_eq!(s.phase, LoadPhase::Airborne);
        assert_eq!(s.world_position, [robot.base_position[0], robot.base_position[1] + 0.3]);
        assert_eq!(s.world_velocity, [0.2, 0.0]);
    }
}

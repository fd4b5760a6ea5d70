//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use loadadapt::load::{step_load, LoadParams, LoadState, PlateMotion};
use loadadapt::nn::{Mlp, MlpSpec};
use loadadapt::rewards::{RewardConfig, RewardInputs, TERM_COUNT};
use loadadapt::sim::{reset, RobotModel, RobotState, TerrainProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const G: f64 = 9.81;
pub const DT: f64 = 1.0 / 200.0;

// ---------------------------------------------------------------------------
// Friction

fn slide(params: &LoadParams, plate: &PlateMotion, steps: usize) -> LoadState {
    (0..steps).fold(LoadState::on_plate(0.0, 0.0), |s, _| step_load(&s, params, plate, G, DT).unwrap().0)
}

/// Relative error of the 1 s slide on a plate accelerating at `accel`
/// against x(t) = −½(a − μg)t².
pub fn accelerating_plate_error(mass: f64, mu: f64, accel: f64) -> f64 {
    let params = LoadParams { mass, friction: mu, size: 0.1 };
    let plate = PlateMotion {
        acceleration: [accel, 0.0],
        ..PlateMotion::fixed(0.0, 100.0)
    };
    let x = slide(&params, &plate, 200).position;
    let exact = -0.5 * (accel - mu * G);
    ((x - exact) / exact).abs()
}

/// Relative error of the 1 s slide down a plate inclined at `deg` against
/// x(t) = −½g(sin θ − μ cos θ)t².
pub fn inclined_plate_error(mass: f64, mu: f64, deg: f64) -> f64 {
    let theta = deg.to_radians();
    let params = LoadParams { mass, friction: mu, size: 0.1 };
    let x = slide(&params, &PlateMotion::fixed(theta, 100.0), 200).position;
    let exact = -0.5 * G * (theta.sin() - mu * theta.cos());
    ((x - exact) / exact).abs()
}

/// Plate acceleration at which a resting load starts to slip, by bisection.
/// The Coulomb answer is μg, i.e. a friction force of μN.
pub fn slip_threshold(mass: f64, mu: f64) -> f64 {
    let params = LoadParams { mass, friction: mu, size: 0.1 };
    let slips = |a: f64| {
        let plate = PlateMotion {
            acceleration: [a, 0.0],
            ..PlateMotion::fixed(0.0, 100.0)
        };
        !step_load(&LoadState::on_plate(0.0, 0.0), &params, &plate, G, DT).unwrap().0.stuck
    };
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if slips(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

// ---------------------------------------------------------------------------
// Gradients

fn weighted_output(net: &Mlp, x: &[f64], batch: usize, c: &[f64]) -> f64 {
    let y = net.forward_batch(x, batch).unwrap().output;
    y.iter().zip(c).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between analytic and central-difference (h = 1e-5)
/// gradients, parameters and inputs, over `cases` random networks. Cases
/// cycle through 0–3 hidden layers, every other one with the unit-sphere
/// output.
pub fn gradient_check(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let hidden: Vec<usize> = (0..case % 4).map(|_| rng.gen_range(2..9)).collect();
        let spec = MlpSpec::new(rng.gen_range(1..7), &hidden, rng.gen_range(2..6), case % 2 == 1);
        let mut net = Mlp::orthogonal(spec.clone(), 1.0, &mut rng).unwrap();
        for p in net.params.iter_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        let batch = 3;
        let x: Vec<f64> = (0..batch * spec.input).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..batch * spec.output).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = net.forward_batch(&x, batch).unwrap();
        let mut grads = vec![0.0; net.params.len()];
        let dx = net.backward(&tape, &c, &mut grads, true).unwrap();
        for i in 0..net.params.len() {
            let keep = net.params[i];
            net.params[i] = keep + h;
            let up = weighted_output(&net, &x, batch, &c);
            net.params[i] = keep - h;
            let down = weighted_output(&net, &x, batch, &c);
            net.params[i] = keep;
            worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * h)));
        }
        let mut xp = x.clone();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = weighted_output(&net, &xp, batch, &c);
            xp[i] = x[i] - h;
            let down = weighted_output(&net, &xp, batch, &c);
            xp[i] = x[i];
            worst = worst.max(rel_err(dx[i], (up - down) / (2.0 * h)));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// GAE

/// A_t = Σ_k (γλ)^k δ_{t+k}, truncated at the first termination.
pub fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    let delta = |t: usize| r[t] + gamma * next_v(t) * if d[t] { 0.0 } else { 1.0 } - v[t];
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for k in t..n {
                sum += (gamma * lambda).powi((k - t) as i32) * delta(k);
                if d[k] {
                    break;
                }
            }
            sum
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Rewards

/// Owned inputs for one reward evaluation.
pub struct RewardCase {
    pub model: RobotModel,
    pub state: RobotState,
    pub terrain: TerrainProfile,
    pub command: f64,
    pub actions: [[f64; 4]; 3],
    pub load_velocity: Option<f64>,
    pub touchdown: [f64; 2],
}

impl RewardCase {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let model = RobotModel::default();
        let mut s = reset(&model, &TerrainProfile::Plane, rng.gen());
        let mut u = |a: f64| rng.gen_range(-a..a);
        s.base_position = [u(3.0), 0.3 + u(0.1)];
        s.pitch = u(0.5);
        s.base_velocity = [u(2.0), u(0.5)];
        s.pitch_rate = u(2.0);
        for j in 0..4 {
            let (lo, hi) = (model.joint_lower[j], model.joint_upper[j]);
            s.q[j] = lo + (hi - lo) * (0.5 + u(0.5));
            s.qd[j] = u(10.0);
            s.qdd[j] = u(300.0);
            s.tau[j] = u(20.0);
        }
        s.foot_forces = [[u(100.0), 150.0 + u(150.0)], [u(100.0), 150.0 + u(150.0)]];
        s.collision_count = rng.gen_range(0..3);
        // Sometimes pin a joint right at a limit.
        if rng.gen_bool(0.3) {
            let j = rng.gen_range(0..4);
            s.q[j] = model.joint_upper[j];
        }
        let mut u = |a: f64| rng.gen_range(-a..a);
        let actions = [[u(1.0), u(1.0), u(1.0), u(1.0)], [u(1.0), u(1.0), u(1.0), u(1.0)], [u(1.0), u(1.0), u(1.0), u(1.0)]];
        let command = u(1.0);
        let load_velocity = if rng.gen_bool(0.8) { Some(rng.gen_range(-1.5..1.5)) } else { None };
        let touchdown = [
            if rng.gen_bool(0.5) { rng.gen_range(0.01..1.0) } else { 0.0 },
            if rng.gen_bool(0.5) { rng.gen_range(0.01..1.0) } else { 0.0 },
        ];
        let terrain = if rng.gen_bool(0.5) {
            TerrainProfile::Plane
        } else {
            TerrainProfile::Slope { angle: rng.gen_range(-0.3..0.3) }
        };
        RewardCase {
            model,
            state: s,
            terrain,
            command,
            actions,
            load_velocity,
            touchdown,
        }
    }

    pub fn inputs(&self) -> RewardInputs<'_> {
        RewardInputs {
            model: &self.model,
            state: &self.state,
            terrain: &self.terrain,
            command: self.command,
            action: &self.actions[0],
            prev_action: &self.actions[1],
            prev_prev_action: &self.actions[2],
            load_velocity: self.load_velocity,
            touchdown_air_time: self.touchdown,
        }
    }
}

/// Weighted reward terms evaluated straight from the reward table
/// definitions, in breakdown order.
pub fn reward_oracle(cfg: &RewardConfig, c: &RewardCase) -> [f64; TERM_COUNT] {
    let s = &c.state;
    let w = &cfg.weights;
    // World velocity rotated into the base frame.
    let (sin, cos) = s.pitch.sin_cos();
    let v_forward = cos * s.base_velocity[0] + sin * s.base_velocity[1];
    let v_up = -sin * s.base_velocity[0] + cos * s.base_velocity[1];
    let [a0, a1, a2] = &c.actions;

    let mut acc = 0.0;
    let mut power = 0.0;
    let mut torque = 0.0;
    let mut rate = 0.0;
    let mut smooth = 0.0;
    let mut limits = 0.0;
    for j in 0..4 {
        acc += s.qdd[j] * s.qdd[j];
        power += (s.tau[j] * s.qd[j]).abs();
        torque += s.tau[j] * s.tau[j];
        rate += (a0[j] - a1[j]).powi(2);
        let second = if cfg.literal_smoothness { a0[j] - 2.0 * a1[j] - a2[j] } else { a0[j] - 2.0 * a1[j] + a2[j] };
        smooth += second * second;
        let span = c.model.joint_upper[j] - c.model.joint_lower[j];
        if s.q[j] - c.model.joint_lower[j] <= cfg.limit_margin * span
            || c.model.joint_upper[j] - s.q[j] <= cfg.limit_margin * span
        {
            limits += 1.0;
        }
    }
    let ground = c.terrain.sample_height(s.base_position[0]);
    let height_err = c.model.base_height_target - (s.base_position[1] - ground);
    let mut air = 0.0;
    if c.command.abs() > cfg.air_time_command {
        for t in c.touchdown {
            if t > 0.0 {
                air += t - cfg.air_time_target;
            }
        }
    }
    let mut excess = 0.0;
    for f in s.foot_forces {
        let norm = (f[0] * f[0] + f[1] * f[1]).sqrt();
        if norm > cfg.contact_force_threshold {
            excess += norm - cfg.contact_force_threshold;
        }
    }
    let load = match c.load_velocity {
        Some(v) => 1.0 / (1.0 + v.abs()),
        None => 0.0,
    };
    [
        w.lin_vel_tracking * (-(c.command - v_forward).powi(2) / 0.25).exp(),
        w.ang_vel_tracking * (-(s.pitch_rate * s.pitch_rate) / 0.25).exp(),
        w.lin_vel_z * v_up * v_up,
        w.ang_vel_xy * 0.0,
        w.joint_acc * acc,
        w.joint_power * power,
        w.joint_torque * torque,
        w.base_height * height_err * height_err,
        w.action_rate * rate,
        w.action_smoothness * smooth,
        w.collision * s.collision_count as f64,
        w.joint_limit * limits,
        w.feet_air_time * air,
        w.feet_contact_forces * excess,
        w.load_lin_vel * load,
    ]
}

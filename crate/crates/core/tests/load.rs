#![allow(clippy::needless_range_loop)]

mod common;

use common::{accelerating_plate_error, inclined_plate_error, slip_threshold, DT, G};
use loadadapt::load::{
    plate_forces, spawn_load, step_load, LoadBody, LoadParams, LoadPhase, LoadRanges, LoadScript, LoadState,
    Placement, PlateMotion, SpawnMode,
};
use loadadapt::sim::{reset, step_with, Actuation, RobotModel, SimConfig, TerrainProfile, Wrench};
use proptest::prelude::*;


fn load(mass: f64, friction: f64) -> LoadParams {
    LoadParams {
        mass,
        friction,
        size: 0.1,
    }
}

fn long_plate(angle: f64) -> PlateMotion {
    PlateMotion::fixed(angle, 100.0)
}

fn slide(state: LoadState, params: &LoadParams, plate: &PlateMotion, steps: usize) -> LoadState {
    (0..steps).fold(state, |s, _| step_load(&s, params, plate, G, DT).unwrap().0)
}

#[test]
fn constant_acceleration_slide_matches_closed_form() {
    for (mass, mu, accel) in [(3.0, 0.05, 2.0), (7.0, 0.01, 1.0), (0.5, 0.3, 5.0)] {
        let err = accelerating_plate_error(mass, mu, accel);
        assert!(err < 0.01, "m {mass} mu {mu} a {accel}: relative error {err}");
    }
}

#[test]
fn inclined_plate_slide_matches_closed_form() {
    let angle = 26f64.to_radians();
    assert!((G * (angle.sin() - 0.2 * angle.cos()) - 2.537).abs() < 1e-3);
    for (mass, mu) in [(7.0, 0.2), (1.0, 0.01), (3.0, 0.4)] {
        let err = inclined_plate_error(mass, mu, 26.0);
        assert!(err < 0.01, "m {mass} mu {mu}: relative error {err}");
    }
}

#[test]
fn shallow_incline_holds_the_load() {
    let angle = 0.1f64.atan() * 0.99;
    let s = slide(LoadState::on_plate(0.0, 0.0), &load(1.0, 0.1), &long_plate(angle), 200);
    assert_eq!(s.position, 0.0);
    assert!(s.stuck);
}

#[test]
fn stick_slip_threshold_is_mu_g() {
    for (mass, mu) in [(2.0, 0.3), (7.0, 0.01), (0.5, 0.5)] {
        let a = slip_threshold(mass, mu);
        assert!((a * mass - mu * mass * G).abs() < 1e-6, "m {mass} mu {mu}: threshold {a}");
    }
}

#[test]
fn reaction_balances_forces_on_a_stuck_load() {
    // Stuck: the plate must supply m·(a − g) to the load.
    let params = load(4.0, 0.8);
    let plate = PlateMotion {
        acceleration: [1.5, 0.7],
        base: [0.1, -0.2],
        ..long_plate(0.0)
    };
    let state = LoadState::on_plate(0.25, 0.0);
    let (next, wrench) = step_load(&state, &params, &plate, G, DT).unwrap();
    assert!(next.stuck);
    let on_load = [4.0 * 1.5, 4.0 * (0.7 + G)];
    for i in 0..2 {
        assert!((wrench.force[i] + on_load[i]).abs() <= 1e-9 * on_load[i].abs().max(1.0));
    }
    let r = [0.25 - 0.1, 0.2];
    let moment = r[0] * wrench.force[1] - r[1] * wrench.force[0];
    assert!((wrench.moment - moment).abs() <= 1e-9 * moment.abs().max(1.0));
}

#[test]
fn spawn_ranges_are_respected() {
    let model = RobotModel::default();
    let robot = reset(&model, &TerrainProfile::Plane, 0);
    let r = LoadRanges::default();
    for seed in 0..10_000 {
        let (p, s) = spawn_load(&r, seed, &SpawnMode::Training, &model, &robot);
        assert!(p.mass >= 0.001 && p.mass <= 8.0);
        assert!(p.size >= 0.025 && p.size <= 0.15);
        assert!(p.friction >= 0.001 && p.friction <= 0.2);
        assert!(s.velocity.abs() <= 0.5);
        assert!(s.position.abs() <= model.plate_half_length());
    }
}

#[test]
fn load_on_standing_robot_stays_put() {
    let model = RobotModel::default();
    let cfg = SimConfig::default();
    let mut robot = reset(&model, &TerrainProfile::Plane, 1);
    let hold = Actuation::hold(model.default_joint_angles);
    let mut body = LoadBody::new(load(2.0, 0.6), LoadState::on_plate(0.05, 0.0));
    for _ in 0..150 {
        robot = step_with(&model, &robot, &hold, &TerrainProfile::Plane, &Wrench::ZERO, &cfg, Some(&mut body), None)
            .unwrap();
        body.finish_period();
    }
    assert_eq!(body.state.phase, LoadPhase::OnPlate);
    assert!((body.state.position - 0.05).abs() < 0.02);
    // Steady support must include the load's weight.
    let weight = (model.total_mass() + 2.0) * cfg.gravity;
    assert!((robot.ground_force[1] - weight).abs() < 0.02 * weight, "{} vs {weight}", robot.ground_force[1]);
    assert!((body.reaction.force[1] + 2.0 * cfg.gravity).abs() < 0.05 * 2.0 * cfg.gravity);
}

#[test]
fn dropped_load_lands_on_the_plate() {
    let model = RobotModel::default();
    let cfg = SimConfig::default();
    let mut robot = reset(&model, &TerrainProfile::Plane, 1);
    let hold = Actuation::hold(model.default_joint_angles);
    let script = LoadScript {
        mass: 1.0,
        friction: 0.5,
        size: 0.1,
        placement: Placement::Drop {
            height: 0.3,
            velocity: 0.0,
        },
    };
    let (params, state) = spawn_load(&LoadRanges::default(), 0, &SpawnMode::Scripted(script), &model, &robot);
    let mut body = LoadBody::new(params, state);
    for _ in 0..50 {
        robot = step_with(&model, &robot, &hold, &TerrainProfile::Plane, &Wrench::ZERO, &cfg, Some(&mut body), None)
            .unwrap();
        body.finish_period();
    }
    assert_eq!(body.state.phase, LoadPhase::OnPlate);
    assert!(body.state.velocity.abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn friction_never_adds_energy(
        mass in 0.01f64..8.0,
        friction in 0.0f64..0.5,
        pos in -0.3f64..0.3,
        vel in -0.5f64..0.5,
        ax in -6.0f64..6.0,
        az in -5.0f64..5.0,
        angle in -0.4f64..0.4,
        omega in -2.0f64..2.0,
        alpha in -10.0f64..10.0,
    ) {
        let params = load(mass, friction);
        let plate = PlateMotion {
            angle,
            angular_velocity: omega,
            angular_acceleration: alpha,
            acceleration: [ax, az],
            ..PlateMotion::fixed(angle, 0.4)
        };
        let state = LoadState::on_plate(pos, vel);
        let forces = plate_forces(&state, &params, &plate, G);
        let (next, wrench) = step_load(&state, &params, &plate, G, DT).unwrap();
        if next.phase == LoadPhase::OnPlate {
            prop_assert!(forces.normal > 0.0);
            prop_assert!(forces.friction.abs() <= friction * forces.normal * (1.0 + 1e-12));
            prop_assert!(-forces.friction * next.velocity >= 0.0);
            // Third law: the base receives minus the contact force on the load.
            let (s, c) = angle.sin_cos();
            let on_load = [forces.normal * -s + forces.friction * c, forces.normal * c + forces.friction * s];
            for i in 0..2 {
                prop_assert!((wrench.force[i] + on_load[i]).abs() <= 1e-9 * (1.0 + on_load[i].abs()));
            }
        }
    }
}

use rand::Rng;

use super::DomainRandomizationRanges;
use crate::load::{spawn_load, LoadParams, LoadRanges, LoadScript, LoadState, SpawnMode};
use crate::policy::DynParams;
use crate::sim::{reset, RobotModel, RobotState, SimConfig, TerrainProfile, LINK_COUNT};

/// One environment's randomized physics, a fresh robot and a fresh load.
#[derive(Debug, Clone)]
pub struct EnvDraw {
    pub params: DynParams,
    pub model: RobotModel,
    pub sim: SimConfig,
    /// Action delay in physics substeps.
    pub delay_substeps: usize,
    pub robot: RobotState,
    pub load_params: LoadParams,
    pub load_state: LoadState,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Sample every randomized quantity uniformly from its range.
pub fn randomize_env<R: Rng>(
    ranges: &DomainRandomizationRanges,
    base_model: &RobotModel,
    base_sim: &SimConfig,
    terrain: &TerrainProfile,
    rng: &mut R,
) -> EnvDraw {
    let mut p = DynParams::NOMINAL;
    p.kp_factor = uniform(rng, ranges.kp_factor);
    p.kd_factor = uniform(rng, ranges.kd_factor);
    p.motor_strength = uniform(rng, ranges.motor_strength);
    for f in p.link_mass_factors.iter_mut() {
        *f = uniform(rng, ranges.link_mass_factor);
    }
    p.payload_mass = uniform(rng, ranges.payload_mass);
    for c in p.base_com.iter_mut() {
        *c = 0.01 * uniform(rng, ranges.base_com_cm);
    }
    for leg in p.leg_com.iter_mut() {
        for c in leg.iter_mut() {
            *c = 0.01 * uniform(rng, ranges.leg_com_cm);
        }
    }
    p.friction = uniform(rng, ranges.friction);
    p.action_delay_ms = uniform(rng, ranges.action_delay_ms);

    let (model, sim, delay_substeps) = apply_params(&p, base_model, base_sim);
    let robot = reset(&model, terrain, rng.gen());
    let (load_params, load_state) = spawn_load(&ranges.load_ranges(), rng.gen(), &SpawnMode::Training, &model, &robot);
    EnvDraw {
        params: p,
        model,
        sim,
        delay_substeps,
        robot,
        load_params,
        load_state,
    }
}

/// Robot model, simulator settings and action delay (substeps) for the
/// physics parameters `p`.
pub fn apply_params(p: &DynParams, base_model: &RobotModel, base_sim: &SimConfig) -> (RobotModel, SimConfig, usize) {
    let mut model = base_model.clone();
    for i in 0..LINK_COUNT {
        model.link_masses[i] *= p.link_mass_factors[i];
        model.link_inertias[i] *= p.link_mass_factors[i];
    }
    model.payload_mass = base_model.payload_mass + p.payload_mass;
    model.link_com_offsets[0] = p.base_com;
    model.link_com_offsets[1..].copy_from_slice(&p.leg_com);

    let sim = SimConfig {
        kp: base_sim.kp * p.kp_factor,
        kd: base_sim.kd * p.kd_factor,
        motor_strength: base_sim.motor_strength * p.motor_strength,
        ground_friction: p.friction,
        ..base_sim.clone()
    };
    let delay_substeps = (p.action_delay_ms * 1e-3 / sim.physics_dt()).round() as usize;
    (model, sim, delay_substeps)
}

/// Nominal physics with a scripted load, as used for evaluation.
pub fn nominal_env(
    base_model: &RobotModel,
    base_sim: &SimConfig,
    terrain: &TerrainProfile,
    seed: u64,
    script: &LoadScript,
) -> EnvDraw {
    let p = DynParams::NOMINAL;
    let (model, sim, delay_substeps) = apply_params(&p, base_model, base_sim);
    let robot = reset(&model, terrain, seed);
    let (load_params, load_state) =
        spawn_load(&LoadRanges::default(), seed, &SpawnMode::Scripted(*script), &model, &robot);
    EnvDraw {
        params: p,
        model,
        sim,
        delay_substeps,
        robot,
        load_params,
        load_state,
    }
}

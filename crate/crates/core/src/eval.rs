//! Deterministic evaluation: dynamic walking scenarios, the stationary load
//! drop, and a comparison table across policy roles.
//!
//! Every metric is a pure function of the raw trajectory rows, which can be
//! written to and read back from CSV without loss.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::load::{LoadPhase, LoadScript, Placement};
use crate::policy::{ActMode, ActorLoad, ObsNoise, PolicyBundle, Role};
use crate::rewards::RewardConfig;
use crate::sim::{RobotModel, SimConfig, TerrainProfile};
use crate::train::{nominal_env, Env, EnvSettings, EpisodeConfig, Termination, TrainConfig};
use crate::{Error, Result};

/// Length of the settling window at the end of a run (s).
pub const FINAL_WINDOW_S: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Walking at the commanded speed.
    Dynamic,
    /// Standing still while a load is dropped onto the plate.
    Stationary,
}

/// A scenario cell without the policy and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub terrain: TerrainProfile,
    pub load: LoadScript,
    /// Forward speed command (m/s).
    pub command: f64,
    pub duration_s: f64,
}

impl Scenario {
    /// 15 s at 1 m/s with a 7 kg, μ = 0.01 load resting at the plate center.
    pub fn dynamic(name: &str, terrain: TerrainProfile) -> Self {
        Scenario {
            name: name.into(),
            kind: ScenarioKind::Dynamic,
            terrain,
            load: LoadScript {
                mass: 7.0,
                friction: 0.01,
                size: 0.1,
                placement: Placement::OnPlate {
                    position: 0.0,
                    velocity: 0.0,
                },
            },
            command: 1.0,
            duration_s: 15.0,
        }
    }

    /// A 7 kg, μ = 0.02, 0.1 m box released 0.3 m above the base at 0.2 m/s,
    /// recorded for 30 s on flat ground with a zero command.
    pub fn stationary(name: &str) -> Self {
        Scenario {
            name: name.into(),
            kind: ScenarioKind::Stationary,
            terrain: TerrainProfile::Plane,
            load: LoadScript {
                mass: 7.0,
                friction: 0.02,
                size: 0.1,
                placement: Placement::Drop {
                    height: 0.3,
                    velocity: 0.2,
                },
            },
            command: 0.0,
            duration_s: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::config(format!("scenario.{}.duration_s", self.name), "must be > 0"));
        }
        if !self.command.is_finite() {
            return Err(Error::config(format!("scenario.{}.command", self.name), "must be finite"));
        }
        self.terrain.validate(f64::INFINITY)?;
        crate::load::LoadParams {
            mass: self.load.mass,
            friction: self.load.friction,
            size: self.load.size,
        }
        .validate()
    }
}

/// The experiment matrix: four walking terrains and the load drop.
pub fn standard_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::dynamic("plane", TerrainProfile::Plane),
        Scenario::dynamic(
            "stair",
            TerrainProfile::Stair {
                step_height: 0.05,
                step_width: 0.2,
            },
        ),
        Scenario::dynamic(
            "rough",
            TerrainProfile::Rough {
                amplitude: 0.01,
                correlation_length: 0.1,
                seed: 17,
            },
        ),
        Scenario::dynamic(
            "slope",
            TerrainProfile::Slope {
                angle: 5f64.to_radians(),
            },
        ),
        Scenario::stationary("stationary"),
    ]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: Vec<Scenario>,
}

/// Parse a scenario file: a TOML array of `[[scenario]]` tables.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::config("scenario file", e.message()))?;
    for s in &file.scenario {
        s.validate()?;
    }
    Ok(file.scenario)
}

pub fn scenarios_to_toml(scenarios: &[Scenario]) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        scenario: &'a [Scenario],
    }
    toml::to_string(&Out { scenario: scenarios }).expect("scenarios serialize")
}

/// One evaluation run: a scenario, the policy role and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub role: Role,
    pub seed: u64,
}

/// Physics and deployment constants shared by all evaluation runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    pub model: RobotModel,
    pub sim: SimConfig,
    pub episode: EpisodeConfig,
    pub noise: ObsNoise,
}

impl EvalContext {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        EvalContext {
            model: cfg.model.clone(),
            sim: cfg.sim.clone(),
            episode: cfg.episode,
            noise: cfg.noise,
        }
    }
}

impl Default for EvalContext {
    fn default() -> Self {
        EvalContext::from_config(&TrainConfig::desk())
    }
}

/// Where an actor input value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Onboard sensing: the observation and anything computed from its history.
    Sensor,
    /// Simulator ground truth that a real robot would not have.
    Simulator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tagged {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

/// Everything the actor consumes at one step, tagged by origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorFeed {
    pub obs: Tagged,
    pub latent: Tagged,
    pub load: Option<Tagged>,
}

/// Build the deployment actor input: z from the proprioceptive encoder, and
/// the load slot from the estimator (Ours) or the simulator (Oracle).
pub fn assemble_feed(bundle: &PolicyBundle, env: &Env) -> Result<ActorFeed> {
    let sensor = |values| Tagged {
        values,
        provenance: Provenance::Sensor,
    };
    let load = match bundle.flags.actor_load {
        ActorLoad::None => None,
        ActorLoad::Estimate => Some(sensor(bundle.estimate_load(&env.history)?)),
        ActorLoad::Truth => Some(Tagged {
            values: env.load_characteristics().0.to_vec(),
            provenance: Provenance::Simulator,
        }),
    };
    Ok(ActorFeed {
        obs: sensor(env.obs.0.to_vec()),
        latent: sensor(bundle.encode_proprioceptive(&env.history)?),
        load,
    })
}

/// Only the Oracle may see simulator quantities.
pub fn audit_feed(role: Role, feed: &ActorFeed) -> Result<()> {
    let leaks = [Some(&feed.obs), Some(&feed.latent), feed.load.as_ref()]
        .into_iter()
        .flatten()
        .any(|t| t.provenance == Provenance::Simulator);
    if leaks && role != Role::Oracle {
        return Err(Error::RoleMismatch(format!(
            "simulator-privileged input reached the {role} actor during evaluation"
        )));
    }
    Ok(())
}

/// What drives the joints.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Mean action of a trained policy.
    Policy(&'a PolicyBundle),
    /// All motors off.
    Limp,
}

/// Logged simulation state after one control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawStep {
    pub step: usize,
    pub time: f64,
    pub command: f64,
    pub base_x: f64,
    pub base_z: f64,
    pub pitch: f64,
    /// Pitch of the robot standing level on the terrain's mean incline.
    pub reference_pitch: f64,
    /// Base velocity along the base x axis.
    pub forward_velocity: f64,
    pub load_phase: LoadPhaseName,
    /// Load position along the base x axis (NaN once fallen).
    pub load_position: f64,
    /// Load velocity relative to the base frame (NaN once fallen).
    pub load_velocity: f64,
    pub verdict: VerdictName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadPhaseName {
    OnPlate,
    Airborne,
    Fallen,
}

impl From<LoadPhase> for LoadPhaseName {
    fn from(p: LoadPhase) -> Self {
        match p {
            LoadPhase::OnPlate => LoadPhaseName::OnPlate,
            LoadPhase::Airborne => LoadPhaseName::Airborne,
            LoadPhase::Fallen => LoadPhaseName::Fallen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictName {
    Running,
    Fell,
    Timeout,
    LoadFell,
    Diverged,
}

impl From<Termination> for VerdictName {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Running => VerdictName::Running,
            Termination::Fell => VerdictName::Fell,
            Termination::Timeout => VerdictName::Timeout,
            Termination::LoadFell => VerdictName::LoadFell,
            Termination::Diverged => VerdictName::Diverged,
        }
    }
}

impl VerdictName {
    pub fn name(self) -> &'static str {
        match self {
            VerdictName::Running => "running",
            VerdictName::Fell => "fell",
            VerdictName::Timeout => "timeout",
            VerdictName::LoadFell => "load_fell",
            VerdictName::Diverged => "diverged",
        }
    }
}

/// Per-step metrics, truncated at termination.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    /// |command − forward velocity| (m/s).
    pub tracking_error: Vec<f64>,
    /// pitch − reference pitch (rad).
    pub pitch_deviation: Vec<f64>,
    /// Load velocity in the base frame (m/s).
    pub load_velocity: Vec<f64>,
    pub load_position: Vec<f64>,
    pub verdict: VerdictName,
    pub command: f64,
    /// Steps the scenario was scheduled for.
    pub scheduled_steps: usize,
    pub control_dt: f64,
}

impl MetricSeries {
    pub fn from_raw(rows: &[RawStep], command: f64, scheduled_steps: usize, control_dt: f64) -> Self {
        MetricSeries {
            tracking_error: rows.iter().map(|r| (r.command - r.forward_velocity).abs()).collect(),
            pitch_deviation: rows.iter().map(|r| r.pitch - r.reference_pitch).collect(),
            load_velocity: rows.iter().map(|r| r.load_velocity).collect(),
            load_position: rows.iter().map(|r| r.load_position).collect(),
            verdict: rows.last().map_or(VerdictName::Running, |r| r.verdict),
            command,
            scheduled_steps,
            control_dt,
        }
    }

    pub fn len(&self) -> usize {
        self.tracking_error.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracking_error.is_empty()
    }

    /// The run lasted its scheduled duration.
    pub fn completed(&self) -> bool {
        self.verdict == VerdictName::Timeout
    }

    fn final_window(&self) -> Option<std::ops::Range<usize>> {
        let k = ((FINAL_WINDOW_S / self.control_dt).round() as usize).min(self.scheduled_steps);
        (self.completed() && self.len() >= k).then(|| self.len() - k..self.len())
    }

    /// Scalar summaries. Steps lost to an early termination count as
    /// standing still in the tracking error; the settling metrics are NaN
    /// unless the run completed.
    pub fn summary(&self) -> RunSummary {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let lost = self.scheduled_steps.saturating_sub(self.len()) as f64 * self.command.abs();
        let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
        let (final_pitch, final_load_speed) = match self.final_window() {
            Some(w) => (
                self.pitch_deviation[w.clone()].iter().fold(0.0, |m: f64, x| m.max(x.abs())),
                mean(&abs(&self.load_velocity[w])),
            ),
            None => (f64::NAN, f64::NAN),
        };
        RunSummary {
            tracking_error: (self.tracking_error.iter().sum::<f64>() + lost) / self.scheduled_steps.max(1) as f64,
            pitch_deviation: mean(&abs(&self.pitch_deviation)),
            load_speed: mean(&abs(&self.load_velocity)),
            final_pitch,
            final_load_speed,
            verdict: self.verdict,
        }
    }
}

/// Scalar results of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    /// Mean tracking error over the scheduled duration (m/s).
    pub tracking_error: f64,
    /// Mean |pitch deviation| over the recorded steps (rad).
    pub pitch_deviation: f64,
    /// Mean |load velocity| over the recorded steps (m/s).
    pub load_speed: f64,
    /// Largest |pitch deviation| in the final window (rad).
    pub final_pitch: f64,
    /// Mean |load velocity| in the final window (m/s).
    pub final_load_speed: f64,
    pub verdict: VerdictName,
}

impl RunSummary {
    pub const METRICS: [&'static str; 5] =
        ["tracking_error", "pitch_deviation", "load_speed", "final_pitch", "final_load_speed"];

    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "tracking_error" => self.tracking_error,
            "pitch_deviation" => self.pitch_deviation,
            "load_speed" => self.load_speed,
            "final_pitch" => self.final_pitch,
            "final_load_speed" => self.final_load_speed,
            _ => f64::NAN,
        }
    }
}

/// `a` beats `b` on a lower-is-better metric; NaN (no value) always loses.
pub fn lower_is_better(a: f64, b: f64) -> bool {
    !a.is_nan() && (b.is_nan() || a <= b)
}

/// A finished run with its raw log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub spec: ScenarioSpec,
    pub raw: Vec<RawStep>,
    pub series: MetricSeries,
}

fn reference_pitch(terrain: &TerrainProfile) -> f64 {
    match *terrain {
        TerrainProfile::Slope { angle } => angle,
        _ => 0.0,
    }
}

fn check_controller(spec: &ScenarioSpec, controller: &Controller) -> Result<()> {
    spec.scenario.validate()?;
    if let Controller::Policy(b) = controller {
        if b.role != spec.role {
            return Err(Error::RoleMismatch(format!(
                "scenario `{}` asks for role {}, checkpoint is {}",
                spec.scenario.name, spec.role, b.role
            )));
        }
        b.check_shapes()?;
    }
    Ok(())
}

/// Roll out one scenario with the mean action of `controller`.
pub fn run_scenario(spec: &ScenarioSpec, controller: Controller, ctx: &EvalContext) -> Result<RunRecord> {
    check_controller(spec, &controller)?;
    let sc = &spec.scenario;
    let steps = (sc.duration_s * ctx.sim.control_frequency).round() as usize;
    let history = match controller {
        Controller::Policy(b) => b.arch.history,
        Controller::Limp => 1,
    };
    let settings = EnvSettings {
        noise: ctx.noise,
        rewards: RewardConfig::default(),
        history,
        max_steps: steps,
        push_steps: None,
        push_speed: 0.0,
        action_scale: ctx.episode.action_scale,
        action_clip: ctx.episode.action_clip,
        fall_pitch: ctx.episode.fall_pitch,
        reward_scale: 1.0,
    };
    let draw = nominal_env(&ctx.model, &ctx.sim, &sc.terrain, spec.seed, &sc.load);
    let mut env = Env::new(0, settings, spec.seed, sc.terrain.kind(), sc.terrain, draw, sc.command);
    let dt = ctx.sim.control_dt();
    let reference = reference_pitch(&sc.terrain);
    // Mean actions never sample; the generator only satisfies the signature.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut raw = Vec::with_capacity(steps);
    loop {
        let out = match controller {
            Controller::Policy(b) => {
                let feed = assemble_feed(b, &env)?;
                audit_feed(spec.role, &feed)?;
                let obs = crate::policy::Observation(env.obs.0);
                let load = feed.load.as_ref().map(|t| t.values.as_slice());
                let (action, _) = b.act(&obs, &feed.latent.values, load, ActMode::Mean, &mut unused)?;
                env.step(&action)
            }
            Controller::Limp => {
                // Nothing holds a limp robot up, so its collapse is not a
                // verdict; the run ends when the load falls or time runs out.
                let mut out = env.step_limp();
                if out.verdict == Termination::Fell {
                    out.verdict = if env.load.state.fallen() {
                        Termination::LoadFell
                    } else if env.steps >= steps {
                        Termination::Timeout
                    } else {
                        Termination::Running
                    };
                }
                out
            }
        };
        let l = env.load_characteristics();
        let fallen = env.load.state.fallen();
        raw.push(RawStep {
            step: env.steps,
            time: env.steps as f64 * dt,
            command: sc.command,
            base_x: env.robot.base_position[0],
            base_z: env.robot.base_position[1],
            pitch: env.robot.pitch,
            reference_pitch: reference,
            forward_velocity: env.robot.base_velocity_local()[0],
            load_phase: env.load.state.phase.into(),
            load_position: if fallen { f64::NAN } else { l.position() },
            load_velocity: if fallen { f64::NAN } else { l.velocity() },
            verdict: out.verdict.into(),
        });
        if out.verdict.is_done() {
            break;
        }
    }
    let series = MetricSeries::from_raw(&raw, sc.command, steps, dt);
    Ok(RunRecord {
        spec: spec.clone(),
        raw,
        series,
    })
}

fn require_kind(spec: &ScenarioSpec, kind: ScenarioKind) -> Result<()> {
    if spec.scenario.kind != kind {
        return Err(Error::contract(format!(
            "scenario `{}` is {:?}, expected {kind:?}",
            spec.scenario.name, spec.scenario.kind
        )));
    }
    Ok(())
}

pub fn run_dynamic(spec: &ScenarioSpec, controller: Controller, ctx: &EvalContext) -> Result<RunRecord> {
    require_kind(spec, ScenarioKind::Dynamic)?;
    run_scenario(spec, controller, ctx)
}

pub fn run_stationary(spec: &ScenarioSpec, controller: Controller, ctx: &EvalContext) -> Result<RunRecord> {
    require_kind(spec, ScenarioKind::Stationary)?;
    run_scenario(spec, controller, ctx)
}

/// Raw trajectory log as CSV, one row per control step. Floats are written
/// in shortest round-trip form, so reading the file back is lossless.
pub fn write_raw_log<W: Write>(rows: &[RawStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("raw log", e))?;
    Ok(())
}

pub fn read_raw_log<R: Read>(input: R) -> Result<Vec<RawStep>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean ± std of one metric over the repeats of a cell, or a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scenario: String,
    pub role: Role,
    pub metric: &'static str,
    /// `None` when the role's checkpoint is missing or no run produced a value.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Runs that ended early; `None` for a missing role.
    pub falls: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<RunRecord>,
    pub missing: Vec<Role>,
}

impl ComparisonTable {
    /// Summaries of `scenario` for `role`, ordered by seed.
    pub fn summaries(&self, scenario: &str, role: Role) -> Vec<RunSummary> {
        let mut runs: Vec<_> = self
            .runs
            .iter()
            .filter(|r| r.spec.scenario.name == scenario && r.spec.role == role)
            .collect();
        runs.sort_by_key(|r| r.spec.seed);
        runs.iter().map(|r| r.series.summary()).collect()
    }

    /// CSV with columns scenario, role, metric, mean, std, falls; gaps are
    /// empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "role", "metric", "mean", "std", "falls"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.role.name().to_string(),
                r.metric.to_string(),
                opt(r.mean),
                opt(r.std),
                r.falls.map(|f| f.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("comparison table", e))?;
        Ok(())
    }

    /// Write `comparison.csv` and one raw log per run under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let raw_dir = dir.join("raw");
        std::fs::create_dir_all(&raw_dir).map_err(|e| Error::io(&raw_dir, e))?;
        let path = dir.join("comparison.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_csv(file)?;
        for run in &self.runs {
            let path = raw_dir.join(raw_log_name(&run.spec));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_raw_log(&run.raw, std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}

pub fn raw_log_name(spec: &ScenarioSpec) -> String {
    format!("{}_{}_seed{}.csv", spec.scenario.name, spec.role.name(), spec.seed)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Run every (scenario, role, seed) cell in parallel. Seeds are `seed`,
/// `seed + 1`, … for `repeats` runs. Roles without a checkpoint appear as
/// gaps; a checkpoint filed under the wrong role label is refused.
pub fn compare_policies(
    scenarios: &[Scenario],
    checkpoints: &BTreeMap<Role, PolicyBundle>,
    repeats: usize,
    seed: u64,
    ctx: &EvalContext,
) -> Result<ComparisonTable> {
    if repeats == 0 {
        return Err(Error::contract("repeats must be > 0"));
    }
    for (label, b) in checkpoints {
        if b.role != *label {
            return Err(Error::RoleMismatch(format!(
                "checkpoint filed as {label} was trained as {}",
                b.role
            )));
        }
        b.check_shapes()?;
    }
    let mut specs = Vec::new();
    for sc in scenarios {
        sc.validate()?;
        for role in checkpoints.keys() {
            for r in 0..repeats as u64 {
                specs.push(ScenarioSpec {
                    scenario: sc.clone(),
                    role: *role,
                    seed: seed + r,
                });
            }
        }
    }
    let runs = specs
        .par_iter()
        .map(|spec| run_scenario(spec, Controller::Policy(&checkpoints[&spec.role]), ctx))
        .collect::<Result<Vec<_>>>()?;

    let missing: Vec<Role> = Role::ALL.into_iter().filter(|r| !checkpoints.contains_key(r)).collect();
    let mut table = ComparisonTable {
        rows: Vec::new(),
        runs,
        missing,
    };
    for sc in scenarios {
        for role in Role::ALL {
            let summaries = table.summaries(&sc.name, role);
            let present = checkpoints.contains_key(&role);
            let falls = present.then(|| summaries.iter().filter(|s| s.verdict != VerdictName::Timeout).count());
            for metric in RunSummary::METRICS {
                let values: Vec<f64> = summaries.iter().map(|s| s.metric(metric)).collect();
                let (mean, std) = mean_std(&values);
                table.rows.push(ComparisonRow {
                    scenario: sc.name.clone(),
                    role,
                    metric,
                    mean,
                    std,
                    falls,
                });
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_matrix_round_trips_through_toml() {
        let s = standard_scenarios();
        assert_eq!(parse_scenarios(&scenarios_to_toml(&s)).unwrap(), s);
    }

    #[test]
    fn unknown_scenario_key_is_rejected() {
        let text = scenarios_to_toml(&[Scenario::stationary("drop")]).replace("duration_s", "duration");
        assert!(matches!(parse_scenarios(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn stationary_run_is_1500_steps() {
        let ctx = EvalContext::default();
        let sc = Scenario::stationary("drop");
        assert_eq!((sc.duration_s * ctx.sim.control_frequency).round() as usize, 1500);
    }

    #[test]
    fn nan_loses_every_comparison() {
        assert!(lower_is_better(0.1, 0.2));
        assert!(!lower_is_better(0.3, 0.2));
        assert!(lower_is_better(0.3, f64::NAN));
        assert!(!lower_is_better(f64::NAN, 0.2));
        assert!(!lower_is_better(f64::NAN, f64::NAN));
    }

    #[test]
    fn summary_counts_lost_steps_as_standing_still() {
        let row = |v: f64, verdict| RawStep {
            step: 0,
            time: 0.0,
            command: 1.0,
            base_x: 0.0,
            base_z: 0.0,
            pitch: 0.0,
            reference_pitch: 0.0,
            forward_velocity: v,
            load_phase: LoadPhaseName::OnPlate,
            load_position: 0.0,
            load_velocity: 0.0,
            verdict,
        };
        let rows = [row(1.0, VerdictName::Running), row(0.5, VerdictName::Fell)];
        let s = MetricSeries::from_raw(&rows, 1.0, 4, 0.02).summary();
        // (0 + 0.5 + 1 + 1) / 4
        assert_eq!(s.tracking_error, 0.625);
        assert!(s.final_pitch.is_nan());
        assert_eq!(s.verdict, VerdictName::Fell);
    }
}

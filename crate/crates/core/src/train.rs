//! Parallel-environment training: domain randomization, terrain curriculum,
//! the teacher-student phase and the student reinforce phase.

mod config;
mod curriculum;
mod env;
mod losses;
mod randomize;
mod runner;

pub use config::{
    CurriculumConfig, DomainRandomizationRanges, EpisodeConfig, ReinforceConfig, SupervisedConfig, TrainConfig,
};
pub use curriculum::{terrain_for_level, update_curriculum, CurriculumEvent, CurriculumState, EpisodeSummary};
pub use env::{check_termination, Env, EnvSettings, StepOutcome, Termination};
pub use losses::{
    load_estimation_grad, load_estimation_loss, reconstruction_grad, reconstruction_loss, supervised_epochs,
};
pub use randomize::{apply_params, nominal_env, randomize_env, EnvDraw};
pub use runner::{IterationLog, Phase, Trainer, TrainerState};

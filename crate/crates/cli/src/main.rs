use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use loadadapt::eval::{compare_policies, parse_scenarios, standard_scenarios, EvalContext};
use loadadapt::persist::{
    describe_checkpoint, load_checkpoint, load_config, output_root, parse_config, train_run, Overrides,
};
use loadadapt::policy::Role;
use loadadapt::train::TrainConfig;

#[derive(Parser)]
#[command(name = "loadadapt", version, about = "Train and evaluate load-carrying quadruped policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy: teacher-student phase, then the reinforce phase.
    Train(TrainArgs),
    /// Compare trained policies over a scenario matrix.
    Eval(EvalArgs),
    /// Print the summary of a checkpoint file.
    Inspect {
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct ConfigSource {
    /// Built-in configuration: `desk` or `paper`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigSource {
    /// The configuration and its text; `desk` when neither flag is given.
    fn load(&self) -> Result<(TrainConfig, String)> {
        match (&self.config, &self.preset) {
            (Some(path), _) => Ok(load_config(path)?),
            (None, preset) => {
                let text = format!("preset = \"{}\"\n", preset.as_deref().unwrap_or("desk"));
                Ok((parse_config(&text)?, text))
            }
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    envs: Option<usize>,
    /// Teacher-phase iterations; the reinforce phase runs a fifth as many.
    #[arg(long)]
    iters: Option<usize>,
    /// Policy family to train (nlw, lw, oracle, ours).
    #[arg(long)]
    role: Option<Role>,
    /// Output root; defaults to $LOADADAPT_OUT, then `runs`.
    #[arg(long, env = "LOADADAPT_OUT")]
    out: Option<PathBuf>,
    /// Run directory name under the output root; defaults to `<role>-seed<seed>`.
    #[arg(long)]
    name: Option<String>,
    /// Continue the run in the target directory from its newest checkpoint.
    #[arg(long)]
    resume: bool,
    /// Print every n-th iteration.
    #[arg(long, default_value_t = 10)]
    print_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint for a role, as `role=path`; repeat for each role.
    #[arg(long = "checkpoint", value_parser = parse_role_path)]
    checkpoints: Vec<(Role, PathBuf)>,
    /// Scenario file; defaults to the standard five-scenario matrix.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// First evaluation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Configuration supplying the robot and simulator constants.
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory for comparison.csv and raw logs; defaults to
    /// `eval` under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_role_path(s: &str) -> std::result::Result<(Role, PathBuf), String> {
    let (role, path) = s.split_once('=').ok_or_else(|| format!("expected role=path, got `{s}`"))?;
    let role: Role = role.parse().map_err(|e| format!("{e}"))?;
    Ok((role, PathBuf::from(path)))
}

fn train(args: TrainArgs) -> Result<()> {
    let (mut cfg, text) = args.source.load()?;
    let overrides = Overrides {
        role: args.role,
        seed: args.seed,
        envs: args.envs,
        iterations: args.iters,
    };
    overrides.apply(&mut cfg)?;
    let name = args.name.unwrap_or_else(|| format!("{}-seed{}", cfg.role, cfg.seed));
    let dir = output_root(args.out.as_deref()).join(name);
    println!(
        "training {} seed {} with {} envs for {} + {} iterations into {}",
        cfg.role,
        cfg.seed,
        cfg.envs,
        cfg.teacher_iterations,
        cfg.reinforce_iterations,
        dir.display()
    );
    let start = Instant::now();
    let every = args.print_every.max(1);
    let manifest = train_run(cfg, &text, overrides, &dir, args.resume, &mut |row| {
        if (row.iteration + 1) % every == 0 {
            println!(
                "{:>6} {:<9} reward {:>9.3} length {:>6.1} kl {:.4} lr {:.1e} rec {:.4} est {} [{:.0}s]",
                row.iteration + 1,
                row.phase.name(),
                row.mean_episode_reward,
                row.mean_episode_length,
                row.mean_kl,
                row.learning_rate,
                row.reconstruction_loss,
                row.estimation_loss.map_or("-".to_string(), |v| format!("{v:.3}")),
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    if let Some(last) = manifest.checkpoints.last() {
        println!("final checkpoint {} sha256 {}", dir.join(&last.file).display(), last.sha256);
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let (cfg, _) = args.source.load()?;
    let scenarios = match &args.scenarios {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_scenarios(&text)?
        }
        None => standard_scenarios(),
    };
    let mut bundles = BTreeMap::new();
    for (role, path) in &args.checkpoints {
        if bundles.contains_key(role) {
            bail!("role {role} was given two checkpoints");
        }
        if !path.exists() {
            eprintln!("warning: checkpoint {} for {role} is missing; its cells stay empty", path.display());
            continue;
        }
        let ck = load_checkpoint(path)?;
        bundles.insert(*role, ck.state.bundle);
    }
    for role in Role::ALL {
        if !args.checkpoints.iter().any(|(r, _)| *r == role) {
            eprintln!("warning: no checkpoint for {role}; its cells stay empty");
        }
    }
    if bundles.is_empty() {
        bail!("no checkpoints to evaluate");
    }
    let ctx = EvalContext::from_config(&cfg);
    let table = compare_policies(&scenarios, &bundles, args.repeats, args.seed, &ctx)?;
    let dir = args.out.unwrap_or_else(|| output_root(None).join("eval"));
    table.save(&dir)?;
    print_table(&dir.join("comparison.csv"))?;
    Ok(())
}

fn print_table(path: &Path) -> Result<()> {
    print!("{}", std::fs::read_to_string(path)?);
    println!("written to {}", path.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    print!("{}", describe_checkpoint(&bytes)?);
    Ok(())
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

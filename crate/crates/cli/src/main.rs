use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use swarmrace::config::{RunConfig, DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_VAR};
use swarmrace::env::EnvConfig;
use swarmrace::eval::{check_checkpoint, evaluate, write_records, EvalOptions};
use swarmrace::policy::Checkpoint;
use swarmrace::track::TrackSpec;
use swarmrace::trainer::Trainer;

#[derive(Parser)]
#[command(name = "swarmrace", version, about = "Multi-drone waypoint racing with shared-policy PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a shared policy.
    Train {
        /// Run configuration (TOML). Omitted keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Override one key, e.g. `--set trainer.gamma=0.99`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Rollout worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint over noisy trials.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Track file, or `builtin:<name>`.
        #[arg(long)]
        track: String,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write trajectory files for the first K trials.
        #[arg(long, value_name = "K", default_value_t = 0)]
        export_trajectories: usize,
        /// Run configuration whose `env` section describes the evaluation environment.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the summary, per-trial records and trajectories.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the contents of a checkpoint.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            overrides,
            workers,
            seed,
        } => train(&config, overrides, workers, seed),
        Command::Eval {
            ckpt,
            track,
            trials,
            seed,
            export_trajectories,
            config,
            out,
            workers,
        } => eval(&ckpt, &track, trials as usize, seed, export_trajectories, config, out, workers),
        Command::Inspect { ckpt } => inspect(&ckpt),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn train(config: &Path, mut overrides: Vec<String>, workers: Option<usize>, seed: Option<u64>) -> Result<()> {
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(w) = workers {
        overrides.push(format!("trainer.workers={w}"));
    }
    let cfg = RunConfig::load(config, &overrides).with_context(|| format!("loading {}", config.display()))?;
    let track = cfg.load_track(config.parent())?;
    let out = cfg.output_path();
    let resolved = cfg.write_resolved(&out)?;
    log::info!("resolved configuration written to {}", resolved.display());

    let mut trainer = Trainer::new(&track, &cfg.env, &cfg.trainer, cfg.seed)?;
    trainer.run(Some(&out), |r| {
        log::info!(
            "update {} steps {} episodes {} reward {:.3} waypoints {:.2} length {:.1}",
            r.update,
            r.env_steps,
            r.episodes,
            r.mean_episode_reward,
            r.mean_waypoints,
            r.mean_episode_length
        )
    })?;
    println!("{}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    ckpt_path: &Path,
    track: &str,
    trials: usize,
    seed: u64,
    export: usize,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let env = match &config {
        Some(p) => RunConfig::load(p, &[])?.env,
        None => EnvConfig {
            n_drones: ckpt.n_drones,
            window: ckpt.window,
            ..Default::default()
        },
    };
    check_checkpoint(&ckpt, &env)?;
    let track = TrackSpec::resolve(track)?;
    if export > trials {
        bail!("--export-trajectories {export} exceeds --trials {trials}");
    }
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let result = evaluate(
        &ckpt.params,
        &track,
        &env,
        &EvalOptions {
            trials,
            base_seed: seed,
            workers,
            record_trajectories: export,
        },
    )?;

    let out = out.unwrap_or_else(|| {
        let root = std::env::var(OUTPUT_ROOT_VAR).unwrap_or_else(|_| DEFAULT_OUTPUT_ROOT.into());
        let stem = ckpt_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        PathBuf::from(root).join(format!("eval-{stem}-{}-seed{seed}", track.name))
    });
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let summary = result.summary.to_toml_string();
    std::fs::write(out.join("summary.toml"), &summary)?;
    write_records(out.join("trials.csv"), &result.records)?;
    for (k, t) in result.trajectories.iter().enumerate() {
        t.save(out.join(format!("trajectory_{k:04}.csv")))?;
    }
    println!("{summary}");
    println!("# written to {}", out.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    print!("{}", ckpt.describe());
    Ok(())
}

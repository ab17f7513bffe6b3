use std::path::PathBuf;
use std::process::ExitCode;

use biflow::{Direction, Error, Result};
use biflow_cli::commands;
use biflow_cli::config::ExperimentConfig;
use clap::{Args, Parser, Subcommand};

/// Bi-flow video generation experiments.
#[derive(Parser)]
#[command(name = "biflow", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reseeds every random stream (data, model, training, sampling).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Accepted for scripts; every run is already reproducible bit for bit.
    #[arg(long)]
    deterministic: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with its train/test split.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Continue from `<out>/model.bfck`.
        #[arg(long)]
        resume: bool,
    },
    /// Roll a checkpoint out from test frames.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Generate backward in time (bi-flow only).
        #[arg(long)]
        backward: bool,
    },
    /// Sliding-window distances and drift for rollout groups.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Rollout group directories.
        #[arg(long, num_args = 1.., required = true)]
        rollouts: Vec<PathBuf>,
    },
    /// Charts from one or more summary CSVs.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        summary: Vec<PathBuf>,
    },
    /// Data, training, rollouts, evaluation and plots for every method.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` lacks `=`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.reseed(s);
    }
    cfg.validate()?;
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        // Fails only if the pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { common } => {
            let cfg = resolve(&common)?;
            let d = commands::gen_data(&cfg, &common.out)?;
            println!(
                "wrote {} videos ({} train, {} test) to {}",
                d.videos.len(),
                d.split.train.len(),
                d.split.test.len(),
                common.out.display()
            );
        }
        Cmd::Train {
            common,
            data,
            resume,
        } => {
            let cfg = resolve(&common)?;
            let r = commands::train(&cfg, &data, &common.out, resume)?;
            println!(
                "trained {} to step {} (recent loss {:.6}); checkpoint {}",
                cfg.model.kind,
                r.steps,
                r.final_loss,
                r.checkpoint.display()
            );
        }
        Cmd::Rollout {
            common,
            checkpoint,
            data,
            backward,
        } => {
            let mut cfg = resolve(&common)?;
            if backward {
                cfg.sampling.direction = Direction::Backward;
            }
            for g in commands::rollout_cmd(&cfg, &checkpoint, &data, &common.out)? {
                println!("{}", g.display());
            }
        }
        Cmd::Evaluate {
            common,
            data,
            rollouts,
        } => {
            let cfg = resolve(&common)?;
            let ev = commands::evaluate_cmd(
                &rollouts,
                &data,
                &common.out,
                cfg.eval.window,
                cfg.eval.stride,
            )?;
            print!("{}", commands::summary_csv(&ev.rows));
        }
        Cmd::Plot { common, summary } => {
            resolve(&common)?;
            let rows = commands::plot_cmd(&summary, &common.out)?;
            println!(
                "plotted {} groups into {}",
                rows.len(),
                common.out.display()
            );
        }
        Cmd::Sweep { common } => {
            let cfg = resolve(&common)?;
            let ev = commands::sweep(&cfg, &common.out)?;
            print!("{}", commands::summary_csv(&ev.rows));
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } | Error::Training { .. } => 3,
        Error::Io(_) | Error::Format { .. } => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

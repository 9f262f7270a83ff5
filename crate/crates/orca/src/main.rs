use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orca::commands::{self, SynthDims};
use orca::config::{Overrides, RunConfig};
use orca::Result;
use orca_core::gradcheck::format_report;
use orca_core::prompt::PromptVariant;

#[derive(Parser, Debug)]
#[command(name = "orca", version, about = "Gridded significant wave height from sparse buoys")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "orca.conf")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Weight of the surrogate-field regularizer.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Prompt variant: full, light or no-features.
    #[arg(long, global = true)]
    prompt: Option<PromptVariant>,
    /// Drop the location token.
    #[arg(long, global = true)]
    no_location: bool,
    /// Steps to draw heatmaps for, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    times: Vec<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene with a ready-to-run config.
    Synth {
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
        #[arg(long, default_value_t = 32)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        buoys: usize,
        #[arg(long, default_value_t = 3)]
        features: usize,
    },
    /// Train on the configured buoys and write weights and history.
    Train,
    /// Estimate the full field from trained weights.
    Estimate {
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Score an estimate field against buoy observations.
    Eval {
        #[arg(long)]
        estimate: Option<PathBuf>,
        /// Score every step instead of the test segment.
        #[arg(long)]
        all_steps: bool,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        alpha: cli.alpha,
        prompt: cli.prompt,
        no_location: cli.no_location,
        out: cli.out.clone(),
    });
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        &Command::Synth { rows, cols, steps, buoys, features } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
            let dims = SynthDims { rows, cols, steps, buoys, features };
            let manifest = commands::cmd_synth(cli.seed.unwrap_or(0), dims, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let report = commands::cmd_train(&cfg)?;
            let best = &report.history[report.best_epoch];
            println!(
                "{} epochs, best epoch {} (val L1 {:.6}), wrote {} and {}",
                report.history.len(),
                report.best_epoch,
                best.val_l1,
                report.weights.display(),
                report.history_path.display()
            );
        }
        Command::Estimate { weights } => {
            let cfg = load_config(cli)?;
            let weights = weights.clone().unwrap_or_else(|| cfg.out_dir.join(commands::WEIGHTS_FILE));
            let report = commands::cmd_estimate(&cfg, &weights, &cli.times)?;
            println!(
                "wrote {}, {} buoy tables, {} heatmaps",
                report.estimate.display(),
                report.buoy_csvs.len(),
                report.heatmaps.len()
            );
        }
        Command::Eval { estimate, all_steps } => {
            let cfg = load_config(cli)?;
            let estimate = estimate.clone().unwrap_or_else(|| cfg.out_dir.join(commands::ESTIMATE_FILE));
            let report = commands::cmd_eval(&cfg, &estimate, *all_steps)?;
            print!("{}", std::fs::read_to_string(&report.path).unwrap_or_default());
        }
        Command::Gradcheck { corrupt } => {
            let report = commands::cmd_gradcheck(cli.seed.unwrap_or(7), corrupt.clone())?;
            print!("{}", format_report(&report));
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}

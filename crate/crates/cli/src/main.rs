mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpd_core::Error;

#[derive(Parser)]
#[command(name = "mpd", version, about = "Motion planning with diffusion-model trajectory priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random 2D environment and robot description.
    GenEnv(Common),
    /// Build an expert trajectory dataset in an environment.
    GenData(Common),
    /// Train a denoiser on a dataset.
    Train(Common),
    /// Plan a batch per context and save the trajectories.
    Plan(Common),
    /// Run a benchmark and write the metric report.
    Bench(Common),
    /// Draw saved plans as SVG.
    Render(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created when missing.
    #[arg(long)]
    out: PathBuf,
}

type Handler = fn(&Path, u64, &Path) -> mpd_core::Result<()>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (handler, args): (Handler, Common) = match cli.command {
        Command::GenEnv(a) => (commands::gen_env, a),
        Command::GenData(a) => (commands::gen_data, a),
        Command::Train(a) => (commands::train_model, a),
        Command::Plan(a) => (commands::plan, a),
        Command::Bench(a) => (commands::bench, a),
        Command::Render(a) => (commands::render, a),
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::from(2);
    }
    match handler(&args.config, args.seed, &args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

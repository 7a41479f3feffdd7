use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use lightcone_cli::pipeline::{self, Command, RunOptions};

/// Causal frame synthesis on a hyperbolic latent space-time.
#[derive(Parser)]
#[command(name = "lightcone", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit the frame embedding; writes a checkpoint and a loss CSV.
    Train(Common),
    /// Generate the procedural sprite dataset.
    #[command(name = "gen-data")]
    GenData(Common),
    /// Acceptance rates of cone-filtered samples over growing horizons.
    Experiment1(Common),
    /// Roll light cones forward and synthesize a future frame.
    Predict(Common),
    /// Decode a gallery of reachable states at a horizon.
    Probe(Common),
    /// Estimate the cone aperture from data.
    Aperture(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key=value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `out_dir`, else runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full-scale run: 10,000 sequences for gen-data, 100,000 samples for
    /// experiment1.
    #[arg(long)]
    full_scale: bool,
}

fn main() {
    let cli = Cli::parse();
    let (cmd, common) = match cli.cmd {
        Sub::Train(c) => (Command::Train, c),
        Sub::GenData(c) => (Command::GenData, c),
        Sub::Experiment1(c) => (Command::Experiment1, c),
        Sub::Predict(c) => (Command::Predict, c),
        Sub::Probe(c) => (Command::Probe, c),
        Sub::Aperture(c) => (Command::Aperture, c),
    };
    let opts = RunOptions {
        config: common.config,
        seed: common.seed,
        out: common.out,
        full_scale: common.full_scale,
    };
    if let Err(e) = pipeline::run(cmd, &opts) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

//! `penumbra`: rendering, inversion, diffusion and benchmarking from the shell.

mod bench;
mod common;
mod defaults;
mod invert;
mod manifest;
mod render;
mod ssd;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use defaults::Defaults;

#[derive(Debug, Parser)]
#[command(
    name = "penumbra",
    version,
    about = "Passive non-line-of-sight reconstruction from penumbra photographs"
)]
struct Cli {
    /// Cap on worker threads; 1 makes every command bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Defaults file replacing the built-in one.
    #[arg(long, global = true)]
    defaults: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a scene configuration file.
    Scene(render::SceneArgs),
    /// Render a penumbra photograph from an occluder and an emitter image.
    Render(render::RenderArgs),
    /// Recover occupancy and emitter by alternating minimization.
    InvertGrad(invert::InvertArgs),
    /// Shadow-conditioned point-cloud diffusion.
    #[command(subcommand)]
    Ssd(ssd::SsdCommand),
    /// Sparse versus dense visibility assembly time and memory.
    Bench(bench::BenchArgs),
    /// Robustness sweep over background levels.
    Sweep(sweep::SweepArgs),
}

pub struct Context {
    pub defaults: Defaults,
    pub threads: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let ctx = Context {
        defaults: Defaults::load(cli.defaults.as_deref())?,
        threads: cli.threads,
    };
    match cli.command {
        Command::Scene(a) => render::scene(&ctx, a),
        Command::Render(a) => render::render(&ctx, a),
        Command::InvertGrad(a) => invert::invert(&ctx, a),
        Command::Ssd(c) => ssd::run(&ctx, c),
        Command::Bench(a) => bench::bench(&ctx, a),
        Command::Sweep(a) => sweep::sweep(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(common::exit_code(&e))
        }
    }
}

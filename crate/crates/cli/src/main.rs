mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use commands::Run;
use config::RunConfig;
use error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Material quantities over a temperature grid.
    Params,
    /// Minimized texture with beta(r) and U(r) plots.
    Texture,
    /// Texture plus its NMR spectrum and features.
    Spectrum,
    /// Fit T, lambda_HV and dH/H to a measured spectrum.
    Fit,
    /// Transition scans in Omega or T.
    Scan,
}

/// Flare-out textures and NMR spectra of rotating 3He-B.
#[derive(Debug, Parser)]
#[command(name = "texlab", version)]
struct Cli {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `section.key=value` overrides of the config file.
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(&cli.config, &cli.overrides)?;
    if cfg.output.workers > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.output.workers).build_global();
    }
    let (name, f): (&'static str, fn(&mut Run) -> Result<(), CliError>) = match cli.command {
        Command::Params => ("params", commands::cmd_params),
        Command::Texture => ("texture", commands::cmd_texture),
        Command::Spectrum => ("spectrum", commands::cmd_spectrum),
        Command::Fit => ("fit", commands::cmd_fit),
        Command::Scan => ("scan", commands::cmd_scan),
    };
    let mut r = Run::new(name, &cfg, &cli.out)?;
    f(&mut r)?;
    r.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("texlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

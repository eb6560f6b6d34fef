use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adiaqnn::commands::{self, Command, RunOptions};
use adiaqnn::config::parse_config;
use adiaqnn::Error;

#[derive(Parser)]
#[command(name = "adiaqnn", version, about = "Adiabatic gates on the 8-ion quantum neural network")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (else $ADIAQNN_OUT, else the config's `out`, else ./adiaqnn-out).
    #[arg(long, env = "ADIAQNN_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Lowest levels, gaps and avoided crossings along the schedule.
    Spectrum(Common),
    /// Gate fidelity traces, optionally swept over noise.
    Fidelity(Common),
    /// ‖dH/ds‖/g² profile and the adiabatic time bound.
    Adiabaticity(Common),
    /// Grid search for a schedule preset.
    Calibrate(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) | Error::Json(_) => 2,
        Error::CalibrationFailed(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, c) = match cli.cmd {
        Cmd::Spectrum(c) => (Command::Spectrum, c),
        Cmd::Fidelity(c) => (Command::Fidelity, c),
        Cmd::Adiabaticity(c) => (Command::Adiabaticity, c),
        Cmd::Calibrate(c) => (Command::Calibrate, c),
    };
    if let Some(n) = c.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let cfg = match parse_config(&c.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let out_dir = c
        .out
        .or_else(|| cfg.out.as_ref().map(|p| cfg.resolve_path(p)))
        .unwrap_or_else(|| PathBuf::from("adiaqnn-out"));
    let opts = RunOptions { out_dir, seed: c.seed, config_path: Some(c.config) };
    match commands::run(cmd, &cfg, &opts) {
        Ok(s) => {
            for l in &s.lines {
                println!("{l}");
            }
            println!("wrote {} files to {}", s.outputs.len() + 1, opts.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Command-line interface: thin dispatch over the [`crate::pipeline`] and
//! [`crate::figures`] stages.
//!
//! Exit codes: 0 on success (including reconstructions that stop on the
//! iteration budget), 1 for usage errors, 3 for diverging solves, and 2 for
//! any other runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::figures;
use crate::pipeline::{self, Artifacts, ModelSelect};

/// Joint dynamic-MRI reconstruction and motion estimation on synthetic
/// cine phantoms.
///
/// A single TOML configuration drives every stage; omitted keys fall back
/// to built-in defaults, so all commands run without any flags. Artifacts
/// are written to the configured output directory and are deterministic,
/// byte-for-byte, for a fixed configuration.
#[derive(Debug, Parser)]
#[command(name = "cineflow", version)]
pub struct Cli {
    /// Path to a TOML experiment configuration (omit for defaults).
    #[arg(short, long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory override (defaults to the config's `output.dir`).
    #[arg(short, long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the phantom, coil maps, sampling mask, and k-space data.
    Simulate,
    /// Reconstruct images (and velocities) from the simulated k-space data.
    Reconstruct {
        /// Models to run (default: all of fw, dt, of, cheat-of).
        #[arg(short, long, value_enum, value_delimiter = ',')]
        model: Vec<ModelSelect>,
    },
    /// Score stored reconstructions against the ground truth over the
    /// dynamic-region mask.
    Evaluate,
    /// Random-search a model's regularization parameters; writes a
    /// leaderboard CSV per model.
    Sweep {
        /// Models to sweep (default: all of fw, dt, of, cheat-of).
        #[arg(short, long, value_enum, value_delimiter = ',')]
        model: Vec<ModelSelect>,
        /// Number of points per model (overrides the config's budget).
        #[arg(short, long)]
        budget: Option<usize>,
        /// Sampling seed (overrides the config's sweep seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render PNG figures from the stored artifacts.
    Figures,
}

/// Parses arguments and runs the selected command, mapping every failure
/// onto the documented exit codes.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // parse errors print to stderr and exit as usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn effective_config(cli_config: &Option<PathBuf>, cli_out: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = match cli_config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = cli_out {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn models_or_all(models: Vec<ModelSelect>) -> Vec<ModelSelect> {
    if models.is_empty() {
        ModelSelect::ALL.to_vec()
    } else {
        models
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = effective_config(&cli.config, &cli.out)?;
    match cli.command {
        Command::Simulate => {
            let arts = pipeline::simulate(&cfg)?;
            let p = &cfg.phantom;
            println!(
                "simulated {}x{}x{} phantom ({} coils, eta = {}); artifacts in {}",
                p.nt,
                p.nx,
                p.ny,
                p.n_coils,
                cfg.noise.eta,
                arts.dir().display()
            );
        }
        Command::Reconstruct { model } => {
            let arts = Artifacts::for_config(&cfg);
            for m in models_or_all(model) {
                let rec = pipeline::reconstruct_model(&cfg, m)?;
                let outer = rec.trace.last().map(|r| r.outer_iter).unwrap_or(0);
                println!(
                    "{}: {} outer iteration(s), wrote {}",
                    m.label(),
                    outer,
                    arts.recon(m).display()
                );
            }
        }
        Command::Evaluate => {
            let scores = pipeline::evaluate(&cfg)?;
            for s in &scores {
                println!(
                    "{:<8} psnr {:7.3} +- {:.3} dB   ssim {:.4} +- {:.4}",
                    s.model.label(),
                    s.report.mean_psnr,
                    s.report.std_psnr,
                    s.report.mean_ssim,
                    s.report.std_ssim
                );
            }
            println!("wrote {}", Artifacts::for_config(&cfg).summary().display());
        }
        Command::Sweep { model, budget, seed } => {
            if let Some(b) = budget {
                cfg.sweep.budget = b;
            }
            if let Some(s) = seed {
                cfg.sweep.seed = s;
            }
            cfg.validate()?;
            let arts = Artifacts::for_config(&cfg);
            for m in models_or_all(model) {
                let outcome = pipeline::sweep(&cfg, m)?;
                let best = outcome.best();
                println!(
                    "{}: best psnr {:.3} dB (point {} of {}), leaderboard {}",
                    m.label(),
                    best.mean_psnr,
                    best.point,
                    outcome.rows.len(),
                    arts.sweep_leaderboard(m).display()
                );
            }
        }
        Command::Figures => {
            let written = figures::render(&cfg)?;
            println!(
                "wrote {} figure(s) to {}",
                written.len(),
                Artifacts::for_config(&cfg).dir().join("figures").display()
            );
        }
    }
    Ok(())
}

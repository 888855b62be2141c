use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use irsfl::cli::{cmd_evaluate, cmd_generate, cmd_overhead, cmd_train};
use irsfl::config::ExperimentConfig;
use irsfl::Error;

/// Channel estimation for IRS-assisted massive MIMO with federated learning.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the training dataset.
    Generate(Common),
    /// Train the CNN (centralized or federated) and write checkpoint + round log.
    Train(Common),
    /// NMSE of CNN, LS and LMMSE over held-out trials.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Score the true channels in place of CNN predictions.
        #[arg(long)]
        oracle: bool,
    },
    /// Transmission overhead of centralized vs federated training.
    Overhead(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let cfg = ExperimentConfig::load(&common.config)?;
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load(&c)?;
            let s = cmd_generate(&cfg)?;
            println!("samples {}", s.samples);
            for (k, n) in s.per_user.iter().enumerate() {
                println!("user {k}: {n}");
            }
            println!("wrote {}", cfg.dataset.display());
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let records = cmd_train(&cfg)?;
            if let Some(last) = records.last() {
                println!(
                    "{} rounds, final loss {:.6e}, validation RMSE {:.6e}",
                    records.len(),
                    last.loss,
                    last.val_rmse
                );
            }
            println!("wrote {} and {}", cfg.checkpoint.display(), cfg.train_log.display());
        }
        Command::Evaluate { common, oracle } => {
            let cfg = load(&common)?;
            for r in cmd_evaluate(&cfg, oracle)? {
                println!(
                    "{:>6} snr {:>6} dB  m_bar {:>3}  nmse {:.4e}",
                    r.report.method.to_string(),
                    r.snr_db,
                    r.m_bar,
                    r.report.nmse
                );
            }
            println!("wrote {}", cfg.results.display());
        }
        Command::Overhead(c) => {
            let cfg = load(&c)?;
            let s = cmd_overhead(&cfg)?;
            println!("parameters (P)  {}", s.report.parameters);
            println!("storage count   {}", s.storage_count);
            println!("dataset size    {}", s.samples);
            println!("T_CL            {}", s.report.t_cl);
            println!("T_FL            {}", s.report.t_fl);
            println!("T_CL / T_FL     {:.4}", s.report.ratio);
            println!("wrote {}", cfg.overhead.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

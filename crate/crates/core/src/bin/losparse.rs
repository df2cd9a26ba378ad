use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use losparse::io::{cmd_decompose, cmd_evaluate, cmd_report, cmd_spectrum, cmd_train};
use losparse::{CompressionBudget, Result};

#[derive(Parser)]
#[command(name = "losparse", version, about = "Low-rank plus sparse weight compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split every dense matrix of a checkpoint into U, V and S.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        total_ratio: f64,
        #[arg(long)]
        lowrank_ratio: f64,
    },
    /// Write the singular values of every weight matrix as CSV.
    Spectrum {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pretrain, compress and write the run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the validation loss of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge run directories into one comparison table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Decompose {
            input,
            output,
            total_ratio,
            lowrank_ratio,
        } => {
            let budget = CompressionBudget::new(total_ratio, lowrank_ratio)?;
            for row in cmd_decompose(&input, &output, budget)? {
                println!(
                    "{} {}x{} rank {} residual {:e}",
                    row.name, row.rows, row.cols, row.rank, row.residual
                );
            }
        }
        Command::Spectrum { input, output } => {
            let rows = cmd_spectrum(&input, &output)?;
            println!("wrote {} singular values to {}", rows.len(), output.display());
        }
        Command::Train { config, output } => {
            let run = cmd_train(&config, &output)?;
            let s = &run.summary;
            println!(
                "{} step {} loss {:.6} remaining_ratio {:.6} val_loss {:.6}",
                s.mode, s.final_step, s.final_loss, s.remaining_ratio, s.val_loss
            );
        }
        Command::Evaluate { checkpoint, config } => {
            println!("{:.6}", cmd_evaluate(&checkpoint, &config)?);
        }
        Command::Report { dirs, output } => {
            let rows = cmd_report(&dirs, &output)?;
            println!("wrote {} rows to {}", rows.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! The command set driven from code: train a small run, decompose its dense
//! starting point, dump spectra, and merge a report.

use std::path::PathBuf;

use losparse::io::{cmd_decompose, cmd_report, cmd_spectrum, cmd_train, CHECKPOINT_DIR, PRETRAINED_DIR};
use losparse::CompressionBudget;

fn main() -> losparse::Result<()> {
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.toml");
    let root = std::env::temp_dir().join("losparse-pipeline");
    let run_dir = root.join("run");

    let run = cmd_train(&config, &run_dir)?;
    println!(
        "trained: val loss {:.6}, remaining ratio {}",
        run.summary.val_loss, run.summary.remaining_ratio
    );

    let budget = CompressionBudget::new(0.3, 0.1)?;
    for row in cmd_decompose(&run_dir.join(PRETRAINED_DIR), &root.join("decomposed"), budget)? {
        println!("{}: rank {} residual {:.4}", row.name, row.rank, row.residual);
    }

    let spectra = cmd_spectrum(&run_dir.join(CHECKPOINT_DIR), &root.join("spectra.csv"))?;
    println!(
        "{} singular values in {}",
        spectra.len(),
        root.join("spectra.csv").display()
    );

    let rows = cmd_report(&[run_dir], &root.join("report.csv"))?;
    println!("report: {} row(s) in {}", rows.len(), root.join("report.csv").display());
    Ok(())
}

//! Compresses one planted task in every mode and prints the validation
//! losses side by side.
//!
//! ```text
//! cargo run --release --example train_compare -- [config.toml]
//! ```

use std::path::PathBuf;

use losparse::harness::{evaluate, generate_task, pretrain_dense, train_compress, Mode, PRETRAIN_STEPS};
use losparse::io::RunConfig;

fn main() -> losparse::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/planted.toml"));
    let run = RunConfig::load(&path)?;
    let (_, train, val) = generate_task(&run.task)?;
    let mut config = run.train_config();
    let pretrained = pretrain_dense(&run.task.dims, &train, &config, PRETRAIN_STEPS)?;
    println!("dense pretrained: val loss {:.4}", evaluate(&pretrained, &val)?);
    for mode in Mode::ALL {
        config.mode = mode;
        let out = train_compress(&pretrained, &train, &config)?;
        println!(
            "{:<24} val loss {:.4}  remaining ratio {:.4}",
            mode.as_str(),
            evaluate(&out.model, &val)?,
            out.model.remaining_ratio()
        );
    }
    Ok(())
}

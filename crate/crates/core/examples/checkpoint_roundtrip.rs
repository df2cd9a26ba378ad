//! Writes a factorized, partly pruned model to disk and reads it back. The
//! sparse blob only holds live columns.

use std::fs;

use losparse::harness::{LayerWeights, ToyModel};
use losparse::io::{load_model, save_model};
use losparse::rng::seeded;
use losparse::FactorizedLayer;

fn main() -> losparse::Result<()> {
    let mut rng = seeded(4);
    let mut model = ToyModel::random_dense(&[32, 32], &mut rng)?.factorize(0.1)?;
    if let LayerWeights::Factorized(f) = &mut model.layers_mut()[0].weights {
        // keep 4 of 32 sparse columns
        let live: Vec<bool> = (0..32).map(|j| j % 8 == 0).collect();
        let mut pruned = f.s().clone();
        for (j, &l) in live.iter().enumerate() {
            if !l {
                pruned.zero_column(j);
            }
        }
        *f = FactorizedLayer::from_parts(f.u().clone(), f.v().clone(), pruned, live)?;
    }

    let dir = std::env::temp_dir().join("losparse-roundtrip");
    let manifest = save_model(&model, &dir)?;
    for e in &manifest.matrices {
        let bytes = fs::metadata(dir.join(&e.blob_file)).map(|m| m.len()).unwrap_or(0);
        println!("{:<20} {:?} {}x{} -> {bytes} bytes", e.name, e.kind, e.rows, e.cols);
    }
    let back = load_model(&dir)?;
    let w0 = model.layers()[0].weights.effective_weight();
    let w1 = back.layers()[0].weights.effective_weight();
    println!("max round-trip error {:.2e}", w0.sub(&w1)?.max_abs());
    println!("remaining ratio {:.4}", back.remaining_ratio());
    Ok(())
}

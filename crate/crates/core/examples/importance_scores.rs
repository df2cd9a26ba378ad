//! Smoothed `|w·g|` sensitivity and per-column neuron scores over a few
//! steps, with one column whose gradients grow.

use losparse::importance::{export_histogram, instant_sensitivity, ImportanceState};
use losparse::DenseMatrix;

fn main() -> losparse::Result<()> {
    let w = DenseMatrix::from_fn(4, 6, |i, j| 1.0 + 0.1 * (i + j) as f64);
    let mut state = ImportanceState::new(4, 6, 0.85)?;
    for step in 0..10 {
        // column 5 gets steadily larger gradients
        let grad = DenseMatrix::from_fn(4, 6, |_, j| if j == 5 { 0.1 * step as f64 } else { 0.05 });
        state.update(&instant_sensitivity(&w, &grad)?)?;
    }
    let scores = state.neuron_scores();
    for (j, s) in scores.iter().enumerate() {
        println!("column {j}: {s:.4}");
    }
    for bin in export_histogram(&scores, 4)? {
        println!("[{:.3}, {:.3}) {}", bin.low, bin.high, bin.count);
    }
    Ok(())
}

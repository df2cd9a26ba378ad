//! Splits a dense matrix into `U·V + S` at a budgeted rank and checks that
//! the factorized forward pass matches the dense one.

use losparse::rng::{gaussian_matrix, seeded};
use losparse::{matmul, rank_from_budget, FactorizedLayer};

fn main() -> losparse::Result<()> {
    let mut rng = seeded(2);
    let w = gaussian_matrix(&mut rng, 64, 48);
    let rank = rank_from_budget(64, 48, 0.1);
    let layer = FactorizedLayer::init_from_pretrained(&w, rank)?;

    // S stays dense until pruning removes columns
    println!(
        "rank {rank}: factors hold {} of {} parameters",
        rank * (64 + 48),
        64 * 48
    );
    println!(
        "|S|_F = {:.4} of |W|_F = {:.4}",
        layer.s().frobenius_norm(),
        w.frobenius_norm()
    );

    let x = gaussian_matrix(&mut rng, 5, 64);
    let gap = layer.forward(&x)?.sub(&matmul(&x, &w)?)?.max_abs();
    println!("max |XW - ((XU)V + XS)| = {gap:.2e}");
    Ok(())
}

//! Singular values of a noisy low-rank matrix: a few large values, then a
//! flat noise floor.

use losparse::rng::{gaussian_matrix, seeded};
use losparse::{matmul, svd};

fn main() -> losparse::Result<()> {
    let mut rng = seeded(1);
    let a = gaussian_matrix(&mut rng, 48, 3);
    let b = gaussian_matrix(&mut rng, 3, 32);
    let mut w = matmul(&a, &b)?;
    w.axpy(0.05, &gaussian_matrix(&mut rng, 48, 32))?;

    let s = svd(&w)?;
    for (i, sigma) in s.singular_values.iter().enumerate().take(8) {
        println!("sigma[{i}] = {sigma:.4}");
    }
    println!("energy outside the top 3: {:.4}", s.tail_energy(3));
    Ok(())
}

#![allow(dead_code)]

use std::path::PathBuf;

use losparse::harness::TrainConfig;
use losparse::io::RunConfig;
use losparse::rng::gaussian_matrix;
use losparse::DenseMatrix;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_config(name: &str) -> RunConfig {
    RunConfig::load(&fixture(name)).expect("fixture parses")
}

pub fn train_config(name: &str) -> TrainConfig {
    fixture_config(name).train_config()
}

/// Modified Gram–Schmidt on the columns of a Gaussian draw.
pub fn random_orthonormal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
    assert!(cols <= rows);
    let g = gaussian_matrix(rng, rows, cols);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v = g.column(j);
        for _ in 0..2 {
            for u in &q {
                let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, a) in v.iter_mut().zip(u) {
                    *x -= d * a;
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / n).collect());
    }
    DenseMatrix::from_fn(rows, cols, |i, j| q[j][i])
}

/// `Q1·diag(sigma)·Q2ᵀ` with the given singular values.
pub fn with_spectrum<R: Rng>(rng: &mut R, rows: usize, cols: usize, sigma: &[f64]) -> DenseMatrix {
    let k = sigma.len();
    let q1 = random_orthonormal(rng, rows, k);
    let q2 = random_orthonormal(rng, cols, k);
    DenseMatrix::from_fn(rows, cols, |i, j| {
        (0..k).map(|p| q1.get(i, p) * sigma[p] * q2.get(j, p)).sum()
    })
}

/// `|a − b| ≤ max(rel·|b|, floor)`
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= (rel * b.abs()).max(floor)
}

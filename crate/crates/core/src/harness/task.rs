use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, DenseMatrix};
use crate::rng::{gaussian_matrix, seeded};

/// Parameters of a planted regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub seed: u64,
    /// Layer widths `[d_in, hidden..., d_out]` of the model trained on the task.
    pub dims: Vec<usize>,
    /// Rank of the planted low-rank component.
    pub planted_rank: usize,
    /// Number of nonzero columns in the planted sparse component.
    pub planted_columns: usize,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_val: usize,
}

impl TaskSpec {
    pub fn d_in(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn d_out(&self) -> usize {
        self.dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "dims must list at least two positive widths, got {:?}",
                self.dims
            )));
        }
        let (d_in, d_out) = (self.d_in(), self.d_out());
        if self.planted_rank > d_in.min(d_out) {
            return Err(Error::Config(format!(
                "planted_rank {} exceeds min(d_in, d_out) = {}",
                self.planted_rank,
                d_in.min(d_out)
            )));
        }
        if self.planted_columns > d_out {
            return Err(Error::Config(format!(
                "planted_columns {} exceeds d_out = {d_out}",
                self.planted_columns
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("n_train and n_val must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth `y = x·(L* + S*) + ε` of a planted task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub d_in: usize,
    pub d_out: usize,
    /// `d_in × d_out`, rank `planted_rank`.
    pub planted_lowrank: DenseMatrix,
    /// `d_in × d_out`, nonzero only on `sparse_columns`.
    pub planted_sparse: DenseMatrix,
    /// Ascending.
    pub sparse_columns: Vec<usize>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticTask {
    /// `L* + S*`
    pub fn planted_weight(&self) -> DenseMatrix {
        self.planted_lowrank
            .add(&self.planted_sparse)
            .expect("planted parts share a shape")
    }
}

/// Row-aligned inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Rows `indices` of both inputs and targets.
    pub fn gather(&self, indices: &[usize]) -> Dataset {
        let pick = |m: &DenseMatrix| {
            let cols = m.cols();
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                data.extend_from_slice(m.row(i));
            }
            DenseMatrix::new(indices.len(), cols, data).expect("row gather keeps width")
        };
        Dataset {
            x: pick(&self.x),
            y: pick(&self.y),
        }
    }
}

/// Draws the planted matrices and the train/validation sets from one seeded
/// stream.
///
/// Both planted parts have entries of variance `1/d_in`, so with standard
/// normal inputs each target coordinate has variance near 1 per component.
pub fn generate_task(spec: &TaskSpec) -> Result<(SyntheticTask, Dataset, Dataset)> {
    spec.validate()?;
    let (d_in, d_out) = (spec.d_in(), spec.d_out());
    let mut rng = seeded(spec.seed);

    let planted_lowrank = if spec.planted_rank == 0 {
        DenseMatrix::zeros(d_in, d_out)
    } else {
        let a = gaussian_matrix(&mut rng, d_in, spec.planted_rank);
        let b = gaussian_matrix(&mut rng, spec.planted_rank, d_out);
        let scale = 1.0 / ((spec.planted_rank * d_in) as f64).sqrt();
        matmul(&a, &b)?.scaled(scale)
    };

    let mut sparse_columns = sample(&mut rng, d_out, spec.planted_columns).into_vec();
    sparse_columns.sort_unstable();
    let mut planted_sparse = DenseMatrix::zeros(d_in, d_out);
    let entries = gaussian_matrix(&mut rng, d_in, spec.planted_columns);
    let scale = 1.0 / (d_in as f64).sqrt();
    for (k, &j) in sparse_columns.iter().enumerate() {
        for i in 0..d_in {
            planted_sparse.set(i, j, scale * entries.get(i, k));
        }
    }

    let task = SyntheticTask {
        d_in,
        d_out,
        planted_lowrank,
        planted_sparse,
        sparse_columns,
        noise_std: spec.noise_std,
        seed: spec.seed,
    };
    let w = task.planted_weight();
    let mut draw = |n: usize| -> Result<Dataset> {
        let x = gaussian_matrix(&mut rng, n, d_in);
        let noise = gaussian_matrix(&mut rng, n, d_out);
        let mut y = matmul(&x, &w)?;
        y.axpy(spec.noise_std, &noise)?;
        Ok(Dataset { x, y })
    };
    let train = draw(spec.n_train)?;
    let val = draw(spec.n_val)?;
    Ok((task, train, val))
}

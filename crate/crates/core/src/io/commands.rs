use std::fs;
use std::path::{Path, PathBuf};

use crate::decomposition::{rank_from_budget, CompressionBudget, FactorizedLayer};
use crate::error::{Error, Result};
use crate::harness::{evaluate, generate_task, pretrain_dense, train_compress, MetricsTrace, Mode, PRETRAIN_STEPS};
use crate::importance::{export_histogram, HistogramBin};
use crate::linalg::svd;

use super::checkpoint::{
    load_checkpoint, load_model, save_checkpoint, save_model, Checkpoint, MatrixKind, StoredMatrix,
};
use super::config::RunConfig;
use super::write_atomic;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const PRETRAINED_DIR: &str = "pretrained";
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeRow {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// `‖W − U·V‖_F` of the matrix as loaded.
    pub residual: f64,
}

/// Replaces every dense matrix of the checkpoint at `input` by its
/// `U`/`V`/`S` triple and writes the result to `output`. Other entries are
/// copied unchanged.
pub fn cmd_decompose(input: &Path, output: &Path, budget: CompressionBudget) -> Result<Vec<DecomposeRow>> {
    budget.validate()?;
    let source = load_checkpoint(input)?;
    let mut out = Checkpoint {
        activation: source.activation.clone(),
        matrices: Vec::new(),
    };
    let mut rows = Vec::new();
    for m in source.matrices {
        if m.kind != MatrixKind::Dense {
            out.matrices.push(m);
            continue;
        }
        let (d1, d2) = m.matrix.shape();
        let rank = rank_from_budget(d1, d2, budget.lowrank_ratio);
        let decomposition = svd(&m.matrix)?;
        let layer = FactorizedLayer::init_from_svd(&m.matrix, &decomposition, rank)?;
        rows.push(DecomposeRow {
            name: m.name.clone(),
            rows: d1,
            cols: d2,
            rank,
            residual: layer.s().frobenius_norm(),
        });
        out.matrices.push(StoredMatrix::new(
            format!("{}.u", m.name),
            MatrixKind::FactorU,
            layer.u().clone(),
        ));
        out.matrices.push(StoredMatrix::new(
            format!("{}.v", m.name),
            MatrixKind::FactorV,
            layer.v().clone(),
        ));
        out.matrices.push(StoredMatrix::sparse(
            format!("{}.s", m.name),
            layer.s().clone(),
            layer.live_columns(),
        ));
    }
    save_checkpoint(&out, output)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub matrix_name: String,
    pub index: usize,
    pub sigma: f64,
}

/// Singular values of every weight matrix in the checkpoint, factorized
/// ones reconstructed first. Writes `matrix_name,index,sigma`.
pub fn cmd_spectrum(input: &Path, output: &Path) -> Result<Vec<SpectrumRow>> {
    let ckpt = load_checkpoint(input)?;
    let mut rows = Vec::new();
    for (name, w) in ckpt.weight_groups()? {
        for (index, &sigma) in svd(&w)?.singular_values.iter().enumerate() {
            rows.push(SpectrumRow {
                matrix_name: name.clone(),
                index,
                sigma,
            });
        }
    }
    let mut csv = String::from("matrix_name,index,sigma\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.matrix_name, r.index, r.sigma));
    }
    write_atomic(output, csv.as_bytes())?;
    Ok(rows)
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: Mode,
    pub total_ratio: f64,
    pub lowrank_ratio: f64,
    pub seed: u64,
    pub final_step: usize,
    pub final_loss: f64,
    pub remaining_ratio: f64,
    /// Validation loss of the checkpoint as stored on disk.
    pub val_loss: f64,
}

const SUMMARY_HEADER: &str = "mode,total_ratio,lowrank_ratio,seed,final_step,final_loss,remaining_ratio,val_loss";

impl RunSummary {
    fn to_csv(&self) -> String {
        format!(
            "{SUMMARY_HEADER}\n{},{},{},{},{},{},{},{}\n",
            self.mode,
            self.total_ratio,
            self.lowrank_ratio,
            self.seed,
            self.final_step,
            self.final_loss,
            self.remaining_ratio,
            self.val_loss
        )
    }

    fn read(path: &Path) -> Result<Self> {
        let record = last_record(path)?;
        let field = |name: &str| column(&record, name, path);
        let num = |name: &str| -> Result<f64> { parse_field(&field(name)?, name, path) };
        Ok(RunSummary {
            mode: field("mode")?.parse()?,
            total_ratio: num("total_ratio")?,
            lowrank_ratio: num("lowrank_ratio")?,
            seed: parse_field(&field("seed")?, "seed", path)?,
            final_step: parse_field(&field("final_step")?, "final_step", path)?,
            final_loss: num("final_loss")?,
            remaining_ratio: num("remaining_ratio")?,
            val_loss: num("val_loss")?,
        })
    }
}

/// Histogram CSV of one layer's neuron scores: `bin_low,bin_high,count`.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut csv = String::from("bin_low,bin_high,count\n");
    for b in bins {
        csv.push_str(&format!("{},{},{}\n", b.low, b.high, b.count));
    }
    csv
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub summary: RunSummary,
    pub trace: MetricsTrace,
    pub output_dir: PathBuf,
    /// One file per layer; empty for modes that track no scores.
    pub histogram_files: Vec<PathBuf>,
}

/// Pretrains, compresses and writes everything a run produces into
/// `output`:
///
/// - `metrics.csv`, the per-step trace
/// - `summary.csv`, one row of final numbers
/// - `checkpoint/`, the compressed model
/// - `pretrained/`, the dense starting point
/// - `hist_layer{i}.csv`, final neuron-score histograms
pub fn cmd_train(config_path: &Path, output: &Path) -> Result<TrainArtifacts> {
    let config = RunConfig::load(config_path)?;
    let train_config = config.train_config();
    let (_, train, val) = generate_task(&config.task)?;
    let pretrained = pretrain_dense(&config.task.dims, &train, &train_config, PRETRAIN_STEPS)?;
    let outcome = train_compress(&pretrained, &train, &train_config)?;

    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    write_atomic(&output.join(METRICS_FILE), outcome.trace.to_csv().as_bytes())?;
    save_model(&pretrained, &output.join(PRETRAINED_DIR))?;
    let ckpt_dir = output.join(CHECKPOINT_DIR);
    save_model(&outcome.model, &ckpt_dir)?;

    let mut histogram_files = Vec::new();
    for (i, scores) in outcome.neuron_scores.iter().enumerate() {
        if let Some(scores) = scores {
            let path = output.join(format!("hist_layer{i}.csv"));
            write_atomic(
                &path,
                histogram_csv(&export_histogram(scores, HISTOGRAM_BINS)?).as_bytes(),
            )?;
            histogram_files.push(path);
        }
    }

    let last = outcome.trace.last().ok_or(Error::EmptyInput("training trace"))?;
    let stored = load_model(&ckpt_dir)?;
    let summary = RunSummary {
        mode: config.mode,
        total_ratio: config.budget.total_ratio,
        lowrank_ratio: config.budget.lowrank_ratio,
        seed: config.task.seed,
        final_step: last.step,
        final_loss: last.loss,
        remaining_ratio: last.remaining_ratio,
        val_loss: evaluate(&stored, &val)?,
    };
    write_atomic(&output.join(SUMMARY_FILE), summary.to_csv().as_bytes())?;
    Ok(TrainArtifacts {
        summary,
        trace: outcome.trace,
        output_dir: output.to_path_buf(),
        histogram_files,
    })
}

/// Validation loss of the checkpoint on the task the config describes.
pub fn cmd_evaluate(checkpoint: &Path, config_path: &Path) -> Result<f64> {
    let config = RunConfig::load(config_path)?;
    let model = load_model(checkpoint)?;
    let dims = model.dims();
    if dims.first() != config.task.dims.first() || dims.last() != config.task.dims.last() {
        return Err(Error::shape(
            "evaluate",
            (model.in_dim(), model.out_dim()),
            (config.task.d_in(), config.task.d_out()),
        ));
    }
    let (_, _, val) = generate_task(&config.task)?;
    evaluate(&model, &val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Final path component of the run directory.
    pub run: String,
    pub mode: Mode,
    pub total_ratio: f64,
    pub lowrank_ratio: f64,
    pub seed: u64,
    pub final_step: usize,
    pub final_loss: f64,
    pub remaining_ratio: f64,
    pub val_loss: f64,
}

const REPORT_HEADER: &str = "total_ratio,mode,seed,lowrank_ratio,final_step,final_loss,remaining_ratio,val_loss,run";

/// Merges run directories into one table sorted by ratio, then mode, then
/// seed. Loss and ratio come from the last row of each `metrics.csv`.
pub fn cmd_report(dirs: &[PathBuf], output: &Path) -> Result<Vec<ReportRow>> {
    if dirs.is_empty() {
        return Err(Error::EmptyInput("run directories"));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let summary = RunSummary::read(&dir.join(SUMMARY_FILE))?;
        let metrics = dir.join(METRICS_FILE);
        let last = last_record(&metrics)?;
        let num = |name: &str| -> Result<f64> { parse_field(&column(&last, name, &metrics)?, name, &metrics) };
        rows.push(ReportRow {
            run: dir
                .file_name()
                .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
            mode: summary.mode,
            total_ratio: summary.total_ratio,
            lowrank_ratio: summary.lowrank_ratio,
            seed: summary.seed,
            final_step: parse_field(&column(&last, "step", &metrics)?, "step", &metrics)?,
            final_loss: num("loss")?,
            remaining_ratio: num("remaining_ratio")?,
            val_loss: summary.val_loss,
        });
    }
    rows.sort_by(|a, b| {
        a.total_ratio
            .total_cmp(&b.total_ratio)
            .then(a.mode.cmp(&b.mode))
            .then(a.seed.cmp(&b.seed))
            .then(a.run.cmp(&b.run))
    });
    let mut csv = format!("{REPORT_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.total_ratio,
            r.mode,
            r.seed,
            r.lowrank_ratio,
            r.final_step,
            r.final_loss,
            r.remaining_ratio,
            r.val_loss,
            r.run
        ));
    }
    write_atomic(output, csv.as_bytes())?;
    Ok(rows)
}

/// Header and last data row of a CSV file.
fn last_record(path: &Path) -> Result<(csv::StringRecord, csv::StringRecord)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut last = None;
    for record in reader.records() {
        last = Some(record.map_err(|e| csv_error(path, e))?);
    }
    let last = last.ok_or_else(|| Error::format(path.display().to_string(), "no data rows"))?;
    Ok((header, last))
}

fn column(record: &(csv::StringRecord, csv::StringRecord), name: &str, path: &Path) -> Result<String> {
    let (header, row) = record;
    header
        .iter()
        .position(|h| h == name)
        .and_then(|i| row.get(i))
        .map(str::to_string)
        .ok_or_else(|| Error::format(format!("{}:{name}", path.display()), "missing column"))
}

fn parse_field<T: std::str::FromStr>(value: &str, name: &str, path: &Path) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(format!("{}:{name}", path.display()), format!("cannot parse {value:?}")))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    fn dense_checkpoint(dir: &Path, name: &str, w: DenseMatrix) {
        let ckpt = Checkpoint {
            activation: None,
            matrices: vec![StoredMatrix::new(name, MatrixKind::Dense, w)],
        };
        save_checkpoint(&ckpt, dir).unwrap();
    }

    #[test]
    fn decompose_reports_budget_rank() {
        let dir = tempfile::tempdir().unwrap();
        let w = DenseMatrix::from_fn(100, 100, |i, j| ((i * 7 + j * 13) % 17) as f64 - 8.0);
        dense_checkpoint(&dir.path().join("in"), "w", w);
        let rows = cmd_decompose(
            &dir.path().join("in"),
            &dir.path().join("out"),
            CompressionBudget::new(0.2, 0.05).unwrap(),
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].rank, 2);
        let out = load_checkpoint(&dir.path().join("out")).unwrap();
        let kinds: Vec<_> = out.matrices.iter().map(|m| m.kind).collect();
        assert_eq!(
            kinds,
            [MatrixKind::FactorU, MatrixKind::FactorV, MatrixKind::SparseColumns]
        );
    }

    #[test]
    fn full_rank_row_vector_has_no_residual() {
        let dir = tempfile::tempdir().unwrap();
        let w = DenseMatrix::from_rows(&[&[1.5, -2.0, 0.25, 4.0]]);
        dense_checkpoint(&dir.path().join("in"), "row", w);
        let rows = cmd_decompose(
            &dir.path().join("in"),
            &dir.path().join("out"),
            CompressionBudget::new(1.0, 0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(rows[0].rank, 1);
        assert!(rows[0].residual < 1e-6, "{}", rows[0].residual);
    }

    #[test]
    fn spectrum_of_diag() {
        let dir = tempfile::tempdir().unwrap();
        dense_checkpoint(&dir.path().join("in"), "d", DenseMatrix::diag(&[1.0, 3.0]));
        let csv = dir.path().join("spectra.csv");
        cmd_spectrum(&dir.path().join("in"), &csv).unwrap();
        assert_eq!(
            fs::read_to_string(csv).unwrap(),
            "matrix_name,index,sigma\nd,0,3\nd,1,1\n"
        );
    }

    #[test]
    fn report_needs_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(cmd_report(&[], &dir.path().join("r.csv")).is_err());
        let err = cmd_report(&[dir.path().join("missing")], &dir.path().join("r.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 4, "{err}");
    }
}

//! Checkpoint directories: a JSON manifest plus one little-endian `f32`
//! row-major blob per matrix.
//!
//! Sparse matrices store only their live columns, compacted in ascending
//! column order, so pruned columns cost nothing on disk.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomposition::FactorizedLayer;
use crate::error::{Error, Result};
use crate::harness::{LayerWeights, ModelLayer, ToyModel};
use crate::linalg::DenseMatrix;

use super::write_atomic;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const DTYPE: &str = "float32";
const LAYOUT: &str = "row-major";
const ENDIANNESS: &str = "little";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Dense,
    FactorU,
    FactorV,
    SparseColumns,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: MatrixKind,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live_column_ids: Option<Vec<usize>>,
    pub blob_file: String,
    pub dtype: String,
    pub layout: String,
    pub endianness: String,
}

impl ManifestEntry {
    /// Expected blob length in bytes.
    pub fn blob_len(&self) -> usize {
        let cols = match (&self.kind, &self.live_column_ids) {
            (MatrixKind::SparseColumns, Some(ids)) => ids.len(),
            _ => self.cols,
        };
        self.rows * cols * 4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    pub matrices: Vec<ManifestEntry>,
}

impl CheckpointManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::format(
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        for (i, e) in self.matrices.iter().enumerate() {
            let field = |f: &str| format!("matrices[{i}].{f} ({})", e.name);
            if e.dtype != DTYPE {
                return Err(Error::format(
                    field("dtype"),
                    format!("expected {DTYPE}, got {}", e.dtype),
                ));
            }
            if e.layout != LAYOUT {
                return Err(Error::format(
                    field("layout"),
                    format!("expected {LAYOUT}, got {}", e.layout),
                ));
            }
            if e.endianness != ENDIANNESS {
                return Err(Error::format(
                    field("endianness"),
                    format!("expected {ENDIANNESS}, got {}", e.endianness),
                ));
            }
            if e.blob_file.is_empty() || e.blob_file.contains('/') || e.blob_file.contains("..") {
                return Err(Error::format(field("blob_file"), "must be a plain relative file name"));
            }
            match e.kind {
                MatrixKind::FactorU | MatrixKind::FactorV => {
                    let expect = if e.kind == MatrixKind::FactorU { e.cols } else { e.rows };
                    if e.rank != Some(expect) {
                        return Err(Error::format(
                            field("rank"),
                            format!("expected {expect}, got {:?}", e.rank),
                        ));
                    }
                }
                MatrixKind::SparseColumns => {
                    let ids = e
                        .live_column_ids
                        .as_ref()
                        .ok_or_else(|| Error::format(field("live_column_ids"), "missing"))?;
                    if ids.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::format(field("live_column_ids"), "not strictly ascending"));
                    }
                    if ids.last().is_some_and(|&j| j >= e.cols) {
                        return Err(Error::format(field("live_column_ids"), "id beyond cols"));
                    }
                }
                MatrixKind::Bias if e.rows != 1 => {
                    return Err(Error::format(field("rows"), "bias must have one row"));
                }
                _ => {}
            }
            if e.kind != MatrixKind::SparseColumns && e.live_column_ids.is_some() {
                return Err(Error::format(
                    field("live_column_ids"),
                    "only sparse_columns entries carry ids",
                ));
            }
        }
        Ok(())
    }

    /// Total bytes of all blobs.
    pub fn blob_bytes(&self) -> usize {
        self.matrices.iter().map(ManifestEntry::blob_len).sum()
    }

    /// Stored weight parameters, biases excluded.
    pub fn weight_param_count(&self) -> usize {
        self.matrices
            .iter()
            .filter(|e| e.kind != MatrixKind::Bias)
            .map(|e| e.blob_len() / 4)
            .sum()
    }
}

/// One named matrix held in memory at its full logical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredMatrix {
    pub name: String,
    pub kind: MatrixKind,
    pub matrix: DenseMatrix,
    /// Ascending; present only for `SparseColumns`.
    pub live_column_ids: Option<Vec<usize>>,
}

impl StoredMatrix {
    pub fn new(name: impl Into<String>, kind: MatrixKind, matrix: DenseMatrix) -> Self {
        Self {
            name: name.into(),
            kind,
            matrix,
            live_column_ids: None,
        }
    }

    pub fn sparse(name: impl Into<String>, matrix: DenseMatrix, live: &[bool]) -> Self {
        let ids = live.iter().enumerate().filter(|(_, &l)| l).map(|(j, _)| j).collect();
        Self {
            name: name.into(),
            kind: MatrixKind::SparseColumns,
            matrix,
            live_column_ids: Some(ids),
        }
    }

    fn entry(&self) -> ManifestEntry {
        let rank = match self.kind {
            MatrixKind::FactorU => Some(self.matrix.cols()),
            MatrixKind::FactorV => Some(self.matrix.rows()),
            _ => None,
        };
        ManifestEntry {
            name: self.name.clone(),
            kind: self.kind,
            rows: self.matrix.rows(),
            cols: self.matrix.cols(),
            rank,
            live_column_ids: self.live_column_ids.clone(),
            blob_file: format!("{}.bin", self.name),
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
            endianness: ENDIANNESS.into(),
        }
    }

    fn blob(&self) -> Vec<u8> {
        let m = &self.matrix;
        let mut out = Vec::new();
        match &self.live_column_ids {
            Some(ids) if self.kind == MatrixKind::SparseColumns => {
                out.reserve(m.rows() * ids.len() * 4);
                for i in 0..m.rows() {
                    for &j in ids {
                        out.extend_from_slice(&(m.get(i, j) as f32).to_le_bytes());
                    }
                }
            }
            _ => {
                out.reserve(m.as_slice().len() * 4);
                for &x in m.as_slice() {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub activation: Option<String>,
    pub matrices: Vec<StoredMatrix>,
}

impl Checkpoint {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            activation: self.activation.clone(),
            matrices: self.matrices.iter().map(StoredMatrix::entry).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&StoredMatrix> {
        self.matrices.iter().find(|m| m.name == name)
    }

    /// Matrices that stand for one linear map each, in manifest order:
    /// dense entries, factor triples (as `U·V + S`) and standalone sparse
    /// entries. Biases are skipped.
    pub fn weight_groups(&self) -> Result<Vec<(String, DenseMatrix)>> {
        let mut out = Vec::new();
        for m in &self.matrices {
            match m.kind {
                MatrixKind::Dense => out.push((m.name.clone(), m.matrix.clone())),
                MatrixKind::FactorU => {
                    let base = m
                        .name
                        .strip_suffix(".u")
                        .ok_or_else(|| Error::format(format!("{}.name", m.name), "factor_u names end in .u"))?;
                    let layer = self.factorized(base)?;
                    out.push((base.to_string(), layer.reconstruct()));
                }
                MatrixKind::SparseColumns => {
                    let owned = m
                        .name
                        .strip_suffix(".s")
                        .is_some_and(|b| self.get(&format!("{b}.u")).is_some());
                    if !owned {
                        out.push((m.name.clone(), m.matrix.clone()));
                    }
                }
                MatrixKind::FactorV | MatrixKind::Bias => {}
            }
        }
        Ok(out)
    }

    /// Assembles the `base.u` / `base.v` / `base.s` triple.
    pub fn factorized(&self, base: &str) -> Result<FactorizedLayer> {
        let part = |suffix: &str, kind: MatrixKind| -> Result<&StoredMatrix> {
            let name = format!("{base}.{suffix}");
            let m = self
                .get(&name)
                .ok_or_else(|| Error::format(name.clone(), "missing from manifest"))?;
            if m.kind != kind {
                return Err(Error::format(format!("{name}.kind"), format!("expected {kind:?}")));
            }
            Ok(m)
        };
        let u = part("u", MatrixKind::FactorU)?;
        let v = part("v", MatrixKind::FactorV)?;
        let s = part("s", MatrixKind::SparseColumns)?;
        let live = live_mask(s);
        FactorizedLayer::from_parts(u.matrix.clone(), v.matrix.clone(), s.matrix.clone(), live)
            .map_err(|e| Error::format(base.to_string(), e.to_string()))
    }
}

fn live_mask(m: &StoredMatrix) -> Vec<bool> {
    let mut live = vec![false; m.matrix.cols()];
    for &j in m.live_column_ids.as_deref().unwrap_or(&[]) {
        live[j] = true;
    }
    live
}

pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = checkpoint.manifest();
    manifest.validate()?;
    for (m, entry) in checkpoint.matrices.iter().zip(&manifest.matrices) {
        write_atomic(&dir.join(&entry.blob_file), &m.blob())?;
    }
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(MANIFEST_FILE, e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let mut matrices = Vec::with_capacity(manifest.matrices.len());
    for e in &manifest.matrices {
        let path = dir.join(&e.blob_file);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        if bytes.len() != e.blob_len() {
            return Err(Error::format(
                format!("{}.blob_file", e.name),
                format!("{} bytes on disk, expected {}", bytes.len(), e.blob_len()),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let matrix = match (&e.kind, &e.live_column_ids) {
            (MatrixKind::SparseColumns, Some(ids)) => {
                let mut full = DenseMatrix::zeros(e.rows, e.cols);
                let k = ids.len();
                for i in 0..e.rows {
                    for (c, &j) in ids.iter().enumerate() {
                        full.set(i, j, values[i * k + c]);
                    }
                }
                full
            }
            _ => DenseMatrix::new(e.rows, e.cols, values)?,
        };
        matrices.push(StoredMatrix {
            name: e.name.clone(),
            kind: e.kind,
            matrix,
            live_column_ids: e.live_column_ids.clone(),
        });
    }
    Ok(Checkpoint {
        activation: manifest.activation,
        matrices,
    })
}

fn layer_base(i: usize) -> String {
    format!("layer{i}.weight")
}

/// Checkpoint layout of a model: `layer{i}.weight` (dense, or sparse when
/// columns were pruned) or the `layer{i}.weight.{u,v,s}` triple, plus
/// `layer{i}.bias`.
pub fn model_to_checkpoint(model: &ToyModel) -> Checkpoint {
    let mut matrices = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        let base = layer_base(i);
        match &layer.weights {
            LayerWeights::Dense { weight, live_columns } => {
                if live_columns.iter().all(|&l| l) {
                    matrices.push(StoredMatrix::new(&base, MatrixKind::Dense, weight.clone()));
                } else {
                    matrices.push(StoredMatrix::sparse(&base, weight.clone(), live_columns));
                }
            }
            LayerWeights::Factorized(f) => {
                matrices.push(StoredMatrix::new(
                    format!("{base}.u"),
                    MatrixKind::FactorU,
                    f.u().clone(),
                ));
                matrices.push(StoredMatrix::new(
                    format!("{base}.v"),
                    MatrixKind::FactorV,
                    f.v().clone(),
                ));
                matrices.push(StoredMatrix::sparse(
                    format!("{base}.s"),
                    f.s().clone(),
                    f.live_columns(),
                ));
            }
        }
        let bias = DenseMatrix::new(1, layer.bias.len(), layer.bias.clone()).expect("1×d bias");
        matrices.push(StoredMatrix::new(format!("layer{i}.bias"), MatrixKind::Bias, bias));
    }
    Checkpoint {
        activation: Some("tanh".into()),
        matrices,
    }
}

pub fn checkpoint_to_model(checkpoint: &Checkpoint) -> Result<ToyModel> {
    if let Some(act) = &checkpoint.activation {
        if act != "tanh" {
            return Err(Error::format("activation", format!("unsupported activation {act:?}")));
        }
    }
    let mut layers = Vec::new();
    for i in 0.. {
        let base = layer_base(i);
        let bias_name = format!("layer{i}.bias");
        let weights = if let Some(m) = checkpoint.get(&base) {
            match m.kind {
                MatrixKind::Dense => LayerWeights::dense(m.matrix.clone()),
                MatrixKind::SparseColumns => LayerWeights::Dense {
                    weight: m.matrix.clone(),
                    live_columns: live_mask(m),
                },
                other => {
                    return Err(Error::format(format!("{base}.kind"), format!("unexpected {other:?}")));
                }
            }
        } else if checkpoint.get(&format!("{base}.u")).is_some() {
            LayerWeights::Factorized(checkpoint.factorized(&base)?)
        } else {
            if checkpoint.get(&bias_name).is_some() {
                return Err(Error::format(base, "bias present without weights"));
            }
            break;
        };
        let bias = checkpoint
            .get(&bias_name)
            .ok_or_else(|| Error::format(bias_name.clone(), "missing from manifest"))?;
        layers.push(ModelLayer {
            weights,
            bias: bias.matrix.as_slice().to_vec(),
        });
    }
    if layers.is_empty() {
        return Err(Error::format("matrices", "no layer0 weights found"));
    }
    ToyModel::new(layers).map_err(|e| Error::format("matrices", e.to_string()))
}

pub fn save_model(model: &ToyModel, dir: &Path) -> Result<CheckpointManifest> {
    save_checkpoint(&model_to_checkpoint(model), dir)
}

pub fn load_model(dir: &Path) -> Result<ToyModel> {
    checkpoint_to_model(&load_checkpoint(dir)?)
}

/// The model exactly as it reads back from disk: every parameter rounded
/// through `f32`.
pub fn quantize_model(model: &ToyModel) -> Result<ToyModel> {
    let mut ckpt = model_to_checkpoint(model);
    for m in &mut ckpt.matrices {
        m.matrix = m.matrix.map(|x| x as f32 as f64);
    }
    checkpoint_to_model(&ckpt)
}

/// Bytes of every regular file directly inside `dir`.
pub fn dir_size(dir: &Path) -> Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let meta = entry.metadata().map_err(|e| Error::io(entry.path(), e))?;
        if meta.is_file() {
            total += meta.len();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};

    fn sample_model() -> ToyModel {
        let mut rng = seeded(1);
        let dense = ToyModel::random_dense(&[6, 5, 4], &mut rng).unwrap();
        let mut model = dense.factorize(0.3).unwrap();
        if let LayerWeights::Factorized(f) = &mut model.layers_mut()[0].weights {
            f.retain_columns(&[true, false, true, false, false]);
        }
        model.layers_mut()[1].bias = vec![0.5, -0.25, 1.0, 2.0];
        model
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = sample_model();
        save_model(&model, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back, quantize_model(&model).unwrap());
        for (a, b) in model.layers().iter().zip(back.layers()) {
            let (wa, wb) = (a.weights.effective_weight(), b.weights.effective_weight());
            for (x, y) in wa.as_slice().iter().zip(wb.as_slice()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_model(&sample_model(), a.path()).unwrap();
        save_model(&load_model(a.path()).unwrap(), b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for n in names {
            assert_eq!(
                fs::read(a.path().join(&n)).unwrap(),
                fs::read(b.path().join(&n)).unwrap(),
                "{n:?}"
            );
        }
    }

    #[test]
    fn sparse_blob_holds_only_live_columns() {
        let mut rng = seeded(2);
        let mut w = gaussian_matrix(&mut rng, 100, 100);
        let live: Vec<bool> = (0..100).map(|j| j % 10 == 0).collect();
        for (j, &l) in live.iter().enumerate() {
            if !l {
                w.zero_column(j);
            }
        }
        let ckpt = Checkpoint {
            activation: None,
            matrices: vec![
                StoredMatrix::new("dense", MatrixKind::Dense, w.clone()),
                StoredMatrix::sparse("sparse", w, &live),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let dense = fs::metadata(dir.path().join("dense.bin")).unwrap().len();
        let sparse = fs::metadata(dir.path().join("sparse.bin")).unwrap().len();
        assert_eq!(dense, 40_000);
        assert_eq!(sparse * 10, dense);
    }

    #[test]
    fn manifest_param_count_matches_remaining_ratio() {
        let model = sample_model();
        let manifest = model_to_checkpoint(&model).manifest();
        let expect = model.remaining_ratio() * model.original_param_count() as f64;
        assert_eq!(manifest.weight_param_count() as f64, expect);
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&sample_model(), dir.path()).unwrap();
        fs::write(dir.path().join("layer1.bias.bin"), [0u8; 3]).unwrap();
        let err = load_model(dir.path()).unwrap_err();
        assert!(
            matches!(err, Error::Format { ref field, .. } if field.contains("layer1.bias")),
            "{err}"
        );
    }

    #[test]
    fn malformed_manifest_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&sample_model(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replacen("\"little\"", "\"big\"", 1);
        fs::write(&path, text).unwrap();
        let err = load_model(dir.path()).unwrap_err();
        assert!(err.to_string().contains("endianness"), "{err}");

        let text = fs::read_to_string(&path)
            .unwrap()
            .replacen("\"format_version\"", "\"fmt\"", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn unsorted_live_ids_are_rejected() {
        let mut manifest = model_to_checkpoint(&sample_model()).manifest();
        let e = manifest
            .matrices
            .iter_mut()
            .find(|e| e.kind == MatrixKind::SparseColumns)
            .unwrap();
        e.live_column_ids = Some(vec![2, 0]);
        assert!(manifest.validate().is_err());
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = load_model(Path::new("/nonexistent/losparse-ckpt")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::{fixture, fixture_config, random_orthonormal, with_spectrum};
use losparse::harness::{generate_task, LayerWeights, Mode, ModelLayer, ToyModel};
use losparse::io::{
    cmd_decompose, cmd_evaluate, cmd_report, cmd_spectrum, cmd_train, dir_size, load_model, read_manifest,
    save_checkpoint, save_model, Checkpoint, MatrixKind, RunConfig, StoredMatrix, CHECKPOINT_DIR, METRICS_FILE,
    PRETRAINED_DIR,
};
use losparse::rng::seeded;
use losparse::{remaining_ratio, svd, CompressionBudget, DenseMatrix, FactorizedLayer};
use rand::Rng;

fn write_config(dir: &Path, name: &str, config: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, config.to_toml()).unwrap();
    path
}

fn single_dense(dir: &Path, name: &str, w: DenseMatrix) {
    let ckpt = Checkpoint {
        activation: None,
        matrices: vec![StoredMatrix::new(name, MatrixKind::Dense, w)],
    };
    save_checkpoint(&ckpt, dir).unwrap();
}

fn spectrum_rows(path: &Path) -> Vec<(String, usize, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("matrix_name,index,sigma"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn trained_checkpoint_round_trips_within_f32() {
    let tmp = tempfile::tempdir().unwrap();
    let run = cmd_train(&fixture("small.toml"), tmp.path()).unwrap();
    let ckpt = tmp.path().join(CHECKPOINT_DIR);
    let model = load_model(&ckpt).unwrap();

    // saving what was loaded reproduces the directory byte for byte
    let again = tmp.path().join("again");
    save_model(&model, &again).unwrap();
    for entry in fs::read_dir(&ckpt).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(ckpt.join(&name)).unwrap(),
            fs::read(again.join(&name)).unwrap()
        );
    }

    // stored parameter count is the remaining ratio of the dense count
    let manifest = read_manifest(&ckpt).unwrap();
    let layers: Vec<FactorizedLayer> = model
        .layers()
        .iter()
        .map(|l| match &l.weights {
            LayerWeights::Factorized(f) => f.clone(),
            LayerWeights::Dense { .. } => panic!("expected factorized layers"),
        })
        .collect();
    let original = model.original_param_count();
    assert_eq!(
        manifest.weight_param_count() as f64,
        remaining_ratio(&layers, original) * original as f64
    );
    assert_eq!(remaining_ratio(&layers, original), run.summary.remaining_ratio);

    // and the blobs are exactly that many float32 values plus the biases
    let bias_bytes: usize = model.layers().iter().map(|l| l.bias.len() * 4).sum();
    assert_eq!(manifest.blob_bytes(), manifest.weight_param_count() * 4 + bias_bytes);
}

#[test]
fn compressed_checkpoint_is_smaller_on_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let run = cmd_train(&fixture("small.toml"), tmp.path()).unwrap();
    let dense = dir_size(&tmp.path().join(PRETRAINED_DIR)).unwrap() as f64;
    let compressed = dir_size(&tmp.path().join(CHECKPOINT_DIR)).unwrap() as f64;
    // one rank unit (d1 + d2 floats) per layer
    let slack = 2.0 * 32.0 * 4.0;
    assert!(
        compressed <= run.summary.total_ratio * dense + 4096.0 + slack,
        "{compressed} vs {dense}"
    );
}

#[test]
fn decompose_residual_matches_spectral_tail() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = seeded(17);
    // small integers survive the float32 boundary exactly
    let w = DenseMatrix::from_fn(30, 24, |_, _| rng.random_range(-50..=50) as f64);
    single_dense(&tmp.path().join("in"), "w", w.clone());
    let rows = cmd_decompose(
        &tmp.path().join("in"),
        &tmp.path().join("out"),
        CompressionBudget::new(0.5, 0.2).unwrap(),
    )
    .unwrap();
    let rank = rows[0].rank;
    assert_eq!(rank, (0.2 * 720.0 / 54.0) as usize);
    let tail = svd(&w).unwrap().tail_energy(rank);
    let residual2 = rows[0].residual.powi(2);
    assert!((residual2 - tail).abs() <= 1e-6 * tail, "{residual2} vs {tail}");
}

#[test]
fn spectrum_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = seeded(3);

    let q = random_orthonormal(&mut rng, 8, 8);
    single_dense(&tmp.path().join("q"), "q", q);
    cmd_spectrum(&tmp.path().join("q"), &tmp.path().join("q.csv")).unwrap();
    for (_, _, sigma) in spectrum_rows(&tmp.path().join("q.csv")) {
        // float32 storage perturbs an orthogonal matrix by about 1e-7
        assert!((sigma - 1.0).abs() <= 1e-6, "{sigma}");
    }

    let w = with_spectrum(&mut rng, 12, 9, &[5.0, 4.0, 2.5, 1.0, 0.5]);
    single_dense(&tmp.path().join("w"), "w", w);
    cmd_spectrum(&tmp.path().join("w"), &tmp.path().join("w.csv")).unwrap();
    let stored = losparse::io::load_checkpoint(&tmp.path().join("w")).unwrap();
    let oracle = svd(&stored.matrices[0].matrix).unwrap().singular_values;
    let rows = spectrum_rows(&tmp.path().join("w.csv"));
    assert_eq!(rows.len(), 9);
    for ((_, i, sigma), expect) in rows.iter().zip(&oracle) {
        assert!((sigma - expect).abs() <= 1e-10, "index {i}");
    }
}

#[test]
fn evaluate_of_the_planted_weights_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let mut run = fixture_config("small.toml");
    run.task.dims = vec![16, 16];
    run.task.noise_std = 0.0;
    let config = write_config(tmp.path(), "noiseless.toml", &run);
    let (task, _, _) = generate_task(&run.task).unwrap();
    let model = ToyModel::new(vec![ModelLayer {
        weights: LayerWeights::dense(task.planted_weight()),
        bias: vec![0.0; 16],
    }])
    .unwrap();
    save_model(&model, &tmp.path().join("perfect")).unwrap();
    let loss = cmd_evaluate(&tmp.path().join("perfect"), &config).unwrap();
    assert_eq!(format!("{loss:.6}"), "0.000000");
}

#[test]
fn evaluate_dimension_mismatch_is_a_shape_error() {
    let tmp = tempfile::tempdir().unwrap();
    single_dense(&tmp.path().join("ckpt"), "layer0.weight", DenseMatrix::zeros(3, 3));
    // no bias entry: a format error before any shape check
    assert_eq!(
        cmd_evaluate(&tmp.path().join("ckpt"), &fixture("small.toml"))
            .unwrap_err()
            .exit_code(),
        2
    );

    let model = ToyModel::new(vec![ModelLayer {
        weights: LayerWeights::dense(DenseMatrix::zeros(3, 3)),
        bias: vec![0.0; 3],
    }])
    .unwrap();
    save_model(&model, &tmp.path().join("small")).unwrap();
    let err = cmd_evaluate(&tmp.path().join("small"), &fixture("small.toml")).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn report_merges_ratio_by_mode_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    let mut finals = Vec::new();
    // written in an order the report must undo
    for (ratio, mode) in [
        (0.4, Mode::Itp),
        (0.3, Mode::Losparse),
        (0.4, Mode::Losparse),
        (0.3, Mode::Itp),
    ] {
        let mut run = fixture_config("small.toml");
        run.mode = mode;
        run.budget.total_ratio = ratio;
        let name = format!("{mode}_{ratio}");
        let config = write_config(tmp.path(), &format!("{name}.toml"), &run);
        let dir = tmp.path().join(&name);
        let out = cmd_train(&config, &dir).unwrap();
        // evaluate reproduces the recorded validation loss exactly
        assert_eq!(
            cmd_evaluate(&dir.join(CHECKPOINT_DIR), &config).unwrap(),
            out.summary.val_loss
        );
        finals.push((name, out.trace.last().unwrap().clone()));
        dirs.push(dir);
    }
    let rows = cmd_report(&dirs, &tmp.path().join("report.csv")).unwrap();
    let order: Vec<(f64, Mode)> = rows.iter().map(|r| (r.total_ratio, r.mode)).collect();
    assert_eq!(
        order,
        [
            (0.3, Mode::Losparse),
            (0.3, Mode::Itp),
            (0.4, Mode::Losparse),
            (0.4, Mode::Itp)
        ]
    );
    for r in &rows {
        let (_, last) = finals.iter().find(|(n, _)| *n == r.run).unwrap();
        assert_eq!(r.final_loss, last.loss);
        assert_eq!(r.remaining_ratio, last.remaining_ratio);
        assert_eq!(r.final_step, last.step);
    }
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(!csv.contains('\r'));

    let single = cmd_report(&dirs[..1], &tmp.path().join("one.csv")).unwrap();
    assert_eq!(single.len(), 1);
}

fn losparse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_losparse"))
}

#[test]
fn binary_exit_codes_and_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let status = losparse()
        .args(["train", "--config"])
        .arg(fixture("small.toml"))
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());

    let eval = losparse()
        .args(["evaluate", "--checkpoint"])
        .arg(out.join(CHECKPOINT_DIR))
        .arg("--config")
        .arg(fixture("small.toml"))
        .output()
        .unwrap();
    assert!(eval.status.success());
    let printed = String::from_utf8(eval.stdout).unwrap();
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let val: f64 = summary
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(printed.trim(), format!("{val:.6}"));

    let bad = tmp.path().join("bad.toml");
    fs::write(
        &bad,
        fs::read_to_string(fixture("small.toml")).unwrap() + "\n[extra]\nx = 1\n",
    )
    .unwrap();
    let code = losparse()
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--output")
        .arg(tmp.path().join("x"))
        .output();
    assert_eq!(code.unwrap().status.code(), Some(2));

    let code = losparse()
        .args(["spectrum", "--input"])
        .arg(tmp.path().join("missing"))
        .arg("--output")
        .arg(tmp.path().join("s.csv"))
        .output();
    assert_eq!(code.unwrap().status.code(), Some(4));

    let code = losparse()
        .args(["decompose", "--input"])
        .arg(out.join(PRETRAINED_DIR))
        .arg("--output")
        .arg(tmp.path().join("d"))
        .args(["--total-ratio", "0.2", "--lowrank-ratio", "0.3"])
        .output();
    assert_eq!(code.unwrap().status.code(), Some(2));

    let report = losparse()
        .arg("report")
        .arg(&out)
        .arg("--output")
        .arg(tmp.path().join("report.csv"))
        .output()
        .unwrap();
    assert!(report.status.success());
    assert!(out.join(METRICS_FILE).exists());
}

//! Dataset persistence: TOML manifest plus little-endian f64 blocks for the
//! parameter and observation tables, and a CSV export for inspection.

use super::{Dataset, TaskError, TaskSpec};
use crate::numerics::matrix::Mat;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DATASET_MANIFEST: &str = "dataset.toml";
pub const DATASET_THETAS: &str = "thetas.f64le";
pub const DATASET_XS: &str = "xs.f64le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    task: TaskSpec,
    rows: usize,
    seed: u64,
    prior_predictive_std: f64,
    x_min: Vec<f64>,
    x_max: Vec<f64>,
}

fn write_block(path: &Path, m: &Mat) -> Result<(), TaskError> {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| TaskError::Io(e.to_string()))
}

fn read_block(path: &Path, rows: usize, cols: usize) -> Result<Mat, TaskError> {
    let bytes = fs::read(path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
    if bytes.len() != rows * cols * 8 {
        return Err(TaskError::Io(format!(
            "{}: {} bytes, expected {} ({}x{} f64)",
            path.display(),
            bytes.len(),
            rows * cols * 8,
            rows,
            cols
        )));
    }
    let mut flat = Vec::with_capacity(rows * cols);
    for chunk in bytes.chunks_exact(8) {
        let mut b = [0u8; 8];
        b.copy_from_slice(chunk);
        flat.push(f64::from_le_bytes(b));
    }
    Mat::from_shape_vec((rows, cols), flat).map_err(|e| TaskError::Io(e.to_string()))
}

/// Write manifest + raw blocks into `dir` (created if missing).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), TaskError> {
    fs::create_dir_all(dir).map_err(|e| TaskError::Io(e.to_string()))?;
    let manifest = DatasetManifest {
        task: ds.task.clone(),
        rows: ds.len(),
        seed: ds.seed,
        prior_predictive_std: ds.prior_predictive_std,
        x_min: ds.x_min.to_vec(),
        x_max: ds.x_max.to_vec(),
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| TaskError::Io(e.to_string()))?;
    fs::write(dir.join(DATASET_MANIFEST), text).map_err(|e| TaskError::Io(e.to_string()))?;
    write_block(&dir.join(DATASET_THETAS), &ds.thetas)?;
    write_block(&dir.join(DATASET_XS), &ds.xs)
}

/// Load a dataset written by [`save_dataset`]; round-trips bitwise.
pub fn load_dataset(dir: &Path) -> Result<Dataset, TaskError> {
    let path = dir.join(DATASET_MANIFEST);
    let text =
        fs::read_to_string(&path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
    let manifest: DatasetManifest = toml::from_str(&text)
        .map_err(|e| TaskError::Io(format!("{}: parse error: {e}", path.display())))?;
    let thetas = read_block(&dir.join(DATASET_THETAS), manifest.rows, manifest.task.theta_dim)?;
    let xs = read_block(&dir.join(DATASET_XS), manifest.rows, manifest.task.x_dim)?;
    Ok(Dataset {
        task: manifest.task,
        thetas,
        xs,
        seed: manifest.seed,
        x_min: Array1::from(manifest.x_min),
        x_max: Array1::from(manifest.x_max),
        prior_predictive_std: manifest.prior_predictive_std,
    })
}

/// Human-readable CSV: one row per pair, θ columns then x columns.
pub fn export_dataset_csv(ds: &Dataset, path: &Path) -> Result<(), TaskError> {
    let mut out = String::new();
    for j in 0..ds.task.theta_dim {
        out.push_str(&format!("theta_{j},"));
    }
    for j in 0..ds.task.x_dim {
        out.push_str(&format!("x_{j}"));
        out.push(if j + 1 == ds.task.x_dim { '\n' } else { ',' });
    }
    for i in 0..ds.len() {
        for j in 0..ds.task.theta_dim {
            out.push_str(&format!("{},", ds.thetas[[i, j]]));
        }
        for j in 0..ds.task.x_dim {
            out.push_str(&format!("{}", ds.xs[[i, j]]));
            out.push(if j + 1 == ds.task.x_dim { '\n' } else { ',' });
        }
    }
    fs::write(path, out).map_err(|e| TaskError::Io(e.to_string()))
}

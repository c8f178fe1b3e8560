//! Checkpoint persistence: a TOML manifest describing the architecture plus
//! one little-endian f64 block holding all parameters in declaration order.
//! Save → load round-trips bitwise.

use super::feature_map::{FeatureKind, FeatureMap};
use super::glm::GlmEstimator;
use super::mlp::MlpEstimator;
use super::{Estimator, EstimatorError};
use crate::numerics::matrix::Mat;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "checkpoint.toml";
pub const PARAMS_FILE: &str = "params.f64le";

/// A persistable estimator.
#[derive(Debug, Clone)]
pub enum EstimatorCheckpoint {
    Mlp(MlpEstimator),
    Glm(GlmEstimator),
}

impl EstimatorCheckpoint {
    pub fn as_estimator(&self) -> &dyn Estimator {
        match self {
            EstimatorCheckpoint::Mlp(e) => e,
            EstimatorCheckpoint::Glm(e) => e,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: String,
    theta_dim: usize,
    x_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_map: Option<FeatureMapManifest>,
    param_shapes: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureMapManifest {
    kind: FeatureKind,
    d_phi: usize,
    bandwidth: f64,
    seed: u64,
}

fn write_f64_block(path: &Path, arrays: &[Mat]) -> Result<(), EstimatorError> {
    let mut bytes = Vec::new();
    for a in arrays {
        for v in a.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| EstimatorError::Io(e.to_string()))
}

fn read_f64_block(path: &Path, shapes: &[[usize; 2]]) -> Result<Vec<Mat>, EstimatorError> {
    let bytes = fs::read(path).map_err(|e| EstimatorError::Io(e.to_string()))?;
    let total: usize = shapes.iter().map(|s| s[0] * s[1]).sum();
    if bytes.len() != total * 8 {
        return Err(EstimatorError::Io(format!(
            "parameter block is {} bytes, expected {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut out = Vec::with_capacity(shapes.len());
    let mut off = 0usize;
    for s in shapes {
        let n = s[0] * s[1];
        let mut flat = Vec::with_capacity(n);
        for i in 0..n {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[(off + i) * 8..(off + i + 1) * 8]);
            flat.push(f64::from_le_bytes(b));
        }
        off += n;
        out.push(
            Mat::from_shape_vec((s[0], s[1]), flat)
                .map_err(|e| EstimatorError::Io(e.to_string()))?,
        );
    }
    Ok(out)
}

/// Write manifest + parameter block into `dir` (created if missing).
pub fn save_estimator(ckpt: &EstimatorCheckpoint, dir: &Path) -> Result<(), EstimatorError> {
    fs::create_dir_all(dir).map_err(|e| EstimatorError::Io(e.to_string()))?;
    let est = ckpt.as_estimator();
    let params = est.params();
    let manifest = match ckpt {
        EstimatorCheckpoint::Mlp(m) => Manifest {
            kind: "mlp".into(),
            theta_dim: m.theta_dim(),
            x_dim: m.x_dim(),
            hidden: Some(m.layer_sizes[1..m.layer_sizes.len() - 1].to_vec()),
            feature_map: None,
            param_shapes: params.iter().map(|p| [p.nrows(), p.ncols()]).collect(),
        },
        EstimatorCheckpoint::Glm(g) => Manifest {
            kind: "glm".into(),
            theta_dim: g.theta_dim(),
            x_dim: g.x_dim(),
            hidden: None,
            feature_map: Some(FeatureMapManifest {
                kind: g.feature_map.kind,
                d_phi: g.feature_map.d_phi,
                bandwidth: g.feature_map.bandwidth,
                seed: g.feature_map.seed,
            }),
            param_shapes: params.iter().map(|p| [p.nrows(), p.ncols()]).collect(),
        },
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| EstimatorError::Io(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text).map_err(|e| EstimatorError::Io(e.to_string()))?;
    write_f64_block(&dir.join(PARAMS_FILE), &params)
}

/// Load a checkpoint written by [`save_estimator`].
pub fn load_estimator(dir: &Path) -> Result<EstimatorCheckpoint, EstimatorError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| EstimatorError::Io(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| EstimatorError::Io(format!("manifest parse: {e}")))?;
    let params = read_f64_block(&dir.join(PARAMS_FILE), &manifest.param_shapes)?;
    match manifest.kind.as_str() {
        "mlp" => {
            let hidden = manifest
                .hidden
                .ok_or_else(|| EstimatorError::Io("mlp manifest missing hidden".into()))?;
            let mut est = MlpEstimator::new(manifest.x_dim, &hidden, manifest.theta_dim, 0);
            est.set_params(&params);
            Ok(EstimatorCheckpoint::Mlp(est))
        }
        "glm" => {
            let fmm = manifest
                .feature_map
                .ok_or_else(|| EstimatorError::Io("glm manifest missing feature_map".into()))?;
            let fm = match fmm.kind {
                FeatureKind::Identity => FeatureMap::identity(manifest.x_dim),
                FeatureKind::IdentityAffine => FeatureMap::identity_affine(manifest.x_dim),
                FeatureKind::RandomFourier => {
                    FeatureMap::random_fourier(manifest.x_dim, fmm.d_phi, fmm.bandwidth, fmm.seed)
                }
            };
            let mut est = GlmEstimator::new(fm, manifest.theta_dim, 0);
            est.set_params(&params);
            Ok(EstimatorCheckpoint::Glm(est))
        }
        other => Err(EstimatorError::Io(format!("unknown estimator kind {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RandomStream;

    #[test]
    fn mlp_roundtrip_is_bitwise() {
        let est = MlpEstimator::new(6, &[20, 20], 3, 123);
        let dir = tempfile::tempdir().unwrap();
        save_estimator(&EstimatorCheckpoint::Mlp(est.clone()), dir.path()).unwrap();
        let loaded = load_estimator(dir.path()).unwrap();
        match loaded {
            EstimatorCheckpoint::Mlp(l) => assert_eq!(l.params(), est.params()),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn glm_roundtrip_is_bitwise() {
        let fm = FeatureMap::random_fourier(4, 9, 0.7, 55);
        let mut s = RandomStream::new(1);
        let w = s.normal_matrix(2, 9);
        let b = s.normal_matrix(2, 2);
        let sigma = b.t().dot(&b) + Mat::eye(2) * 0.3;
        let est = GlmEstimator::from_parts(fm, w, sigma).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_estimator(&EstimatorCheckpoint::Glm(est.clone()), dir.path()).unwrap();
        let loaded = load_estimator(dir.path()).unwrap();
        match loaded {
            EstimatorCheckpoint::Glm(l) => {
                assert_eq!(l.params(), est.params());
                assert_eq!(l.feature_map.freqs, est.feature_map.freqs);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn corrupt_manifest_reports_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), "kind = ???").unwrap();
        std::fs::write(dir.path().join(PARAMS_FILE), []).unwrap();
        match load_estimator(dir.path()) {
            Err(EstimatorError::Io(msg)) => assert!(msg.contains("parse"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

//! Fixed (non-learnable) feature maps φ: ℝ^{d_x} → ℝ^{d_φ} for the
//! generalized-linear tier. Every kind has a closed-form Jacobian.

use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::matrix::Mat;
use crate::numerics::rng::RandomStream;
use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// φ(x) = x.
    Identity,
    /// φ(x) = [x, 1]; the constant feature carries an intercept and has a
    /// zero Jacobian row, so it does not enter the Fisher information.
    IdentityAffine,
    /// Random Fourier features √(2/d_φ)·cos(ω_kᵀx + b_k) with frequencies
    /// ω_k ~ N(0, 1/bandwidth²) drawn once at a fixed seed.
    RandomFourier,
}

/// A concrete feature map with frozen frequencies/phases.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub x_dim: usize,
    pub d_phi: usize,
    pub bandwidth: f64,
    pub seed: u64,
    /// d_φ × d_x frequency matrix (random Fourier only, empty otherwise).
    pub freqs: Mat,
    /// 1 × d_φ phase row (random Fourier only).
    pub phases: Mat,
}

impl FeatureMap {
    pub fn identity(x_dim: usize) -> Self {
        Self {
            kind: FeatureKind::Identity,
            x_dim,
            d_phi: x_dim,
            bandwidth: 0.0,
            seed: 0,
            freqs: Mat::zeros((0, 0)),
            phases: Mat::zeros((0, 0)),
        }
    }

    pub fn identity_affine(x_dim: usize) -> Self {
        Self {
            kind: FeatureKind::IdentityAffine,
            x_dim,
            d_phi: x_dim + 1,
            bandwidth: 0.0,
            seed: 0,
            freqs: Mat::zeros((0, 0)),
            phases: Mat::zeros((0, 0)),
        }
    }

    pub fn random_fourier(x_dim: usize, d_phi: usize, bandwidth: f64, seed: u64) -> Self {
        assert!(bandwidth > 0.0);
        let mut stream = RandomStream::new(seed).substream_named("random_fourier");
        let freqs = stream.normal_matrix(d_phi, x_dim).mapv(|v| v / bandwidth);
        let mut phases = Mat::zeros((1, d_phi));
        for j in 0..d_phi {
            phases[[0, j]] = stream.uniform_in(0.0, 2.0 * std::f64::consts::PI);
        }
        Self {
            kind: FeatureKind::RandomFourier,
            x_dim,
            d_phi,
            bandwidth,
            seed,
            freqs,
            phases,
        }
    }

    /// Feature matrix for a batch of rows: (N × d_x) → (N × d_φ).
    pub fn features(&self, x: &Mat) -> Mat {
        debug_assert_eq!(x.ncols(), self.x_dim);
        match self.kind {
            FeatureKind::Identity => x.clone(),
            FeatureKind::IdentityAffine => {
                let n = x.nrows();
                let mut out = Mat::ones((n, self.d_phi));
                out.slice_mut(ndarray::s![.., 0..self.x_dim]).assign(x);
                out
            }
            FeatureKind::RandomFourier => {
                let scale = (2.0 / self.d_phi as f64).sqrt();
                let mut proj = x.dot(&self.freqs.t());
                for mut row in proj.rows_mut() {
                    for j in 0..self.d_phi {
                        row[j] = scale * (row[j] + self.phases[[0, j]]).cos();
                    }
                }
                proj
            }
        }
    }

    /// Closed-form Jacobian ∂φ/∂x at a single point: d_φ × d_x.
    pub fn jacobian(&self, x: &ArrayView1<f64>) -> Mat {
        match self.kind {
            FeatureKind::Identity => Mat::eye(self.x_dim),
            FeatureKind::IdentityAffine => {
                let mut j = Mat::zeros((self.d_phi, self.x_dim));
                for i in 0..self.x_dim {
                    j[[i, i]] = 1.0;
                }
                j
            }
            FeatureKind::RandomFourier => {
                let scale = (2.0 / self.d_phi as f64).sqrt();
                let mut j = Mat::zeros((self.d_phi, self.x_dim));
                for k in 0..self.d_phi {
                    let arg = self.freqs.row(k).dot(x) + self.phases[[0, k]];
                    let coef = -scale * arg.sin();
                    for c in 0..self.x_dim {
                        j[[k, c]] = coef * self.freqs[[k, c]];
                    }
                }
                j
            }
        }
    }

    /// Mean Jacobian outer product Ω(X) = (1/N) Σᵢ J_φ(xᵢ) J_φ(xᵢ)ᵀ.
    pub fn mean_jacobian_outer(&self, x: &Mat) -> Mat {
        let n = x.nrows() as f64;
        match self.kind {
            FeatureKind::Identity => Mat::eye(self.d_phi),
            FeatureKind::IdentityAffine => {
                let mut o = Mat::eye(self.d_phi);
                o[[self.d_phi - 1, self.d_phi - 1]] = 0.0;
                o
            }
            FeatureKind::RandomFourier => {
                // J J ᵀ = (2/d_φ)·D K D with K = ΩΩᵀ and D = diag(sin(ωᵀx+b)),
                // so the sum over points is K ⊙ (SᵀS) with S the sine matrix.
                let k = self.freqs.dot(&self.freqs.t());
                let mut s = x.dot(&self.freqs.t());
                for mut row in s.rows_mut() {
                    for j in 0..self.d_phi {
                        row[j] = (row[j] + self.phases[[0, j]]).sin();
                    }
                }
                let sts = s.t().dot(&s);
                (2.0 / self.d_phi as f64) * &(&k * &sts) / n
            }
        }
    }

    /// Taped feature computation (differentiable in x).
    pub fn build(&self, tape: &mut Tape, x: Var) -> Var {
        let n = tape.shape(x).0;
        match self.kind {
            FeatureKind::Identity => x,
            FeatureKind::IdentityAffine => {
                let padded = tape.pad_cols(x, 0, self.d_phi);
                let ones = tape.leaf(Mat::ones((n, 1)));
                let ones_pad = tape.pad_cols(ones, self.x_dim, self.d_phi);
                tape.add(padded, ones_pad)
            }
            FeatureKind::RandomFourier => {
                let ft = tape.leaf(self.freqs.t().to_owned());
                let proj = tape.matmul(x, ft);
                let ph = tape.leaf(self.phases.clone());
                let shifted = tape.add_row(proj, ph);
                let c = tape.cos(shifted);
                tape.scale(c, (2.0 / self.d_phi as f64).sqrt())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff::numeric_grad;
    use ndarray::array;

    #[test]
    fn affine_appends_constant_one() {
        let fm = FeatureMap::identity_affine(2);
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let f = fm.features(&x);
        assert_eq!(f, array![[1.0, 2.0, 1.0], [3.0, 4.0, 1.0]]);
    }

    #[test]
    fn rff_jacobian_matches_finite_differences() {
        let fm = FeatureMap::random_fourier(3, 8, 1.5, 42);
        let x = array![0.4, -0.2, 1.1];
        let j = fm.jacobian(&x.view());
        for k in 0..fm.d_phi {
            let xm = x.clone().insert_axis(ndarray::Axis(0)).to_owned();
            let num = numeric_grad(std::slice::from_ref(&xm), 1e-6, |vals| {
                fm.features(&vals[0])[[0, k]]
            });
            for c in 0..3 {
                assert!(
                    (j[[k, c]] - num[0][[0, c]]).abs() < 1e-7,
                    "J[{k},{c}]: {} vs {}",
                    j[[k, c]],
                    num[0][[0, c]]
                );
            }
        }
    }

    #[test]
    fn taped_features_match_value_level() {
        let fm = FeatureMap::random_fourier(2, 5, 0.8, 7);
        let x = array![[0.1, -0.4], [2.0, 0.3]];
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let f = fm.build(&mut tape, xv);
        let direct = fm.features(&x);
        assert!(tape
            .value(f)
            .iter()
            .zip(direct.iter())
            .all(|(a, b)| (a - b).abs() < 1e-14));

        let fm2 = FeatureMap::identity_affine(2);
        let f2 = fm2.build(&mut tape, xv);
        assert_eq!(*tape.value(f2), fm2.features(&x));
    }

    #[test]
    fn mean_jacobian_outer_matches_per_point_sum() {
        let fm = FeatureMap::random_fourier(3, 6, 1.2, 9);
        let mut s = RandomStream::new(3);
        let x = s.normal_matrix(11, 3);
        let omega = fm.mean_jacobian_outer(&x);
        let mut direct = Mat::zeros((6, 6));
        for row in x.rows() {
            let j = fm.jacobian(&row);
            direct = direct + j.dot(&j.t());
        }
        direct /= 11.0;
        for (a, b) in omega.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Generalized-linear Gaussian estimator q(θ|x) = N(θ; Wφ(x), Σ) with a
//! fixed feature map, plus its closed-form fits.
//!
//! The unregularized fit is generalized linear least squares; the
//! Fisher-regularized fit is its Tikhonov-shifted variant. Both serve as
//! convergence oracles for the gradient-descent training loops.

use super::feature_map::FeatureMap;
use super::gaussian::TapedPosterior;
use super::{Estimator, EstimatorError};
use crate::numerics::autodiff::{softplus_stable, Tape, Var};
use crate::numerics::matrix::{self, Mat};
use crate::numerics::NumericsError;

/// Floor on the Cholesky diagonal of Σ (eigenvalue floor ~1e-10).
pub const CHOL_FLOOR: f64 = 1e-5;

/// Inverse of x ↦ softplus(x), stable for small arguments.
fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp_m1()).ln() // ln(e^y − 1)
    }
}

/// Lower factor from the raw parameterization:
/// L = strict_lower(raw) + diag(softplus(diag(raw)) + CHOL_FLOOR).
fn chol_from_raw(raw: &Mat) -> Mat {
    let d = raw.nrows();
    let mut l = Mat::zeros((d, d));
    for i in 0..d {
        for j in 0..i {
            l[[i, j]] = raw[[i, j]];
        }
        l[[i, i]] = softplus_stable(raw[[i, i]]) + CHOL_FLOOR;
    }
    l
}

fn raw_from_chol(l: &Mat) -> Mat {
    let d = l.nrows();
    let mut raw = Mat::zeros((d, d));
    for i in 0..d {
        for j in 0..i {
            raw[[i, j]] = l[[i, j]];
        }
        raw[[i, i]] = softplus_inv((l[[i, i]] - CHOL_FLOOR).max(1e-12));
    }
    raw
}

#[derive(Debug, Clone)]
pub struct GlmEstimator {
    pub feature_map: FeatureMap,
    /// theta_dim × d_φ weight matrix.
    pub weight: Mat,
    /// Raw (unconstrained) covariance parameterization.
    chol_raw: Mat,
    /// Derived lower Cholesky factor of Σ.
    chol: Mat,
    /// Derived covariance Σ.
    cov: Mat,
}

impl GlmEstimator {
    /// From explicit weight and SPD covariance.
    pub fn from_parts(feature_map: FeatureMap, weight: Mat, sigma: Mat) -> Result<Self, EstimatorError> {
        let d = weight.nrows();
        if sigma.dim() != (d, d) || weight.ncols() != feature_map.d_phi {
            return Err(EstimatorError::DimensionMismatch(format!(
                "weight {:?} / sigma {:?} / d_phi {}",
                weight.dim(),
                sigma.dim(),
                feature_map.d_phi
            )));
        }
        let l = matrix::cholesky(&sigma.view())?;
        let chol_raw = raw_from_chol(&l);
        let chol = chol_from_raw(&chol_raw);
        let cov = chol.dot(&chol.t());
        Ok(Self {
            feature_map,
            weight,
            chol_raw,
            chol,
            cov,
        })
    }

    /// Fresh estimator with small random weights and unit covariance.
    pub fn new(feature_map: FeatureMap, theta_dim: usize, seed: u64) -> Self {
        let mut stream = crate::numerics::rng::RandomStream::new(seed).substream_named("glm_init");
        let std = (1.0 / feature_map.d_phi as f64).sqrt();
        let weight = stream
            .normal_matrix(theta_dim, feature_map.d_phi)
            .mapv(|v| v * std);
        Self::from_parts(feature_map, weight, Mat::eye(theta_dim)).expect("identity SPD")
    }

    pub fn sigma(&self) -> &Mat {
        &self.cov
    }

    pub fn sigma_chol(&self) -> &Mat {
        &self.chol
    }

    fn refresh_derived(&mut self) {
        self.chol = chol_from_raw(&self.chol_raw);
        self.cov = self.chol.dot(&self.chol.t());
    }
}

impl Estimator for GlmEstimator {
    fn x_dim(&self) -> usize {
        self.feature_map.x_dim
    }

    fn theta_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn params(&self) -> Vec<Mat> {
        vec![self.weight.clone(), self.chol_raw.clone()]
    }

    fn set_params(&mut self, params: &[Mat]) {
        assert_eq!(params.len(), 2);
        assert_eq!(params[0].dim(), self.weight.dim());
        assert_eq!(params[1].dim(), self.chol_raw.dim());
        self.weight = params[0].clone();
        self.chol_raw = params[1].clone();
        self.refresh_derived();
    }

    fn build(&self, tape: &mut Tape, params: &[Var], x: Var) -> TapedPosterior {
        assert_eq!(params.len(), 2);
        let phi = self.feature_map.build(tape, x);
        let wt = tape.transpose(params[0]);
        let mean = tape.matmul(phi, wt);
        let strict = tape.tril_strict(params[1]);
        let diag_raw = tape.diag_extract(params[1]);
        let sp = tape.softplus(diag_raw);
        let dpos = tape.add_const(sp, CHOL_FLOOR);
        let diag = tape.diag_embed(dpos);
        let chol = tape.add(strict, diag);
        TapedPosterior::Full { mean, chol }
    }
}

/// Global NPE minimizer for the generalized-linear class:
/// Ŵ = ΘᵀΦ (ΦᵀΦ)⁻¹ and Σ̂ = (1/N)·residualᵀ·residual, eigenvalue-floored.
pub fn glm_fit_closed_form(
    xs: &Mat,
    thetas: &Mat,
    fm: &FeatureMap,
) -> Result<GlmEstimator, EstimatorError> {
    glm_fit_fim_closed_form(xs, thetas, fm, 0.0)
}

/// Fisher-regularized closed-form fit.
///
/// Ŵ_FIM = ΘᵀΦ (ΦᵀΦ + 2β Ω)⁻¹ with Ω the mean Jacobian outer product of the
/// feature map; the covariance picks up the stationarity shift
/// Σ̂_FIM = Σ̂(Ŵ_FIM) + (2β/N)·Ŵ Ω Ŵᵀ. β = 0 reduces exactly to the
/// unregularized fit.
pub fn glm_fit_fim_closed_form(
    xs: &Mat,
    thetas: &Mat,
    fm: &FeatureMap,
    beta: f64,
) -> Result<GlmEstimator, EstimatorError> {
    assert!(beta >= 0.0);
    let n = xs.nrows();
    if n <= fm.d_phi {
        return Err(EstimatorError::SingularGram);
    }
    let phi = fm.features(xs); // N × d_φ
    let gram = phi.t().dot(&phi); // ΦᵀΦ  (= φ(X)φ(X)ᵀ in column convention)
    let cross = thetas.t().dot(&phi); // ΘᵀΦ  (d_θ × d_φ)
    let omega = fm.mean_jacobian_outer(xs);
    let shifted = &gram + &(&omega * (2.0 * beta));

    let wt = match matrix::solve_spd(&shifted.view(), &cross.t().view()) {
        Ok(w) => w,
        Err(NumericsError::NotPositiveDefinite { .. }) => {
            return Err(EstimatorError::SingularGram)
        }
        Err(e) => return Err(e.into()),
    };
    let weight = wt.t().to_owned(); // d_θ × d_φ

    let resid = phi.dot(&weight.t()) - thetas; // N × d_θ
    let mut sigma = resid.t().dot(&resid) / n as f64;
    if beta > 0.0 {
        let wow = weight.dot(&omega).dot(&weight.t());
        sigma = sigma + wow * (2.0 * beta / n as f64);
    }
    let d = sigma.nrows();
    sigma = sigma + Mat::eye(d) * 1e-10;
    GlmEstimator::from_parts(fm.clone(), weight, sigma)
}

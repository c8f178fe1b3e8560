//! Gaussian posterior values and their taped counterparts: log-density,
//! reparameterized sampling, and closed-form KL divergence.

use super::EstimatorError;
use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::matrix::{self, Mat};
use crate::numerics::rng::RandomStream;
use ndarray::{Array1, ArrayView1, Axis};

/// Variance floor for diagonal heads.
pub const VAR_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Covariance of a Gaussian posterior: per-dimension variances or a full SPD
/// matrix with its Cholesky factor.
#[derive(Debug, Clone)]
pub enum Covariance {
    Diagonal(Array1<f64>),
    Full { cov: Mat, chol: Mat },
}

/// One conditional posterior q(θ|x) evaluated at a fixed x.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Array1<f64>,
    pub cov: Covariance,
}

impl GaussianPosterior {
    /// Diagonal posterior; variances are floored at [`VAR_FLOOR`].
    pub fn diagonal(mean: Array1<f64>, variances: Array1<f64>) -> Self {
        let v = variances.mapv(|x| x.max(VAR_FLOOR));
        Self {
            mean,
            cov: Covariance::Diagonal(v),
        }
    }

    /// Full-covariance posterior; fails if `cov` is not SPD.
    pub fn full(mean: Array1<f64>, cov: Mat) -> Result<Self, EstimatorError> {
        let chol = matrix::cholesky(&cov.view())?;
        Ok(Self {
            mean,
            cov: Covariance::Full { cov, chol },
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dense covariance matrix (diagonal promoted).
    pub fn cov_matrix(&self) -> Mat {
        match &self.cov {
            Covariance::Diagonal(v) => Mat::from_diag(v),
            Covariance::Full { cov, .. } => cov.clone(),
        }
    }

    /// Exact multivariate normal log-density.
    pub fn log_prob(&self, theta: &ArrayView1<f64>) -> f64 {
        let d = self.dim() as f64;
        match &self.cov {
            Covariance::Diagonal(v) => {
                let mut quad = 0.0;
                let mut logdet = 0.0;
                for i in 0..self.dim() {
                    let z = theta[i] - self.mean[i];
                    quad += z * z / v[i];
                    logdet += v[i].ln();
                }
                -0.5 * (quad + logdet + d * LN_2PI)
            }
            Covariance::Full { chol, .. } => {
                let diff = (theta - &self.mean).insert_axis(Axis(1));
                let z = matrix::solve_lower(&chol.view(), &diff.view());
                let quad = z.mapv(|x| x * x).sum();
                let logdet = 2.0 * (0..self.dim()).map(|i| chol[[i, i]].ln()).sum::<f64>();
                -0.5 * (quad + logdet + d * LN_2PI)
            }
        }
    }

    /// n reparameterized draws θ = μ + L·ε (rows) from a deterministic stream.
    pub fn sample_reparam(&self, stream: &mut RandomStream, n: usize) -> Mat {
        let d = self.dim();
        let eps = stream.normal_matrix(n, d);
        self.transform_noise(&eps)
    }

    /// Apply the reparameterization map to given standard-normal rows.
    pub fn transform_noise(&self, eps: &Mat) -> Mat {
        let d = self.dim();
        let n = eps.nrows();
        match &self.cov {
            Covariance::Diagonal(v) => {
                let std = v.mapv(f64::sqrt);
                let mut out = eps.clone();
                for mut row in out.rows_mut() {
                    for i in 0..d {
                        row[i] = self.mean[i] + std[i] * row[i];
                    }
                }
                out
            }
            Covariance::Full { chol, .. } => {
                let mut out = eps.dot(&chol.t());
                for mut row in out.rows_mut() {
                    for i in 0..d {
                        row[i] += self.mean[i];
                    }
                }
                let _ = n;
                out
            }
        }
    }
}

/// Closed-form KL divergence between Gaussians; diagonal covariances are
/// promoted when the kinds differ.
pub fn kl_gaussian(p: &GaussianPosterior, q: &GaussianPosterior) -> f64 {
    assert_eq!(p.dim(), q.dim(), "kl_gaussian: dimension mismatch");
    let d = p.dim();
    match (&p.cov, &q.cov) {
        (Covariance::Diagonal(vp), Covariance::Diagonal(vq)) => {
            let mut acc = 0.0;
            for i in 0..d {
                let dm = p.mean[i] - q.mean[i];
                acc += (vq[i] / vp[i]).ln() + (vp[i] + dm * dm) / vq[i] - 1.0;
            }
            0.5 * acc
        }
        _ => {
            let sp = p.cov_matrix();
            let lq = match &q.cov {
                Covariance::Full { chol, .. } => chol.clone(),
                Covariance::Diagonal(v) => Mat::from_diag(&v.mapv(f64::sqrt)),
            };
            // tr(Σq⁻¹Σp) = ‖Lq⁻¹ Lp‖² with Σp = Lp Lpᵀ.
            let lp = match &p.cov {
                Covariance::Full { chol, .. } => chol.clone(),
                Covariance::Diagonal(v) => Mat::from_diag(&v.mapv(f64::sqrt)),
            };
            let m = matrix::solve_lower(&lq.view(), &lp.view());
            let trace = m.mapv(|x| x * x).sum();
            let diff = (&p.mean - &q.mean).insert_axis(Axis(1));
            let z = matrix::solve_lower(&lq.view(), &diff.view());
            let quad = z.mapv(|x| x * x).sum();
            let logdet_q = 2.0 * (0..d).map(|i| lq[[i, i]].ln()).sum::<f64>();
            let logdet_p = 2.0 * (0..d).map(|i| lp[[i, i]].ln()).sum::<f64>();
            let _ = sp;
            0.5 * (trace + quad - d as f64 + logdet_q - logdet_p)
        }
    }
}

/// Monte Carlo KL estimate (1/n) Σ [log p(θᵢ) − log q(θᵢ)] with θᵢ drawn from
/// p by reparameterization. Validates the estimator-agnostic path; the
/// closed form is exact for Gaussian heads.
pub fn kl_monte_carlo(
    p: &GaussianPosterior,
    q: &GaussianPosterior,
    stream: &mut RandomStream,
    n: usize,
) -> f64 {
    assert!(n >= 1);
    let draws = p.sample_reparam(stream, n);
    let mut acc = 0.0;
    for row in draws.rows() {
        acc += p.log_prob(&row) - q.log_prob(&row);
    }
    acc / n as f64
}

/// Gaussian head under construction on a tape.
///
/// `Diagonal` carries per-row mean and standard deviation (B×d); `Full`
/// carries per-row means plus one Cholesky factor shared by the whole batch
/// (the generalized-linear tier's covariance does not depend on x).
#[derive(Debug, Clone, Copy)]
pub enum TapedPosterior {
    Diagonal { mean: Var, std: Var },
    Full { mean: Var, chol: Var },
}

impl TapedPosterior {
    pub fn mean(&self) -> Var {
        match self {
            TapedPosterior::Diagonal { mean, .. } | TapedPosterior::Full { mean, .. } => *mean,
        }
    }
}

/// Extract row `row` of a taped head as a value-level posterior.
pub(crate) fn posterior_from_taped(
    tape: &Tape,
    head: &TapedPosterior,
    row: usize,
) -> Result<GaussianPosterior, EstimatorError> {
    match head {
        TapedPosterior::Diagonal { mean, std } => {
            let m = tape.value(*mean).row(row).to_owned();
            let s = tape.value(*std).row(row).to_owned();
            if !m.iter().all(|v| v.is_finite()) || !s.iter().all(|v| v.is_finite()) {
                return Err(EstimatorError::NonFiniteOutput);
            }
            Ok(GaussianPosterior::diagonal(m, s.mapv(|v| v * v)))
        }
        TapedPosterior::Full { mean, chol } => {
            let m = tape.value(*mean).row(row).to_owned();
            let l = tape.value(*chol).clone();
            if !m.iter().all(|v| v.is_finite()) || !l.iter().all(|v| v.is_finite()) {
                return Err(EstimatorError::NonFiniteOutput);
            }
            let cov = l.dot(&l.t());
            Ok(GaussianPosterior {
                mean: m,
                cov: Covariance::Full { cov, chol: l },
            })
        }
    }
}

/// Insert a value-level posterior as constant leaves (batch of one row).
pub fn taped_const_posterior(tape: &mut Tape, p: &GaussianPosterior) -> TapedPosterior {
    let mean = tape.leaf(p.mean.clone().insert_axis(Axis(0)).to_owned());
    match &p.cov {
        Covariance::Diagonal(v) => {
            let std = tape.leaf(v.mapv(f64::sqrt).insert_axis(Axis(0)).to_owned());
            TapedPosterior::Diagonal { mean, std }
        }
        Covariance::Full { chol, .. } => {
            let l = tape.leaf(chol.clone());
            TapedPosterior::Full { mean, chol: l }
        }
    }
}

/// Per-row log-density log q(θ_b | x_b) as a B×1 node. `theta` is B×d.
pub fn log_prob_taped(tape: &mut Tape, head: &TapedPosterior, theta: Var) -> Var {
    let (rows, d) = tape.shape(theta);
    match head {
        TapedPosterior::Diagonal { mean, std } => {
            let diff = tape.sub(theta, *mean);
            let inv_std = tape.recip(*std);
            let z = tape.mul(diff, inv_std);
            let zsq = tape.square(z);
            let quad = tape.sum_axis1(zsq);
            let ln_std = tape.ln(*std);
            let logdet_half = tape.sum_axis1(ln_std);
            let q_half = tape.scale(quad, -0.5);
            let lp = tape.sub(q_half, logdet_half);
            tape.add_const(lp, -0.5 * d as f64 * LN_2PI)
        }
        TapedPosterior::Full { mean, chol } => {
            let diff = tape.sub(theta, *mean);
            let diff_t = tape.transpose(diff);
            let z = tape.solve_lower(*chol, diff_t); // d×B
            let zsq = tape.square(z);
            let quad_cols = tape.sum_axis0(zsq); // 1×B
            let quad = tape.transpose(quad_cols); // B×1
            let q_half = tape.scale(quad, -0.5);
            let ldiag = tape.diag_extract(*chol);
            let ln_l = tape.ln(ldiag);
            let half_logdet = tape.sum_all(ln_l); // Σ ln L_kk = ½ logdet Σ
            let neg_half_logdet = tape.neg(half_logdet);
            let shifted = tape.add_scalar(q_half, neg_half_logdet);
            let _ = rows;
            tape.add_const(shifted, -0.5 * d as f64 * LN_2PI)
        }
    }
}

/// One reparameterized draw per batch row: θ_b = μ_b + L ε_b with `eps` B×d.
pub fn sample_one_per_row_taped(tape: &mut Tape, head: &TapedPosterior, eps: Var) -> Var {
    match head {
        TapedPosterior::Diagonal { mean, std } => {
            let scaled = tape.mul(*std, eps);
            tape.add(*mean, scaled)
        }
        TapedPosterior::Full { mean, chol } => {
            let lt = tape.transpose(*chol);
            let scaled = tape.matmul(eps, lt);
            tape.add(*mean, scaled)
        }
    }
}

/// n draws from a single-row head (B = 1): returns n×d.
pub fn sample_many_taped(tape: &mut Tape, head: &TapedPosterior, eps: Var) -> Var {
    let n = tape.shape(eps).0;
    match head {
        TapedPosterior::Diagonal { mean, std } => {
            let mean_n = tape.broadcast_rows(*mean, n);
            let std_n = tape.broadcast_rows(*std, n);
            let scaled = tape.mul(std_n, eps);
            tape.add(mean_n, scaled)
        }
        TapedPosterior::Full { mean, chol } => {
            let mean_n = tape.broadcast_rows(*mean, n);
            let lt = tape.transpose(*chol);
            let scaled = tape.matmul(eps, lt);
            tape.add(mean_n, scaled)
        }
    }
}

/// Per-row closed-form KL(p_b ‖ q_b) as B×1. Heads must share the same kind
/// and batch size; mixing diagonal and full heads is a caller bug.
pub fn kl_taped(tape: &mut Tape, p: &TapedPosterior, q: &TapedPosterior) -> Var {
    match (p, q) {
        (
            TapedPosterior::Diagonal { mean: mp, std: sp },
            TapedPosterior::Diagonal { mean: mq, std: sq },
        ) => {
            // Σ_k ln(σq/σp) + (σp² + Δμ²)/(2σq²) − ½
            let d = tape.shape(*mp).1;
            let ln_q = tape.ln(*sq);
            let ln_p = tape.ln(*sp);
            let ln_ratio = tape.sub(ln_q, ln_p);
            let dm = tape.sub(*mp, *mq);
            let dm_sq = tape.square(dm);
            let vp = tape.square(*sp);
            let num = tape.add(vp, dm_sq);
            let vq = tape.square(*sq);
            let inv_vq = tape.recip(vq);
            let frac = tape.mul(num, inv_vq);
            let half_frac = tape.scale(frac, 0.5);
            let terms = tape.add(ln_ratio, half_frac);
            let rows = tape.sum_axis1(terms);
            tape.add_const(rows, -0.5 * d as f64)
        }
        (
            TapedPosterior::Full { mean: mp, chol: lp },
            TapedPosterior::Full { mean: mq, chol: lq },
        ) => {
            let d = tape.shape(*mp).1;
            // tr(Σq⁻¹Σp) = ‖Lq⁻¹Lp‖²_F, shared across rows.
            let m = tape.solve_lower(*lq, *lp);
            let trace = tape.sum_sq(m);
            // Row-wise Mahalanobis term under Σq.
            let dm = tape.sub(*mp, *mq);
            let dm_t = tape.transpose(dm);
            let z = tape.solve_lower(*lq, dm_t);
            let zsq = tape.square(z);
            let quad_cols = tape.sum_axis0(zsq);
            let quad = tape.transpose(quad_cols); // B×1
            let lq_diag = tape.diag_extract(*lq);
            let lp_diag = tape.diag_extract(*lp);
            let ln_q = tape.ln(lq_diag);
            let ln_p = tape.ln(lp_diag);
            let ld_q = tape.sum_all(ln_q);
            let ld_p = tape.sum_all(ln_p);
            let ld_diff = tape.sub(ld_q, ld_p); // = ½(logdetΣq − logdetΣp)
            let tr_term = tape.add_scalar(quad, trace);
            let half = tape.scale(tr_term, 0.5);
            let shifted = tape.add_scalar(half, ld_diff);
            tape.add_const(shifted, -0.5 * d as f64)
        }
        _ => panic!("kl_taped: mixed diagonal/full heads"),
    }
}

//! Closed-form ground truth for the linear-Gaussian simulator.
//!
//! Prior N(μ₀, Σ₀) and likelihood N(x; Aθ + b, Λ) give a Gaussian posterior
//! whose mean is affine in x and whose covariance is constant, so the exact
//! Fisher information, the KL under any input perturbation, and the optimal
//! L2-constrained attack with its ½·λ_max·ε² bound are all available in
//! closed form. Models accept arbitrary A and Λ so property tests can
//! randomize; the benchmark task builds its oracle from the frozen diagonal
//! map.

use crate::estimators::{Estimator, GaussianPosterior, TapedPosterior};
use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::matrix::{self, Mat, TopEigen};
use crate::numerics::NumericsError;
use ndarray::{Array1, ArrayView1, Axis};

#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    /// Observation map, x_dim × theta_dim.
    pub a: Mat,
    /// Observation offset, x_dim.
    pub b: Array1<f64>,
    /// Observation noise covariance Λ (SPD, x_dim × x_dim).
    pub noise_cov: Mat,
    /// Prior mean, theta_dim.
    pub prior_mean: Array1<f64>,
    /// Prior covariance Σ₀ (SPD).
    pub prior_cov: Mat,
}

impl LinearGaussianModel {
    pub fn theta_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn x_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Posterior covariance in information form: (Σ₀⁻¹ + AᵀΛ⁻¹A)⁻¹.
    pub fn posterior_cov(&self) -> Result<Mat, NumericsError> {
        let prior_inv = matrix::inv_spd(&self.prior_cov.view())?;
        let lam_inv_a = matrix::solve_spd(&self.noise_cov.view(), &self.a.view())?;
        let info = &prior_inv + &self.a.t().dot(&lam_inv_a);
        matrix::inv_spd(&info.view())
    }

    /// Exact posterior at `x`, information form.
    pub fn posterior(&self, x: &ArrayView1<f64>) -> Result<GaussianPosterior, NumericsError> {
        let cov = self.posterior_cov()?;
        let resid = (x - &self.b).insert_axis(Axis(1));
        let lam_inv_resid = matrix::solve_spd(&self.noise_cov.view(), &resid.view())?;
        let prior_inv_mu = matrix::solve_spd(
            &self.prior_cov.view(),
            &self.prior_mean.clone().insert_axis(Axis(1)).view(),
        )?;
        let rhs = &self.a.t().dot(&lam_inv_resid) + &prior_inv_mu;
        let mean = cov.dot(&rhs).index_axis(Axis(1), 0).to_owned();
        Ok(GaussianPosterior::full(mean, cov).expect("posterior covariance SPD"))
    }

    /// Exact posterior via the data-space (Woodbury) form:
    /// μ = μ₀ + Σ₀Aᵀ(AΣ₀Aᵀ+Λ)⁻¹(x − Aμ₀ − b), Σ = Σ₀ − Σ₀Aᵀ(AΣ₀Aᵀ+Λ)⁻¹AΣ₀.
    pub fn posterior_data_form(
        &self,
        x: &ArrayView1<f64>,
    ) -> Result<GaussianPosterior, NumericsError> {
        let a_s0 = self.a.dot(&self.prior_cov); // x_dim × theta_dim
        let s = &a_s0.dot(&self.a.t()) + &self.noise_cov;
        let resid = (&(x - &self.a.dot(&self.prior_mean)) - &self.b).insert_axis(Axis(1));
        let s_inv_resid = matrix::solve_spd(&s.view(), &resid.view())?;
        let mean = &self.prior_mean + &a_s0.t().dot(&s_inv_resid).index_axis(Axis(1), 0);
        let s_inv_as0 = matrix::solve_spd(&s.view(), &a_s0.view())?;
        let cov = &self.prior_cov - &a_s0.t().dot(&s_inv_as0);
        Ok(GaussianPosterior::full(mean.to_owned(), cov).expect("posterior covariance SPD"))
    }

    /// Fisher information of the posterior map with respect to x:
    /// I_x = Λ⁻¹ A Σ_p Aᵀ Λ⁻¹ (constant in x).
    pub fn fim(&self) -> Result<Mat, NumericsError> {
        let cov = self.posterior_cov()?;
        let lam_inv_a = matrix::solve_spd(&self.noise_cov.view(), &self.a.view())?;
        Ok(lam_inv_a.dot(&cov).dot(&lam_inv_a.t()))
    }

    /// KL(posterior at x ‖ posterior at x+δ) = ½ δᵀ I_x δ, exact for this
    /// model and independent of x.
    pub fn kl_under_perturbation(&self, delta: &ArrayView1<f64>) -> Result<f64, NumericsError> {
        let fim = self.fim()?;
        Ok(0.5 * delta.dot(&fim.dot(delta)))
    }

    /// Optimal L2 attack of radius ε: δ* = ε·v_max(I_x), with the exact
    /// objective value ½·λ_max·ε². Degeneracy of the top eigenvalue is
    /// surfaced through [`OptimalAttack::degenerate`].
    pub fn optimal_attack(&self, eps: f64) -> Result<OptimalAttack, NumericsError> {
        assert!(eps > 0.0);
        let fim = self.fim()?;
        let TopEigen {
            value,
            vector,
            degenerate,
        } = matrix::top_eigenpair(&fim.view(), 1e-10, 100_000)?;
        Ok(OptimalAttack {
            delta: &vector * eps,
            kl_bound: 0.5 * value * eps * eps,
            lambda_max: value,
            direction: vector,
            degenerate,
        })
    }

    /// The posterior map as an estimator: mean affine in x, covariance
    /// constant. Attacking this estimator must recover the analytic optimum.
    pub fn estimator(&self) -> Result<AnalyticLgEstimator, NumericsError> {
        let cov = self.posterior_cov()?;
        // μ(x) = Σ_p AᵀΛ⁻¹ (x − b) + Σ_p Σ₀⁻¹ μ₀ = W x + c.
        let lam_inv_a = matrix::solve_spd(&self.noise_cov.view(), &self.a.view())?;
        let w = cov.dot(&lam_inv_a.t()); // theta_dim × x_dim
        let prior_inv_mu = matrix::solve_spd(
            &self.prior_cov.view(),
            &self.prior_mean.clone().insert_axis(Axis(1)).view(),
        )?;
        let c = &cov.dot(&prior_inv_mu).index_axis(Axis(1), 0) - &w.dot(&self.b);
        let chol = matrix::cholesky(&cov.view())?;
        Ok(AnalyticLgEstimator {
            weight: w,
            bias: c.to_owned(),
            cov,
            chol,
        })
    }
}

#[derive(Debug, Clone)]
pub struct OptimalAttack {
    pub delta: Array1<f64>,
    pub kl_bound: f64,
    pub lambda_max: f64,
    pub direction: Array1<f64>,
    pub degenerate: bool,
}

/// The exact linear-Gaussian posterior map packaged as an [`Estimator`].
/// It has no learnable parameters.
#[derive(Debug, Clone)]
pub struct AnalyticLgEstimator {
    weight: Mat,
    bias: Array1<f64>,
    cov: Mat,
    chol: Mat,
}

impl AnalyticLgEstimator {
    pub fn posterior_cov(&self) -> &Mat {
        &self.cov
    }
}

impl Estimator for AnalyticLgEstimator {
    fn x_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn theta_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn params(&self) -> Vec<Mat> {
        Vec::new()
    }

    fn set_params(&mut self, params: &[Mat]) {
        assert!(params.is_empty(), "analytic estimator has no parameters");
    }

    fn build(&self, tape: &mut Tape, params: &[Var], x: Var) -> TapedPosterior {
        assert!(params.is_empty());
        let wt = tape.leaf(self.weight.t().to_owned());
        let prod = tape.matmul(x, wt);
        let bias = tape.leaf(self.bias.clone().insert_axis(Axis(0)).to_owned());
        let mean = tape.add_row(prod, bias);
        let chol = tape.leaf(self.chol.clone());
        TapedPosterior::Full { mean, chol }
    }
}

/// Deterministic random model for property tests: dense A, SPD Λ and Σ₀ with
/// unit-scale eigenvalues.
pub fn random_model(
    theta_dim: usize,
    x_dim: usize,
    stream: &mut crate::numerics::rng::RandomStream,
) -> LinearGaussianModel {
    let a = stream.normal_matrix(x_dim, theta_dim);
    let b = stream.standard_normal(x_dim);
    let ln = stream.normal_matrix(x_dim, x_dim);
    let noise_cov = ln.t().dot(&ln) / x_dim as f64 + Mat::eye(x_dim) * 0.3;
    let sp = stream.normal_matrix(theta_dim, theta_dim);
    let prior_cov = sp.t().dot(&sp) / theta_dim as f64 + Mat::eye(theta_dim) * 0.3;
    let prior_mean = stream.standard_normal(theta_dim);
    LinearGaussianModel {
        a,
        b,
        noise_cov,
        prior_mean,
        prior_cov,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::kl_gaussian;
    use crate::numerics::rng::RandomStream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn scalar_model() -> LinearGaussianModel {
        LinearGaussianModel {
            a: array![[1.0]],
            b: array![0.0],
            noise_cov: array![[1.0]],
            prior_mean: array![0.0],
            prior_cov: array![[1.0]],
        }
    }

    fn diag21_model() -> LinearGaussianModel {
        LinearGaussianModel {
            a: array![[2.0, 0.0], [0.0, 1.0]],
            b: array![0.0, 0.0],
            noise_cov: Mat::eye(2),
            prior_mean: array![0.0, 0.0],
            prior_cov: Mat::eye(2),
        }
    }

    #[test]
    fn scalar_conjugate_update() {
        let m = scalar_model();
        let p = m.posterior(&array![2.0].view()).unwrap();
        assert_abs_diff_eq!(p.mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.cov_matrix()[[0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_posterior_covariance() {
        let m = diag21_model();
        let cov = m.posterior_cov().unwrap();
        assert_abs_diff_eq!(cov[[0, 0]], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[[1, 1]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[[0, 1]], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn information_and_data_forms_agree() {
        let mut s = RandomStream::new(6);
        for _ in 0..20 {
            let m = random_model(3, 5, &mut s);
            let x = s.standard_normal(5);
            let p1 = m.posterior(&x.view()).unwrap();
            let p2 = m.posterior_data_form(&x.view()).unwrap();
            for (a, b) in p1.mean.iter().zip(p2.mean.iter()) {
                assert!((a - b).abs() <= 1e-10, "mean {a} vs {b}");
            }
            for (a, b) in p1.cov_matrix().iter().zip(p2.cov_matrix().iter()) {
                assert!((a - b).abs() <= 1e-10, "cov {a} vs {b}");
            }
        }
    }

    #[test]
    fn fim_values() {
        let m = scalar_model();
        assert_abs_diff_eq!(m.fim().unwrap()[[0, 0]], 0.5, epsilon = 1e-12);
        let m2 = diag21_model();
        let f = m2.fim().unwrap();
        assert_abs_diff_eq!(f[[0, 0]], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(f[[1, 1]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kl_under_perturbation_values_and_two_route_identity() {
        let m = scalar_model();
        assert_abs_diff_eq!(
            m.kl_under_perturbation(&array![0.0].view()).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            m.kl_under_perturbation(&array![2.0].view()).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let mut s = RandomStream::new(7);
        for _ in 0..10 {
            let model = random_model(2, 4, &mut s);
            let x = s.standard_normal(4);
            let delta = s.standard_normal(4);
            let q1 = model.posterior(&x.view()).unwrap();
            let q2 = model.posterior(&(&x + &delta).view()).unwrap();
            let via_kl = kl_gaussian(&q1, &q2);
            let via_fim = model.kl_under_perturbation(&delta.view()).unwrap();
            assert!(
                (via_kl - via_fim).abs() <= 1e-10 * via_fim.max(1.0),
                "{via_kl} vs {via_fim}"
            );
        }
    }

    #[test]
    fn optimal_attack_diag_case() {
        let m = diag21_model();
        let att = m.optimal_attack(1.0).unwrap();
        assert_abs_diff_eq!(att.kl_bound, 0.4, epsilon = 1e-10);
        assert_abs_diff_eq!(att.delta[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(att.delta[1], 0.0, epsilon = 1e-6);
        // Rayleigh equality at the top eigenvector.
        let kl = m.kl_under_perturbation(&att.delta.view()).unwrap();
        assert_abs_diff_eq!(kl, att.kl_bound, epsilon = 1e-12);
    }

    #[test]
    fn isotropic_fim_reports_degenerate_direction() {
        let m = LinearGaussianModel {
            a: Mat::eye(2),
            b: array![0.0, 0.0],
            noise_cov: Mat::eye(2),
            prior_mean: array![0.0, 0.0],
            prior_cov: Mat::eye(2),
        };
        let att = m.optimal_attack(2.0).unwrap();
        assert!(att.degenerate);
        assert_abs_diff_eq!(att.kl_bound, 0.5 * 0.5 * 4.0, epsilon = 1e-10);
    }

    #[test]
    fn random_feasible_deltas_respect_bound() {
        let mut s = RandomStream::new(13);
        for _ in 0..5 {
            let dim_x = 2 + s.below(8) as usize;
            let dim_t = 1 + s.below(dim_x as u64) as usize;
            let m = random_model(dim_t, dim_x, &mut s);
            let eps = 0.7;
            let att = m.optimal_attack(eps).unwrap();
            for _ in 0..200 {
                let delta = s.on_sphere(dim_x, eps);
                let kl = m.kl_under_perturbation(&delta.view()).unwrap();
                assert!(
                    kl <= att.kl_bound * (1.0 + 1e-9),
                    "kl {kl} > {}",
                    att.kl_bound
                );
            }
        }
    }

    #[test]
    fn analytic_estimator_predicts_the_posterior() {
        let mut s = RandomStream::new(20);
        let m = random_model(3, 4, &mut s);
        let est = m.estimator().unwrap();
        for _ in 0..5 {
            let x = s.standard_normal(4);
            let direct = m.posterior(&x.view()).unwrap();
            let via_est = est.predict(&x.view()).unwrap();
            for (a, b) in direct.mean.iter().zip(via_est.mean.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in direct.cov_matrix().iter().zip(via_est.cov_matrix().iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn analytic_estimator_fim_matches_model_fim() {
        let mut s = RandomStream::new(21);
        let m = random_model(2, 3, &mut s);
        let est = m.estimator().unwrap();
        let x = s.standard_normal(3);
        let from_est = crate::estimators::fim_exact(&est, &x.view());
        let from_model = m.fim().unwrap();
        for (a, b) in from_est.iter().zip(from_model.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

//! Input gradients and Fisher information of the conditional density.
//!
//! `fim_exact` composes head Jacobians with the Gaussian-parameter Fisher
//! information I_η = diag(1/σ², 2/σ²); `fim_trace_mc` is the Monte Carlo
//! trace estimator E_q‖∇_x log q(θ|x)‖², whose taped form is the training
//! penalty. The sampling is reparameterized, so the penalty's parameter
//! gradient includes the dependence of the sampling distribution itself.

use super::gaussian::{log_prob_taped, sample_one_per_row_taped, TapedPosterior};
use super::Estimator;
use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::matrix::{self, Mat};
use crate::numerics::rng::RandomStream;
use ndarray::{Array1, ArrayView1};

fn tile_row(x: &ArrayView1<f64>, rows: usize) -> Mat {
    let d = x.len();
    Mat::from_shape_fn((rows, d), |(_, j)| x[j])
}

/// ∇_x log q(θ|x) for a single (x, θ) pair.
pub fn grad_logprob_wrt_x<E: Estimator + ?Sized>(
    est: &E,
    x: &ArrayView1<f64>,
    theta: &ArrayView1<f64>,
) -> Array1<f64> {
    let rows = grad_logprob_rows(est, x, &tile_row(theta, 1));
    rows.row(0).to_owned()
}

/// Batched ∇_x log q(θ_b|x) for a fixed observation and many θ rows.
/// Returns one gradient row per θ row.
pub fn grad_logprob_rows<E: Estimator + ?Sized>(
    est: &E,
    x: &ArrayView1<f64>,
    thetas: &Mat,
) -> Mat {
    let n = thetas.nrows();
    let mut tape = Tape::new();
    let xv = tape.leaf(tile_row(x, n));
    let head = est.build_const(&mut tape, xv);
    let th = tape.leaf(thetas.clone());
    let lp = log_prob_taped(&mut tape, &head, th);
    let total = tape.sum_all(lp);
    let g = tape.grad(total, &[xv])[0];
    tape.value(g).clone()
}

/// Exact Fisher information matrix of the head with respect to x.
///
/// Diagonal heads: I_x = Σ_k [∇μ_k ∇μ_kᵀ + 2 ∇σ_k ∇σ_kᵀ] / σ_k².
/// Full heads (covariance constant in x): I_x = J_μᵀ Σ⁻¹ J_μ.
pub fn fim_exact<E: Estimator + ?Sized>(est: &E, x: &ArrayView1<f64>) -> Mat {
    let d_x = est.x_dim();
    let d_t = est.theta_dim();
    let mut tape = Tape::new();
    let xv = tape.leaf(tile_row(x, 1));
    let head = est.build_const(&mut tape, xv);
    match head {
        TapedPosterior::Diagonal { mean, std } => {
            let mut fim = Mat::zeros((d_x, d_x));
            for k in 0..d_t {
                let mk = tape.slice_cols(mean, k, k + 1);
                let mks = tape.sum_all(mk);
                let gm = tape.grad(mks, &[xv])[0];
                let sk = tape.slice_cols(std, k, k + 1);
                let sks = tape.sum_all(sk);
                let gs = tape.grad(sks, &[xv])[0];
                let sigma = tape.value(sk)[[0, 0]];
                let jm = tape.value(gm).row(0).to_owned();
                let js = tape.value(gs).row(0).to_owned();
                let w = 1.0 / (sigma * sigma);
                fim = fim
                    + matrix::outer(&jm.view(), &jm.view()) * w
                    + matrix::outer(&js.view(), &js.view()) * (2.0 * w);
            }
            fim
        }
        TapedPosterior::Full { mean, chol } => {
            let mut jac = Mat::zeros((d_t, d_x));
            for k in 0..d_t {
                let mk = tape.slice_cols(mean, k, k + 1);
                let mks = tape.sum_all(mk);
                let g = tape.grad(mks, &[xv])[0];
                jac.row_mut(k).assign(&tape.value(g).row(0));
            }
            let l = tape.value(chol).clone();
            let m = matrix::solve_lower(&l.view(), &jac.view());
            m.t().dot(&m)
        }
    }
}

/// Per-sample values ‖∇_x log q(θᵢ|x)‖² with θᵢ ~ q(·|x); their mean is the
/// Monte Carlo FIM trace and their spread gives its standard error.
pub fn fim_trace_samples<E: Estimator + ?Sized>(
    est: &E,
    x: &ArrayView1<f64>,
    stream: &mut RandomStream,
    n: usize,
) -> Array1<f64> {
    let posterior = est.predict(x).expect("finite head");
    let d_t = est.theta_dim();
    let mut out = Array1::zeros(n);
    let chunk = 1024usize;
    let mut done = 0;
    while done < n {
        let c = chunk.min(n - done);
        let eps = stream.normal_matrix(c, d_t);
        let thetas = posterior.transform_noise(&eps);
        let grads = grad_logprob_rows(est, x, &thetas);
        for i in 0..c {
            let row = grads.row(i);
            out[done + i] = row.dot(&row);
        }
        done += c;
    }
    out
}

/// Monte Carlo estimate of tr(I_x): the mean of [`fim_trace_samples`].
///
/// The differentiable (with respect to estimator parameters) form used in
/// training is [`fim_trace_penalty_taped`].
pub fn fim_trace_mc<E: Estimator + ?Sized>(
    est: &E,
    x: &ArrayView1<f64>,
    stream: &mut RandomStream,
    n: usize,
) -> f64 {
    assert!(n >= 1);
    fim_trace_samples(est, x, stream, n).sum() / n as f64
}

/// Taped batch-mean Monte Carlo FIM trace:
/// r = (1/B) Σ_b (1/N) Σ_i ‖∇_x log q(θ_ib|x_b)‖².
///
/// `noises` holds N standard-normal matrices of shape B×theta_dim. The
/// returned scalar differentiates with respect to `params`: samples are
/// reparameterized through a second forward pass whose input is constant, so
/// the inner x-gradient does not leak into the sampling path, while the
/// parameter dependence of both passes is kept.
pub fn fim_trace_penalty_taped<E: Estimator + ?Sized>(
    tape: &mut Tape,
    est: &E,
    params: &[Var],
    x_batch: &Mat,
    noises: &[Mat],
) -> Var {
    let b = x_batch.nrows();
    let n = noises.len();
    assert!(n >= 1);

    let x_sample = tape.leaf(x_batch.clone());
    let head_sample = est.build(tape, params, x_sample);
    let x_var = tape.leaf(x_batch.clone());
    let head_var = est.build(tape, params, x_var);

    let mut acc: Option<Var> = None;
    for eps in noises {
        debug_assert_eq!(eps.dim(), (b, est.theta_dim()));
        let eps_v = tape.leaf(eps.clone());
        let theta = sample_one_per_row_taped(tape, &head_sample, eps_v);
        let lp = log_prob_taped(tape, &head_var, theta);
        let lp_sum = tape.sum_all(lp);
        let gx = tape.grad(lp_sum, &[x_var])[0];
        let sq = tape.sum_sq(gx);
        acc = Some(match acc {
            Some(a) => tape.add(a, sq),
            None => sq,
        });
    }
    tape.scale(acc.expect("n >= 1"), 1.0 / (b * n) as f64)
}

/// Mean of per-point exact FIM traces over a batch (reference value for the
/// Monte Carlo penalty).
pub fn mean_exact_trace<E: Estimator + ?Sized>(est: &E, x_batch: &Mat) -> f64 {
    let mut acc = 0.0;
    for row in x_batch.rows() {
        let f = fim_exact(est, &row);
        acc += (0..f.nrows()).map(|i| f[[i, i]]).sum::<f64>();
    }
    acc / x_batch.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::feature_map::FeatureMap;
    use crate::estimators::glm::GlmEstimator;
    use crate::estimators::mlp::MlpEstimator;
    use crate::numerics::finite_diff::{numeric_grad, rel_err};
    use crate::numerics::matrix::top_eigenpair;
    use ndarray::{array, Axis};

    #[test]
    fn glm_identity_scalar_gradient() {
        // q(θ|x) = N(θ; x, 1): ∂/∂x log q = θ − x.
        let fm = FeatureMap::identity(1);
        let est = GlmEstimator::from_parts(fm, array![[1.0]], array![[1.0]]).unwrap();
        let g = grad_logprob_wrt_x(&est, &array![0.0].view(), &array![2.0].view());
        assert!((g[0] - 2.0).abs() < 1e-6, "grad {}", g[0]);
    }

    #[test]
    fn gradient_matches_finite_differences_for_both_tiers() {
        let mut s = RandomStream::new(31);
        let mlp = MlpEstimator::new(4, &[12, 12], 3, 5);
        let fm = FeatureMap::random_fourier(4, 9, 1.3, 2);
        let w = s.normal_matrix(3, 9);
        let sigma = {
            let b = s.normal_matrix(3, 3);
            b.t().dot(&b) + Mat::eye(3) * 0.5
        };
        let glm = GlmEstimator::from_parts(fm, w, sigma).unwrap();

        for trial in 0..25 {
            let x = s.standard_normal(4);
            let theta = s.standard_normal(3);
            for (name, g) in [
                ("mlp", grad_logprob_wrt_x(&mlp, &x.view(), &theta.view())),
                ("glm", grad_logprob_wrt_x(&glm, &x.view(), &theta.view())),
            ] {
                let xm = x.clone().insert_axis(Axis(0)).to_owned();
                let num = numeric_grad(std::slice::from_ref(&xm), 1e-5, |vals| {
                    let p = if name == "mlp" {
                        mlp.predict(&vals[0].row(0)).unwrap()
                    } else {
                        glm.predict(&vals[0].row(0)).unwrap()
                    };
                    p.log_prob(&theta.view())
                });
                for c in 0..4 {
                    let e = rel_err(g[c], num[0][[0, c]], 1e-8);
                    assert!(e <= 1e-5, "{name} trial {trial} dim {c}: rel err {e}");
                }
            }
        }
    }

    #[test]
    fn gradient_at_mean_is_pure_sigma_term() {
        // At θ = μ(x) the mean-head term vanishes:
        // ∇_x log q = −Σ_k ∇σ_k/σ_k.
        let est = MlpEstimator::new(3, &[8], 2, 11);
        let x = array![0.3, -0.5, 0.9];
        let p = est.predict(&x.view()).unwrap();
        let g = grad_logprob_wrt_x(&est, &x.view(), &p.mean.view());

        // Reference via finite differences of −Σ ln σ(x).
        let xm = x.clone().insert_axis(Axis(0)).to_owned();
        let num = numeric_grad(std::slice::from_ref(&xm), 1e-6, |vals| {
            let p = est.predict(&vals[0].row(0)).unwrap();
            match &p.cov {
                crate::estimators::Covariance::Diagonal(v) => {
                    -0.5 * v.mapv(f64::ln).sum()
                }
                _ => unreachable!(),
            }
        });
        for c in 0..3 {
            assert!(
                rel_err(g[c], num[0][[0, c]], 1e-10) < 1e-4,
                "dim {c}: {} vs {}",
                g[c],
                num[0][[0, c]]
            );
        }
    }

    #[test]
    fn fim_exact_glm_identity_scalar() {
        let fm = FeatureMap::identity(1);
        let est = GlmEstimator::from_parts(fm, array![[1.0]], array![[1.0]]).unwrap();
        for x in [-2.0, 0.0, 3.5] {
            let f = fim_exact(&est, &array![x].view());
            assert!((f[[0, 0]] - 1.0).abs() < 1e-6, "I_x {}", f[[0, 0]]);
        }
    }

    #[test]
    fn fim_exact_glm_matches_feature_jacobian_formula() {
        // I_x = J_φᵀ Wᵀ Σ⁻¹ W J_φ for the generalized-linear tier.
        let mut s = RandomStream::new(17);
        let fm = FeatureMap::random_fourier(3, 7, 1.1, 4);
        let w = s.normal_matrix(2, 7);
        let sigma = {
            let b = s.normal_matrix(2, 2);
            b.t().dot(&b) + Mat::eye(2) * 0.4
        };
        let est = GlmEstimator::from_parts(fm.clone(), w.clone(), sigma.clone()).unwrap();
        let x = s.standard_normal(3);
        let f = fim_exact(&est, &x.view());

        let j = fm.jacobian(&x.view());
        let sigma_inv = matrix::inv_spd(&est.sigma().view()).unwrap();
        let direct = j.t().dot(&w.t()).dot(&sigma_inv).dot(&w).dot(&j);
        for (a, b) in f.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn fim_exact_is_symmetric_psd_and_trace_bounds_top_eigenvalue() {
        let mut s = RandomStream::new(23);
        for seed in 0..10u64 {
            let est = MlpEstimator::new(5, &[10, 10], 3, seed);
            let x = s.standard_normal(5);
            let f = fim_exact(&est, &x.view());
            assert!(matrix::symmetry_defect(&f.view()) < 1e-12);
            let top = top_eigenpair(&f.view(), 1e-9, 20_000).unwrap();
            let trace: f64 = (0..5).map(|i| f[[i, i]]).sum();
            assert!(
                trace >= top.value - 1e-9 * top.value.abs().max(1.0),
                "trace {trace} < λmax {}",
                top.value
            );
        }
    }

    #[test]
    fn mc_trace_agrees_with_exact_trace() {
        let est = MlpEstimator::new(4, &[10], 2, 3);
        let mut s = RandomStream::new(8);
        let x = s.standard_normal(4);
        let f = fim_exact(&est, &x.view());
        let trace: f64 = (0..4).map(|i| f[[i, i]]).sum();

        let samples = fim_trace_samples(&est, &x.view(), &mut s, 100_000);
        let mean = samples.sum() / samples.len() as f64;
        let var = samples.mapv(|v| (v - mean) * (v - mean)).sum() / (samples.len() as f64 - 1.0);
        let se = (var / samples.len() as f64).sqrt();
        assert!(
            (mean - trace).abs() <= 3.0 * se,
            "MC {mean} vs exact {trace}, se {se}"
        );
    }

    #[test]
    fn glm_identity_trace_is_unity() {
        let fm = FeatureMap::identity(1);
        let est = GlmEstimator::from_parts(fm, array![[1.0]], array![[1.0]]).unwrap();
        let mut s = RandomStream::new(2);
        let v = fim_trace_mc(&est, &array![0.7].view(), &mut s, 1000);
        assert!((0.9..=1.1).contains(&v), "trace {v}");
    }

    #[test]
    fn taped_penalty_value_matches_mc_and_gradient_matches_fd() {
        let est = MlpEstimator::new(3, &[6], 2, 9);
        let mut s = RandomStream::new(14);
        let x_batch = s.normal_matrix(4, 3);
        let noises: Vec<Mat> = (0..3).map(|_| s.normal_matrix(4, 2)).collect();

        let penalty_of = |params: &[Mat]| -> f64 {
            let mut t = Tape::new();
            let leaves: Vec<Var> = params.iter().map(|p| t.leaf(p.clone())).collect();
            let mut e = est.clone();
            e.set_params(params);
            let r = fim_trace_penalty_taped(&mut t, &e, &leaves, &x_batch, &noises);
            t.scalar_value(r)
        };

        let params = est.params();
        let mut tape = Tape::new();
        let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let r = fim_trace_penalty_taped(&mut tape, &est, &leaves, &x_batch, &noises);
        let grads = tape.grad(r, &leaves);
        let analytic: Vec<Mat> = grads.iter().map(|g| tape.value(*g).clone()).collect();

        let numeric = numeric_grad(&params, 1e-5, |vals| penalty_of(vals));
        for (k, (a, nmat)) in analytic.iter().zip(numeric.iter()).enumerate() {
            for (av, nv) in a.iter().zip(nmat.iter()) {
                let e = rel_err(*av, *nv, 1e-6);
                assert!(e <= 1e-4, "param {k}: {av} vs {nv} (rel {e})");
            }
        }
    }

    #[test]
    fn taped_penalty_expectation_matches_mean_exact_trace() {
        let est = MlpEstimator::new(3, &[8], 2, 21);
        let mut s = RandomStream::new(33);
        let x_batch = s.normal_matrix(3, 3);
        let noises: Vec<Mat> = (0..4000).map(|_| s.normal_matrix(3, 2)).collect();
        let mut tape = Tape::new();
        let leaves: Vec<Var> = est.params().into_iter().map(|p| tape.leaf(p)).collect();
        let r = fim_trace_penalty_taped(&mut tape, &est, &leaves, &x_batch, &noises);
        let mc = tape.scalar_value(r);
        let exact = mean_exact_trace(&est, &x_batch);
        assert!(
            rel_err(mc, exact, 1e-9) < 0.1,
            "penalty {mc} vs exact mean trace {exact}"
        );
    }
}

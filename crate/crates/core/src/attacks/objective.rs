//! Attack objectives evaluated and differentiated at a perturbed input.

use super::{AttackConfig, AttackError, AttackKind};
use crate::estimators::{
    kl_gaussian, kl_taped, log_prob_taped, sample_many_taped, taped_const_posterior, Estimator,
    GaussianPosterior, TapedPosterior,
};
use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::matrix::Mat;
use crate::numerics::rng::RandomStream;
use ndarray::{Array1, ArrayView1, Axis};

/// Everything fixed over one attack: the clean posterior, frozen Monte Carlo
/// noise for the MMD path, and its median-heuristic bandwidth.
pub(super) struct ObjectiveState {
    pub clean: GaussianPosterior,
    pub theta_true: Option<Array1<f64>>,
    /// Frozen standard-normal draws for the MMD sample sets (n × theta_dim).
    mmd_noise_clean: Option<Mat>,
    mmd_noise_pert: Option<Mat>,
    mmd_bandwidth: f64,
}

impl ObjectiveState {
    pub fn prepare<E: Estimator + ?Sized>(
        est: &E,
        x: &ArrayView1<f64>,
        cfg: &AttackConfig,
        theta_true: Option<&ArrayView1<f64>>,
        stream: &mut RandomStream,
    ) -> Result<Self, AttackError> {
        let clean = est.predict(x)?;
        if cfg.kind == AttackKind::Nll && theta_true.is_none() {
            return Err(AttackError::MissingTrueTheta(cfg.kind));
        }
        let (noise_clean, noise_pert, bandwidth) = if cfg.kind == AttackKind::Mmd {
            let n = cfg.mc_per_step.max(2);
            let n = n + (n % 2); // linear-time estimator pairs samples
            let nc = stream.normal_matrix(n, est.theta_dim());
            let np = stream.normal_matrix(n, est.theta_dim());
            // Median pairwise distance over the clean sample set, frozen for
            // the whole attack.
            let samples = clean.transform_noise(&nc);
            let mut dists = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let d = &samples.row(i) - &samples.row(j);
                    dists.push(d.dot(&d).sqrt());
                }
            }
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            let med = dists[dists.len() / 2].max(1e-6);
            (Some(nc), Some(np), med)
        } else {
            (None, None, 1.0)
        };
        Ok(Self {
            clean,
            theta_true: theta_true.map(|t| t.to_owned()),
            mmd_noise_clean: noise_clean,
            mmd_noise_pert: noise_pert,
            mmd_bandwidth: bandwidth,
        })
    }

    /// Objective value and its gradient with respect to the perturbed input.
    /// The Monte Carlo KL path redraws `mc_per_step` samples from `stream`;
    /// everything else is deterministic given the frozen state.
    pub fn eval_grad<E: Estimator + ?Sized>(
        &self,
        est: &E,
        cfg: &AttackConfig,
        x_pert: &ArrayView1<f64>,
        stream: &mut RandomStream,
    ) -> (f64, Array1<f64>) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x_pert.to_owned().insert_axis(Axis(0)).to_owned());
        let head = est.build_const(&mut tape, xv);
        let obj = self.build(est, cfg, &mut tape, &head, cfg.mc_per_step, stream);
        let g = tape.grad(obj, &[xv])[0];
        (tape.scalar_value(obj), tape.value(g).row(0).to_owned())
    }

    /// Objective value only (`n_mc` controls the MC budget on the MC path).
    pub fn eval<E: Estimator + ?Sized>(
        &self,
        est: &E,
        cfg: &AttackConfig,
        x_pert: &ArrayView1<f64>,
        n_mc: usize,
        stream: &mut RandomStream,
    ) -> f64 {
        let mut tape = Tape::new();
        let xv = tape.leaf(x_pert.to_owned().insert_axis(Axis(0)).to_owned());
        let head = est.build_const(&mut tape, xv);
        let obj = self.build(est, cfg, &mut tape, &head, n_mc, stream);
        tape.scalar_value(obj)
    }

    fn build<E: Estimator + ?Sized>(
        &self,
        est: &E,
        cfg: &AttackConfig,
        tape: &mut Tape,
        head_pert: &TapedPosterior,
        n_mc: usize,
        stream: &mut RandomStream,
    ) -> Var {
        let _ = est;
        match cfg.kind {
            AttackKind::PgdKlForward if !cfg.use_mc_objective => {
                let clean = taped_const_posterior(tape, &self.clean);
                let kl = kl_taped(tape, &clean, head_pert);
                tape.sum_all(kl)
            }
            AttackKind::PgdKlReverse if !cfg.use_mc_objective => {
                let clean = taped_const_posterior(tape, &self.clean);
                let kl = kl_taped(tape, head_pert, &clean);
                tape.sum_all(kl)
            }
            AttackKind::PgdKlForward => {
                // (1/n) Σ [log p(θᵢ) − log q(θᵢ|x̃)], θᵢ ~ clean posterior.
                let draws = self.clean.sample_reparam(stream, n_mc);
                let mut lp_clean = 0.0;
                for row in draws.rows() {
                    lp_clean += self.clean.log_prob(&row);
                }
                let th = tape.leaf(draws.clone());
                let head_b = broadcast_head(tape, head_pert, n_mc);
                let lq = log_prob_taped(tape, &head_b, th);
                let sum_lq = tape.sum_all(lq);
                let neg = tape.neg(sum_lq);
                let shifted = tape.add_const(neg, lp_clean);
                tape.scale(shifted, 1.0 / n_mc as f64)
            }
            AttackKind::PgdKlReverse => {
                // θᵢ ~ q(·|x̃) via reparameterization; gradients flow through
                // the samples.
                let eps = tape.leaf(stream.normal_matrix(n_mc, self.clean.dim()));
                let th = sample_many_taped(tape, head_pert, eps);
                let head_b = broadcast_head(tape, head_pert, n_mc);
                let lq = log_prob_taped(tape, &head_b, th);
                let clean = taped_const_posterior(tape, &self.clean);
                let clean_b = broadcast_head(tape, &clean, n_mc);
                let lp = log_prob_taped(tape, &clean_b, th);
                let diff = tape.sub(lq, lp);
                let s = tape.sum_all(diff);
                tape.scale(s, 1.0 / n_mc as f64)
            }
            AttackKind::Mmd => {
                let nc = self.mmd_noise_clean.as_ref().expect("prepared for MMD");
                let np = self.mmd_noise_pert.as_ref().expect("prepared for MMD");
                let clean_samples = tape.leaf(self.clean.transform_noise(nc));
                let eps = tape.leaf(np.clone());
                let pert_samples = sample_many_taped(tape, head_pert, eps);
                mmd_linear_taped(tape, clean_samples, pert_samples, self.mmd_bandwidth)
            }
            AttackKind::Nll => {
                let t = self
                    .theta_true
                    .as_ref()
                    .expect("checked in prepare")
                    .clone()
                    .insert_axis(Axis(0))
                    .to_owned();
                let th = tape.leaf(t);
                let lp = log_prob_taped(tape, head_pert, th);
                let s = tape.sum_all(lp);
                tape.neg(s)
            }
            AttackKind::RandomL2 => unreachable!("random baseline runs no PGD"),
        }
    }
}

/// Tile a single-row head to `n` rows so many samples can be scored at once.
fn broadcast_head(tape: &mut Tape, head: &TapedPosterior, n: usize) -> TapedPosterior {
    match head {
        TapedPosterior::Diagonal { mean, std } => {
            debug_assert_eq!(tape.shape(*mean).0, 1);
            TapedPosterior::Diagonal {
                mean: tape.broadcast_rows(*mean, n),
                std: tape.broadcast_rows(*std, n),
            }
        }
        TapedPosterior::Full { mean, chol } => TapedPosterior::Full {
            mean: tape.broadcast_rows(*mean, n),
            chol: *chol,
        },
    }
}

/// Linear-time MMD² with an RBF kernel between two equally sized sample
/// sets: consecutive pair blocks (first half vs second half) form the
/// h-statistics.
fn mmd_linear_taped(tape: &mut Tape, xs: Var, ys: Var, bandwidth: f64) -> Var {
    let n = tape.shape(xs).0;
    assert!(n % 2 == 0, "linear-time estimator needs an even sample count");
    let half = n / 2;
    let split = |tape: &mut Tape, m: Var| -> (Var, Var) {
        let t = tape.transpose(m);
        let a = tape.slice_cols(t, 0, half);
        let b = tape.slice_cols(t, half, n);
        let at = tape.transpose(a);
        let bt = tape.transpose(b);
        (at, bt)
    };
    let (x1, x2) = split(tape, xs);
    let (y1, y2) = split(tape, ys);
    let gamma = -1.0 / (2.0 * bandwidth * bandwidth);
    let mut kernel_rows = |tape: &mut Tape, a: Var, b: Var| -> Var {
        let d = tape.sub(a, b);
        let sq = tape.square(d);
        let row = tape.sum_axis1(sq);
        let scaled = tape.scale(row, gamma);
        tape.exp(scaled)
    };
    let kxx = kernel_rows(tape, x1, x2);
    let kyy = kernel_rows(tape, y1, y2);
    let kxy = kernel_rows(tape, x1, y2);
    let kyx = kernel_rows(tape, x2, y1);
    let s1 = tape.add(kxx, kyy);
    let s2 = tape.add(kxy, kyx);
    let h = tape.sub(s1, s2);
    let total = tape.sum_all(h);
    tape.scale(total, 1.0 / half as f64)
}

/// Linear-time MMD² between posterior sample sets at `x` and `x_pert`,
/// with a median-heuristic bandwidth frozen from the clean samples. Shares
/// one noise stream: identical inputs give exactly zero.
pub fn mmd_objective<E: Estimator + ?Sized>(
    est: &E,
    x: &ArrayView1<f64>,
    x_pert: &ArrayView1<f64>,
    stream: &mut RandomStream,
    n: usize,
) -> Result<f64, AttackError> {
    assert!(n >= 2 && n % 2 == 0, "need an even number of samples");
    let mut cfg = AttackConfig::new(AttackKind::Mmd, 1.0, stream.seed());
    cfg.mc_per_step = n;
    let state = ObjectiveState::prepare(est, x, &cfg, None, stream)?;
    let mut dummy = stream.substream_named("mmd_eval");
    Ok(state.eval(est, &cfg, x_pert, n, &mut dummy))
}

/// Direct value-level forward KL between predictions (convenience used by
/// metrics and tests).
pub fn posterior_shift_kl<E: Estimator + ?Sized>(
    est: &E,
    x: &ArrayView1<f64>,
    x_pert: &ArrayView1<f64>,
) -> Result<f64, AttackError> {
    let p = est.predict(x)?;
    let q = est.predict(x_pert)?;
    Ok(kl_gaussian(&p, &q))
}

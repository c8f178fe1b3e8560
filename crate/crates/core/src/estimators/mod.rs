//! Conditional Gaussian density estimators.
//!
//! Two tiers share one interface: a generalized-linear tier with a fixed
//! feature map, full covariance, and closed-form fits, and a small tanh-MLP
//! tier with a diagonal Gaussian head. Both expose an untaped `predict` for
//! evaluation and a taped `build` through which attacks and training
//! differentiate — with respect to the observation, the parameters, or both.

mod gaussian;
mod glm;
mod grad;
mod io;
mod mlp;

pub mod feature_map;

pub use feature_map::{FeatureKind, FeatureMap};
pub use gaussian::{
    kl_gaussian, kl_monte_carlo, kl_taped, log_prob_taped, sample_many_taped,
    sample_one_per_row_taped, taped_const_posterior, Covariance, GaussianPosterior,
    TapedPosterior,
};
pub use glm::{glm_fit_closed_form, glm_fit_fim_closed_form, GlmEstimator};
pub use grad::{
    fim_exact, fim_trace_mc, fim_trace_penalty_taped, fim_trace_samples, grad_logprob_rows,
    grad_logprob_wrt_x, mean_exact_trace,
};
pub use io::{load_estimator, save_estimator, EstimatorCheckpoint};
pub use mlp::MlpEstimator;

use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::matrix::Mat;
use ndarray::ArrayView1;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator produced a non-finite output head")]
    NonFiniteOutput,
    #[error("feature Gram matrix is singular; need more rows than features")]
    SingularGram,
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("checkpoint i/o: {0}")]
    Io(String),
}

/// A conditional density estimator q(θ|x) with a Gaussian head.
///
/// `build` inserts the forward computation onto a tape; `params` / `set_params`
/// expose the learnable arrays in a fixed order so optimizers can treat the
/// estimator as a flat list of dense matrices. Estimators without learnable
/// parameters (the analytic oracle) return an empty list.
pub trait Estimator {
    fn x_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;

    /// Snapshot of learnable parameter arrays in a stable order.
    fn params(&self) -> Vec<Mat>;

    /// Replace all learnable parameters; shapes must match [`Estimator::params`].
    fn set_params(&mut self, params: &[Mat]);

    /// Taped forward pass for a batch of observations (B × x_dim).
    ///
    /// `params` must line up with [`Estimator::params`]; pass constant leaves
    /// when no parameter gradients are needed.
    fn build(&self, tape: &mut Tape, params: &[Var], x: Var) -> TapedPosterior;

    /// Taped forward with the current parameters inserted as constant leaves.
    fn build_const(&self, tape: &mut Tape, x: Var) -> TapedPosterior {
        let leaves: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p)).collect();
        self.build(tape, &leaves, x)
    }

    /// Posterior for a single observation.
    fn predict(&self, x: &ArrayView1<f64>) -> Result<GaussianPosterior, EstimatorError> {
        debug_assert_eq!(x.len(), self.x_dim());
        let mut tape = Tape::new();
        let row = x
            .to_owned()
            .insert_axis(ndarray::Axis(0))
            .to_owned();
        let xv = tape.leaf(row);
        let head = self.build_const(&mut tape, xv);
        gaussian::posterior_from_taped(&tape, &head, 0)
    }
}

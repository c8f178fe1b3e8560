//! Adversarial perturbations of the observation.
//!
//! The main attack is L2 projected gradient ascent on a divergence between
//! the posterior at the clean observation and the posterior at the perturbed
//! one: forward or reverse KL (closed form for Gaussian heads, Monte Carlo
//! path retained for protocol parity), a linear-time MMD² estimator, or the
//! negative log-density of the true parameter. A matched-magnitude random
//! perturbation serves as the baseline.
//!
//! Feasibility contract: every returned perturbation satisfies the ε-ball
//! constraint and the element-wise data bounds simultaneously. Each step
//! projects, clamps x+δ, recomputes δ, and re-projects; since the clamped
//! point and the clean observation both lie in the bounds, the re-projected
//! point is a convex combination and stays inside.

mod io;
mod objective;
mod pgd;

pub use io::{load_attack_results, save_attack_results, AttackRecord};
pub use objective::mmd_objective;
pub use pgd::{batch_attack, pgd_attack, pgd_training_batch, random_l2, InnerObjective};

use crate::estimators::EstimatorError;
use ndarray::{Array1, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("attack kind {0:?} needs the true parameter vector")]
    MissingTrueTheta(AttackKind),
    #[error("attack i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Maximize KL(q(·|x) ‖ q(·|x+δ)).
    PgdKlForward,
    /// Maximize KL(q(·|x+δ) ‖ q(·|x)).
    PgdKlReverse,
    /// Random direction on the ε-sphere (baseline, no optimization).
    RandomL2,
    /// Maximize the linear-time MMD² between posterior sample sets.
    Mmd,
    /// Minimize log q(θ_true | x+δ).
    Nll,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::PgdKlForward => "pgd_kl_forward",
            AttackKind::PgdKlReverse => "pgd_kl_reverse",
            AttackKind::RandomL2 => "random_l2",
            AttackKind::Mmd => "mmd",
            AttackKind::Nll => "nll",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pgd_kl_forward" => Some(AttackKind::PgdKlForward),
            "pgd_kl_reverse" => Some(AttackKind::PgdKlReverse),
            "random_l2" => Some(AttackKind::RandomL2),
            "mmd" => Some(AttackKind::Mmd),
            "nll" => Some(AttackKind::Nll),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Absolute L2 budget (after tolerance normalization).
    pub eps: f64,
    pub steps: usize,
    /// Defaults to 2.5·eps/steps when unset.
    pub step_size: Option<f64>,
    /// Monte Carlo samples per PGD step (MC objective path).
    pub mc_per_step: usize,
    /// Monte Carlo budget for the final objective evaluation (MC path).
    pub mc_final: usize,
    pub seed: u64,
    /// Use the sampling-based objective instead of the closed form.
    pub use_mc_objective: bool,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, eps: f64, seed: u64) -> Self {
        assert!(eps > 0.0, "attack budget must be positive");
        Self {
            kind,
            eps,
            steps: 200,
            step_size: None,
            mc_per_step: 5,
            mc_final: 256,
            seed,
            use_mc_objective: false,
        }
    }

    pub fn effective_step_size(&self) -> f64 {
        self.step_size
            .unwrap_or(2.5 * self.eps / self.steps as f64)
    }
}

/// Outcome of one attack on one observation.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub delta: Array1<f64>,
    pub x_perturbed: Array1<f64>,
    /// Best-so-far objective after each step (non-decreasing).
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    /// Bound clamping was active when the accepted iterate was formed.
    pub clamped: bool,
    /// Fresh random restarts taken because the initial gradient vanished.
    pub zero_gradient_restarts: usize,
}

/// Scale `delta` back onto the L2 ball of radius `eps` if it lies outside.
pub fn project_l2_ball(delta: &ArrayView1<f64>, eps: f64) -> Array1<f64> {
    assert!(eps > 0.0);
    let norm = delta.dot(delta).sqrt();
    if norm <= eps {
        delta.to_owned()
    } else {
        delta.mapv(|v| v * (eps / norm))
    }
}

/// Element-wise clamp of `x` into [lo, hi].
pub fn clamp_to_bounds(
    x: &ArrayView1<f64>,
    lo: &ArrayView1<f64>,
    hi: &ArrayView1<f64>,
) -> Array1<f64> {
    Array1::from_shape_fn(x.len(), |i| x[i].clamp(lo[i], hi[i]))
}

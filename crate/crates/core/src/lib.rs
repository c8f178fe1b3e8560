//! Amortized Bayesian inference at desk scale: conditional Gaussian posterior
//! estimators trained on simulator output, adversarial attacks on the
//! posterior map, a Fisher-information-trace defense, and linear-Gaussian
//! oracles that pin every layer to closed-form ground truth.
//!
//! Module map:
//! - [`numerics`]: dense linear algebra, counter-based random streams, and the
//!   reverse-mode tape that supports gradient-of-gradient.
//! - [`tasks`]: benchmark generative models (linear-Gaussian, SIR epidemic,
//!   Lotka-Volterra) and dataset generation with tolerance normalization.
//! - [`estimators`]: conditional Gaussian density estimators (small MLP head
//!   and generalized-linear tier with closed-form fits), log-densities, KL,
//!   input gradients, and exact Fisher information.
//! - [`training`]: Adam training loops — plain NPE, FIM-trace regularization,
//!   TRADES, adversarial training, noise augmentation.
//! - [`attacks`]: L2 projected-gradient attacks on the posterior map plus
//!   random-noise, MMD, and likelihood-suppression objectives.
//! - [`oracles`]: analytic linear-Gaussian posterior, FIM, and optimal-attack
//!   bound used to verify everything else.
//! - [`metrics`]: KL robustness quantiles, expected coverage, NLL accuracy,
//!   and the robustness-accuracy sweep.

pub mod attacks;
pub mod estimators;
pub mod metrics;
pub mod numerics;
pub mod oracles;
pub mod tasks;
pub mod training;

pub use numerics::matrix::Mat;
pub use numerics::rng::RandomStream;

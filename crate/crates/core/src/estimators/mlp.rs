//! Small multilayer perceptron with a diagonal Gaussian head.
//!
//! tanh hidden layers (the trace regularizer differentiates through
//! ∇_x log q, so the activation must be smooth enough for a second backward
//! pass), linear output split into a mean head and a raw-σ head mapped
//! through softplus(·) + 1e-6.

use super::gaussian::TapedPosterior;
use super::Estimator;
use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::matrix::Mat;
use crate::numerics::rng::RandomStream;

/// Floor added to softplus(raw σ); keeps KL and FIM denominators bounded.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MlpEstimator {
    /// Input width, hidden widths, output width (2·theta_dim).
    pub layer_sizes: Vec<usize>,
    /// One (fan_in × fan_out) matrix per layer.
    pub weights: Vec<Mat>,
    /// One 1×fan_out row per layer.
    pub biases: Vec<Mat>,
    theta_dim: usize,
}

impl MlpEstimator {
    /// Fresh estimator with Xavier-normal weights from a deterministic seed.
    pub fn new(x_dim: usize, hidden: &[usize], theta_dim: usize, seed: u64) -> Self {
        let mut sizes = vec![x_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * theta_dim);
        let mut stream = RandomStream::new(seed).substream_named("mlp_init");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(stream.normal_matrix(fan_in, fan_out).mapv(|v| v * std));
            biases.push(Mat::zeros((1, fan_out)));
        }
        Self {
            layer_sizes: sizes,
            weights,
            biases,
            theta_dim,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }
}

impl Estimator for MlpEstimator {
    fn x_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    fn params(&self) -> Vec<Mat> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for i in 0..self.n_layers() {
            out.push(self.weights[i].clone());
            out.push(self.biases[i].clone());
        }
        out
    }

    fn set_params(&mut self, params: &[Mat]) {
        assert_eq!(params.len(), 2 * self.n_layers());
        for i in 0..self.n_layers() {
            assert_eq!(params[2 * i].dim(), self.weights[i].dim());
            assert_eq!(params[2 * i + 1].dim(), self.biases[i].dim());
            self.weights[i] = params[2 * i].clone();
            self.biases[i] = params[2 * i + 1].clone();
        }
    }

    fn build(&self, tape: &mut Tape, params: &[Var], x: Var) -> TapedPosterior {
        assert_eq!(params.len(), 2 * self.n_layers());
        let mut h = x;
        for i in 0..self.n_layers() {
            let z = tape.matmul(h, params[2 * i]);
            let zb = tape.add_row(z, params[2 * i + 1]);
            h = if i + 1 < self.n_layers() {
                tape.tanh(zb)
            } else {
                zb
            };
        }
        let d = self.theta_dim;
        let mean = tape.slice_cols(h, 0, d);
        let raw = tape.slice_cols(h, d, 2 * d);
        let sp = tape.softplus(raw);
        let std = tape.add_const(sp, SIGMA_FLOOR);
        TapedPosterior::Diagonal { mean, std }
    }
}

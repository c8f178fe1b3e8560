//! Central finite differences.
//!
//! These are the independent oracles the test suites check analytic
//! gradients against; they deliberately know nothing about the tape.

use super::matrix::Mat;

/// Entry-wise central-difference gradient of a scalar function of several
/// matrices.
pub fn numeric_grad<F>(params: &[Mat], h: f64, f: F) -> Vec<Mat>
where
    F: Fn(&[Mat]) -> f64,
{
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let mut g = Mat::zeros(params[k].dim());
        for idx in 0..params[k].len() {
            let mut plus = params.to_vec();
            let mut minus = params.to_vec();
            {
                let ps = plus[k].as_slice_mut().expect("contiguous");
                ps[idx] += h;
            }
            {
                let ms = minus[k].as_slice_mut().expect("contiguous");
                ms[idx] -= h;
            }
            let d = (f(&plus) - f(&minus)) / (2.0 * h);
            g.as_slice_mut().expect("contiguous")[idx] = d;
        }
        out.push(g);
    }
    out
}

/// Central-difference directional derivative of `f` at `params` along
/// `direction` (one matrix per parameter).
pub fn directional_derivative<F>(params: &[Mat], direction: &[Mat], h: f64, f: F) -> f64
where
    F: Fn(&[Mat]) -> f64,
{
    let shift = |sign: f64| -> Vec<Mat> {
        params
            .iter()
            .zip(direction.iter())
            .map(|(p, d)| p + &(d * (sign * h)))
            .collect()
    };
    (f(&shift(1.0)) - f(&shift(-1.0))) / (2.0 * h)
}

/// Relative error |a - b| / max(|a|, |b|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

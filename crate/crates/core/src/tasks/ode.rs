//! Classical fixed-step fourth-order Runge-Kutta integration.

use super::TaskError;
use crate::numerics::matrix::Mat;
use ndarray::{Array1, ArrayView1};

/// Integrate `rhs` from `state0` over [0, t_end] with a fixed step
/// t_end / (obs_points·substeps); returns the state at each of the
/// `obs_points` observation times (excluding t = 0).
pub fn integrate_rk4<F>(
    rhs: F,
    state0: &ArrayView1<f64>,
    t_end: f64,
    obs_points: usize,
    substeps: usize,
) -> Result<Mat, TaskError>
where
    F: Fn(&ArrayView1<f64>) -> Array1<f64>,
{
    assert!(substeps >= 1, "substeps must be at least 1");
    assert!(t_end > 0.0, "integration horizon must be positive");
    assert!(obs_points >= 1);
    let dim = state0.len();
    let h = t_end / (obs_points * substeps) as f64;
    let mut y = state0.to_owned();
    let mut out = Mat::zeros((obs_points, dim));
    for p in 0..obs_points {
        for _ in 0..substeps {
            let k1 = rhs(&y.view());
            let y2 = &y + &(&k1 * (0.5 * h));
            let k2 = rhs(&y2.view());
            let y3 = &y + &(&k2 * (0.5 * h));
            let k3 = rhs(&y3.view());
            let y4 = &y + &(&k3 * h);
            let k4 = rhs(&y4.view());
            y = &y + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (h / 6.0));
            if !y.iter().all(|v| v.is_finite()) {
                return Err(TaskError::NonFiniteTrajectory);
            }
        }
        out.row_mut(p).assign(&y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_field_keeps_state_constant() {
        let traj = integrate_rk4(
            |s| Array1::zeros(s.len()),
            &array![1.0, -2.0].view(),
            5.0,
            10,
            4,
        )
        .unwrap();
        for row in traj.rows() {
            assert_eq!(row[0], 1.0);
            assert_eq!(row[1], -2.0);
        }
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let traj = integrate_rk4(|s| -s.to_owned(), &array![1.0].view(), 1.0, 10, 10).unwrap();
        let end = traj[[9, 0]];
        assert!((end - (-1.0f64).exp()).abs() < 1e-6, "x(1) = {end}");
    }

    #[test]
    fn fourth_order_convergence() {
        // Doubling substeps should shrink the global error ~16×.
        let exact = (-1.0f64).exp();
        let err = |sub: usize| {
            let traj = integrate_rk4(|s| -s.to_owned(), &array![1.0].view(), 1.0, 5, sub).unwrap();
            (traj[[4, 0]] - exact).abs()
        };
        let e1 = err(2);
        let e2 = err(4);
        let ratio = e1 / e2;
        assert!(
            (10.0..=24.0).contains(&ratio),
            "convergence ratio {ratio} (e1={e1}, e2={e2})"
        );
    }

    #[test]
    fn divergent_field_reports_nonfinite() {
        // dx/dt = x² from 1 blows up at t = 1.
        let r = integrate_rk4(
            |s| s.mapv(|v| v * v),
            &array![1.0].view(),
            2.0,
            10,
            50,
        );
        assert!(matches!(r, Err(TaskError::NonFiniteTrajectory)));
    }
}

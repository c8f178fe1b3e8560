//! Task simulators: noiseless trajectories and noisy observations.

use super::ode::integrate_rk4;
use super::{TaskError, TaskName, TaskSpec};
use crate::numerics::matrix::Mat;
use crate::numerics::rng::RandomStream;
use ndarray::{array, Array1, ArrayView1};

/// Population size of the SIR task.
pub const SIR_POPULATION: f64 = 5.0;

/// Largest substep multiplier tried when the integrator reports a
/// non-finite state.
const MAX_SUBSTEPS: usize = 80;

fn sir_rhs(beta: f64, gamma: f64) -> impl Fn(&ArrayView1<f64>) -> Array1<f64> {
    move |s: &ArrayView1<f64>| {
        let (sus, inf) = (s[0], s[1]);
        let new_inf = beta * sus * inf / SIR_POPULATION;
        array![-new_inf, new_inf - gamma * inf, gamma * inf]
    }
}

fn lv_rhs(alpha: f64, beta: f64, delta: f64, gamma: f64) -> impl Fn(&ArrayView1<f64>) -> Array1<f64> {
    move |s: &ArrayView1<f64>| {
        let (x, y) = (s[0], s[1]);
        array![alpha * x - beta * x * y, delta * x * y - gamma * y]
    }
}

/// Noiseless ODE state trajectory at the observation points
/// (obs_points × state_dim). Raw parameters are mapped through the task
/// sigmoid first. Substeps are doubled (up to 80) if the state leaves
/// finite range.
pub fn ode_trajectory(task: &TaskSpec, theta: &ArrayView1<f64>) -> Result<Mat, TaskError> {
    let ode = task
        .ode
        .as_ref()
        .ok_or_else(|| TaskError::DimensionMismatch("task has no ODE".into()))?;
    let params = task.prior.transform(&theta.to_owned());
    let state0 = Array1::from(ode.initial_state.clone());
    let mut substeps = ode.substeps;
    loop {
        let result = match task.name {
            TaskName::Sir => integrate_rk4(
                sir_rhs(params[0], params[1]),
                &state0.view(),
                ode.t_end,
                task.time_points,
                substeps,
            ),
            TaskName::LotkaVolterra => integrate_rk4(
                lv_rhs(params[0], params[1], params[2], params[3]),
                &state0.view(),
                ode.t_end,
                task.time_points,
                substeps,
            ),
            TaskName::GaussianLinear => {
                return Err(TaskError::DimensionMismatch("linear task has no ODE".into()))
            }
        };
        match result {
            Ok(traj) => return Ok(traj),
            Err(TaskError::NonFiniteTrajectory) if substeps * 2 <= MAX_SUBSTEPS => {
                substeps *= 2;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Noise-free observation vector for the given raw parameters.
pub fn simulate_noiseless(task: &TaskSpec, theta: &ArrayView1<f64>) -> Result<Array1<f64>, TaskError> {
    if theta.len() != task.theta_dim {
        return Err(TaskError::DimensionMismatch(format!(
            "theta has {} entries, task needs {}",
            theta.len(),
            task.theta_dim
        )));
    }
    match task.name {
        TaskName::GaussianLinear => {
            let a = Array1::from(task.linear_map.clone());
            Ok(&a * theta)
        }
        TaskName::Sir => {
            let traj = ode_trajectory(task, theta)?;
            Ok(traj.column(1).to_owned()) // infected series
        }
        TaskName::LotkaVolterra => {
            let traj = ode_trajectory(task, theta)?;
            let n = task.time_points;
            let mut x = Array1::zeros(2 * n);
            for t in 0..n {
                x[t] = traj[[t, 0]];
                x[n + t] = traj[[t, 1]];
            }
            Ok(x)
        }
    }
}

/// Observation with the task noise model applied:
/// linear task x = Aθ + σε, SIR x = I(t)·exp(σε), Lotka-Volterra x = traj + σε.
pub fn simulate(
    task: &TaskSpec,
    theta: &ArrayView1<f64>,
    stream: &mut RandomStream,
) -> Result<Array1<f64>, TaskError> {
    let clean = simulate_noiseless(task, theta)?;
    let eps = stream.standard_normal(task.x_dim);
    let sigma = task.noise_sigma;
    let x = match task.name {
        TaskName::Sir => Array1::from_shape_fn(task.x_dim, |i| clean[i] * (sigma * eps[i]).exp()),
        _ => Array1::from_shape_fn(task.x_dim, |i| clean[i] + sigma * eps[i]),
    };
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(TaskError::NonFiniteTrajectory)
    }
}

//! Dense symmetric linear algebra: Cholesky factorization, SPD solves, and
//! the top eigenpair by power iteration.
//!
//! Matrices are `ndarray::Array2<f64>` in row-major order. Only the kernels
//! the toolkit actually needs are provided; there is no general eigensolver.

use super::NumericsError;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Row-major dense matrix of 64-bit floats.
pub type Mat = Array2<f64>;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails with [`NumericsError::NotPositiveDefinite`] on the first
/// non-positive pivot.
pub fn cholesky(m: &ArrayView2<f64>) -> Result<Mat, NumericsError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let mut l = Mat::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(NumericsError::NotPositiveDefinite { pivot: i, value: s });
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L z = b` for lower-triangular `L`, column-wise over `b`.
pub fn solve_lower(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Mat {
    let n = l.nrows();
    let mut z = b.to_owned();
    for c in 0..z.ncols() {
        for i in 0..n {
            let mut s = z[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * z[[k, c]];
            }
            z[[i, c]] = s / l[[i, i]];
        }
    }
    z
}

/// Solve `U z = b` for upper-triangular `U`, column-wise over `b`.
pub fn solve_upper(u: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Mat {
    let n = u.nrows();
    let mut z = b.to_owned();
    for c in 0..z.ncols() {
        for i in (0..n).rev() {
            let mut s = z[[i, c]];
            for k in i + 1..n {
                s -= u[[i, k]] * z[[k, c]];
            }
            z[[i, c]] = s / u[[i, i]];
        }
    }
    z
}

/// Solve `m x = rhs` for symmetric positive-definite `m` via Cholesky.
pub fn solve_spd(m: &ArrayView2<f64>, rhs: &ArrayView2<f64>) -> Result<Mat, NumericsError> {
    if m.nrows() != rhs.nrows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "solve_spd: matrix is {}x{} but rhs has {} rows",
            m.nrows(),
            m.ncols(),
            rhs.nrows()
        )));
    }
    let l = cholesky(m)?;
    let y = solve_lower(&l.view(), rhs);
    Ok(solve_upper(&l.t(), &y.view()))
}

/// Inverse of an SPD matrix. Prefer [`solve_spd`] when a solve suffices.
pub fn inv_spd(m: &ArrayView2<f64>) -> Result<Mat, NumericsError> {
    solve_spd(m, &Mat::eye(m.nrows()).view())
}

/// Log-determinant of an SPD matrix via its Cholesky factor.
pub fn logdet_spd(m: &ArrayView2<f64>) -> Result<f64, NumericsError> {
    let l = cholesky(m)?;
    Ok(2.0 * (0..m.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>())
}

/// Top eigenpair of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub value: f64,
    pub vector: Array1<f64>,
    /// Set when the two largest eigenvalue estimates differ by less than the
    /// tolerance; the eigenvector direction is then arbitrary up to the sign
    /// convention.
    pub degenerate: bool,
}

fn fix_sign(mut v: Array1<f64>) -> Array1<f64> {
    let mut idx = 0;
    let mut best = -1.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    v
}

fn power_iterate(
    m: &ArrayView2<f64>,
    start: Array1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, Array1<f64>), NumericsError> {
    let mut v = start;
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let w = m.dot(&v);
        lambda = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn <= f64::MIN_POSITIVE {
            // Start vector lies in the kernel; the top eigenvalue along this
            // direction is zero.
            return Ok((0.0, v));
        }
        let v_next = w / wn;
        let resid = (&m.dot(&v_next) - &(&v_next * lambda))
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        v = v_next;
        if resid <= tol * lambda.abs().max(1e-300) {
            return Ok((lambda, v));
        }
    }
    let _ = lambda;
    Err(NumericsError::NoConvergence { max_iters })
}

/// Largest eigenvalue and unit eigenvector of a symmetric PSD matrix by
/// power iteration, started from the normalized all-ones vector.
///
/// Sign convention: the component of largest magnitude (first such index on
/// ties) is made positive. Degeneracy of the two leading eigenvalues is
/// detected by re-running on the deflated matrix and reported, not fatal.
pub fn top_eigenpair(
    m: &ArrayView2<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<TopEigen, NumericsError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = m.nrows();
    if n == 0 {
        return Err(NumericsError::DimensionMismatch("empty matrix".into()));
    }
    let start = Array1::ones(n);
    let (lambda, v) = power_iterate(m, start, tol, max_iters)?;
    let v = fix_sign(v);

    // Second Ritz value from the deflated matrix M - λ v vᵀ.
    let mut deflated = m.to_owned();
    for i in 0..n {
        for j in 0..n {
            deflated[[i, j]] -= lambda * v[i] * v[j];
        }
    }
    // The deflated iteration only needs a coarse estimate; cap its work and
    // treat non-convergence as "close eigenvalues". Random start so it is not
    // parallel to the leading eigenvector (the all-ones vector can be).
    let start2 = crate::numerics::rng::RandomStream::new(0xE16E).standard_normal(n);
    let second = power_iterate(&deflated.view(), start2, tol.max(1e-6), 500);
    let degenerate = match second {
        Ok((l2, _)) => (lambda - l2).abs() < tol.max(1e-12) * lambda.abs().max(1.0),
        Err(_) => true,
    };
    Ok(TopEigen {
        value: lambda,
        vector: v,
        degenerate,
    })
}

/// Relative residual ‖m·x − rhs‖_F / ‖rhs‖_F.
pub fn relative_residual(m: &ArrayView2<f64>, x: &ArrayView2<f64>, rhs: &ArrayView2<f64>) -> f64 {
    let r = &m.dot(x) - rhs;
    let num = r.mapv(|v| v * v).sum().sqrt();
    let den = rhs.mapv(|v| v * v).sum().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Symmetry check: max |m - mᵀ| relative to max |m|.
pub fn symmetry_defect(m: &ArrayView2<f64>) -> f64 {
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
            scale = scale.max(m[[i, j]].abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// Outer product a bᵀ.
pub fn outer(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Mat {
    let mut out = Mat::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RandomStream;
    use ndarray::array;

    fn random_spd(dim: usize, stream: &mut RandomStream) -> Mat {
        let b = stream.normal_matrix(dim, dim);
        b.t().dot(&b) + Mat::eye(dim)
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let m = Mat::eye(3);
        let rhs = array![[1.0], [2.0], [-3.0]];
        let x = solve_spd(&m.view(), &rhs.view()).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn scalar_solve() {
        let m = array![[4.0]];
        let rhs = array![[2.0]];
        let x = solve_spd(&m.view(), &rhs.view()).unwrap();
        assert!((x[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_spd_solve_residual() {
        let mut s = RandomStream::new(3);
        for dim in [2, 5, 16, 64] {
            let m = random_spd(dim, &mut s);
            let rhs = s.normal_matrix(dim, 3);
            let x = solve_spd(&m.view(), &rhs.view()).unwrap();
            let res = relative_residual(&m.view(), &x.view(), &rhs.view());
            assert!(res <= 1e-10, "dim {dim}: residual {res}");
        }
    }

    #[test]
    fn non_spd_is_rejected() {
        let m = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        let rhs = array![[1.0], [1.0]];
        match solve_spd(&m.view(), &rhs.view()) {
            Err(NumericsError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn top_eigen_diagonal_case() {
        let m = array![[0.8, 0.0], [0.0, 0.5]];
        let e = top_eigenpair(&m.view(), 1e-10, 10_000).unwrap();
        assert!((e.value - 0.8).abs() < 1e-8);
        assert!((e.vector[0] - 1.0).abs() < 1e-6 && e.vector[1].abs() < 1e-6);
        assert!(!e.degenerate);
    }

    #[test]
    fn top_eigen_identity_is_degenerate() {
        let e = top_eigenpair(&Mat::eye(2).view(), 1e-8, 10_000).unwrap();
        assert!((e.value - 1.0).abs() < 1e-10);
        assert!(e.degenerate);
    }

    #[test]
    fn top_eigen_rank_one() {
        let v = array![0.6, 0.8];
        let m = outer(&v.view(), &v.view());
        let e = top_eigenpair(&m.view(), 1e-10, 10_000).unwrap();
        assert!((e.value - 1.0).abs() < 1e-10);
        assert!((e.vector[0] - 0.6).abs() < 1e-8);
        assert!((e.vector[1] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn top_eigen_known_spectrum() {
        // Q Λ Qᵀ with a Householder-style orthogonal Q.
        let mut s = RandomStream::new(11);
        for _ in 0..10 {
            let dim = 6;
            let w = s.standard_normal(dim);
            let w = &w / w.dot(&w).sqrt();
            let q = Mat::eye(dim) - 2.0 * outer(&w.view(), &w.view());
            let evs = [5.0, 3.0, 2.0, 1.0, 0.5, 0.1];
            let mut lam = Mat::zeros((dim, dim));
            for (i, &e) in evs.iter().enumerate() {
                lam[[i, i]] = e;
            }
            let m = q.dot(&lam).dot(&q.t());
            let e = top_eigenpair(&m.view(), 1e-10, 10_000).unwrap();
            assert!((e.value - 5.0).abs() < 1e-8, "value {}", e.value);
            let resid = (&m.dot(&e.vector) - &(&e.vector * e.value))
                .mapv(f64::abs)
                .fold(0.0f64, |a, &b| a.max(b));
            assert!(resid < 1e-8);
        }
    }

    #[test]
    fn logdet_matches_direct_2x2() {
        let m = array![[2.0, 0.3], [0.3, 1.5]];
        let det: f64 = 2.0 * 1.5 - 0.09;
        assert!((logdet_spd(&m.view()).unwrap() - det.ln()).abs() < 1e-12);
    }
}

//! Dense least squares and symmetric eigen routines shared by every stage.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Threshold on `|R_jj|` of the column-equilibrated design below which a
/// column is treated as linearly dependent on its predecessors.
const RANK_TOL: f64 = 1e-10;

/// Relative norm below which a centered column counts as constant.
const CONSTANT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
}

impl OlsFit {
    pub fn n_obs(&self) -> usize {
        self.fitted.len()
    }

    pub fn mse(&self) -> f64 {
        self.rss / self.n_obs() as f64
    }
}

/// Least squares of `y` on the columns of `design`, optionally with an
/// unpenalized intercept.
///
/// The intercept is handled by centering, the remaining columns are scaled to
/// unit norm and the system is solved through a thin QR factorization. A column
/// whose centered version vanishes, or whose diagonal entry in `R` falls below
/// `1e-10` after equilibration, is reported as [`Error::RankDeficient`].
pub fn ols(design: &DMatrix<f64>, y: &DVector<f64>, intercept: bool) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: y.len(),
        });
    }
    let needed = p + usize::from(intercept);
    if n < needed.max(1) {
        return Err(Error::TooFewRows {
            needed: needed.max(1),
            available: n,
        });
    }
    if design.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let ys = y.as_slice();
    let y_mean = if intercept { ys.iter().sum::<f64>() / n as f64 } else { 0.0 };

    if p == 0 {
        let fitted = DVector::from_element(n, y_mean);
        let residuals = y - &fitted;
        let rss = residuals.norm_squared();
        return Ok(OlsFit {
            intercept: y_mean,
            coefficients: DVector::zeros(0),
            fitted,
            residuals,
            rss,
        });
    }

    // Column-major working copy: centered, then scaled to unit norm.
    let mut work: Vec<f64> = design.as_slice().to_vec();
    let mut col_means = vec![0.0; p];
    let mut scales = vec![0.0; p];
    for (j, col) in work.chunks_exact_mut(n).enumerate() {
        let raw_norm = dot(col, col).sqrt();
        if intercept {
            col_means[j] = col.iter().sum::<f64>() / n as f64;
            col.iter_mut().for_each(|v| *v -= col_means[j]);
        }
        let norm = dot(col, col).sqrt();
        if norm == 0.0 || norm <= CONSTANT_TOL * raw_norm {
            return Err(Error::RankDeficient { column: j });
        }
        col.iter_mut().for_each(|v| *v /= norm);
        scales[j] = norm;
    }
    let mut resid: Vec<f64> = ys.iter().map(|v| v - y_mean).collect();

    // Modified Gram-Schmidt with the target carried along as an extra column,
    // which is backward stable for least squares.
    let mut r = vec![0.0; p * p];
    let mut qty = vec![0.0; p];
    for j in 0..p {
        let (done, rest) = work.split_at_mut((j + 1) * n);
        let qj = &mut done[j * n..];
        let rjj = dot(qj, qj).sqrt();
        if rjj < RANK_TOL {
            return Err(Error::RankDeficient { column: j });
        }
        r[j * p + j] = rjj;
        qj.iter_mut().for_each(|v| *v /= rjj);
        for (k, col) in rest.chunks_exact_mut(n).enumerate() {
            let rjk = dot(qj, col);
            r[j * p + j + 1 + k] = rjk;
            axpy(-rjk, qj, col);
        }
        let c = dot(qj, &resid);
        qty[j] = c;
        axpy(-c, qj, &mut resid);
    }
    // Back substitution on the upper-triangular R (row-major).
    let mut scaled = vec![0.0; p];
    for j in (0..p).rev() {
        let tail: f64 = (j + 1..p).map(|k| r[j * p + k] * scaled[k]).sum();
        scaled[j] = (qty[j] - tail) / r[j * p + j];
    }
    let coefficients = DVector::from_iterator(p, (0..p).map(|j| scaled[j] / scales[j]));
    let intercept_value = y_mean
        - coefficients
            .iter()
            .zip(&col_means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    let mut fitted = DVector::from_element(n, intercept_value);
    for (j, col) in design.as_slice().chunks_exact(n).enumerate() {
        axpy(coefficients[j], col, fitted.as_mut_slice());
    }
    let residuals = y - &fitted;
    let rss = residuals.norm_squared();
    Ok(OlsFit {
        intercept: intercept_value,
        coefficients,
        fitted,
        residuals,
        rss,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums break the dependency chain of a serial reduction.
    let mut acc = [0.0; 4];
    let (a4, a_rest) = a.split_at(a.len() / 4 * 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = a_rest.iter().zip(b_rest).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// nonincreasing order and eigenvectors as matching columns.
pub fn symmetric_eigen_desc(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Leading `k` eigenpairs of a symmetric positive semidefinite matrix by
/// Lanczos iteration with full reorthogonalization.
///
/// Returns `None` when the Krylov space closes before `k` pairs converge or
/// the pairs fail the residual check `||A v - l v|| <= tol * l_max`; callers
/// fall back to the dense solver in that case.
pub fn leading_eigenpairs(a: &DMatrix<f64>, k: usize, tol: f64) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if k == 0 || k > n || n < 8 {
        return None;
    }
    let max_steps = n;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_steps.min(64));
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    // Deterministic start vector with no special alignment to coordinate axes.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract());
    v /= v.norm();
    let scale = a.diagonal().iter().copied().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);

    let check_every = 4;
    let min_steps = (2 * k + 8).min(max_steps);
    for step in 0..max_steps {
        let mut w = a * &v;
        let alpha = v.dot(&w);
        w.axpy(-alpha, &v, 1.0);
        if let Some(prev) = basis.last() {
            w.axpy(-betas[betas.len() - 1], prev, 1.0);
        }
        basis.push(v.clone());
        alphas.push(alpha);
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let beta = w.norm();
        let m = step + 1;
        if beta <= 1e-13 * scale && m < n {
            return None;
        }
        if m == max_steps || (m >= min_steps && (m - min_steps).is_multiple_of(check_every)) {
            let tri = DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    alphas[i]
                } else if i + 1 == j {
                    betas[i]
                } else if j + 1 == i {
                    betas[j]
                } else {
                    0.0
                }
            });
            let (theta, s) = symmetric_eigen_desc(tri);
            let lmax = theta[0].abs().max(f64::MIN_POSITIVE);
            let converged = (0..k).all(|i| (beta * s[(m - 1, i)]).abs() <= tol * lmax);
            if converged || m == max_steps {
                let mut vectors = DMatrix::zeros(n, k);
                for i in 0..k {
                    let mut col = vectors.column_mut(i);
                    for (j, b) in basis.iter().enumerate() {
                        col.axpy(s[(j, i)], b, 1.0);
                    }
                    let norm = col.norm();
                    col /= norm;
                }
                let values: Vec<f64> = theta[..k].to_vec();
                // Independent residual check on the assembled vectors.
                for i in 0..k {
                    let col = vectors.column(i);
                    let resid = (a * col - col * values[i]).norm();
                    if resid > tol * lmax {
                        return None;
                    }
                }
                return Some((values, vectors));
            }
        }
        betas.push(beta);
        v = w / beta;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn ols_recovers_exact_line() {
        let z = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = z.column(0).map(|v| 3.0 + 2.0 * v);
        let fit = ols(&z, &y, true).unwrap();
        assert_abs_diff_eq!(fit.intercept, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[0], 2.0, epsilon = 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let z = random_matrix(60, 4, 3);
        let y = DVector::from_fn(60, |i, _| (i as f64).sin() * 5.0);
        let fit = ols(&z, &y, true).unwrap();
        let ortho = z.tr_mul(&fit.residuals);
        assert!(ortho.amax() < 1e-8);
        assert!(fit.residuals.sum().abs() < 1e-8);
    }

    #[test]
    fn ols_intercept_only() {
        let z = DMatrix::zeros(4, 0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]);
        let fit = ols(&z, &y, true).unwrap();
        assert!(fit.fitted.iter().all(|v| (v - 3.0).abs() < 1e-15));
    }

    #[test]
    fn ols_flags_constant_and_collinear_columns() {
        let mut z = random_matrix(20, 2, 1);
        z.column_mut(1).fill(4.0);
        let y = DVector::from_fn(20, |i, _| i as f64);
        assert!(matches!(ols(&z, &y, true), Err(Error::RankDeficient { column: 1 })));

        let base = random_matrix(20, 1, 2);
        let z = DMatrix::from_fn(20, 2, |i, j| if j == 0 { base[i] } else { -3.0 * base[i] });
        assert!(matches!(ols(&z, &y, true), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn lanczos_matches_dense() {
        let x = random_matrix(90, 300, 11);
        let gram = &x * x.transpose();
        let (dense_vals, dense_vecs) = symmetric_eigen_desc(gram.clone());
        let (vals, vecs) = leading_eigenpairs(&gram, 4, 1e-12).expect("converges");
        for i in 0..4 {
            assert!((vals[i] - dense_vals[i]).abs() <= 1e-10 * dense_vals[0]);
            let dot = vecs.column(i).dot(&dense_vecs.column(i)).abs();
            assert!((dot - 1.0).abs() < 1e-8, "vector {i}: {dot}");
        }
    }

    #[test]
    fn lanczos_low_rank_gives_up_gracefully() {
        let f = random_matrix(40, 1, 5);
        let b = random_matrix(1, 30, 6);
        let x = &f * &b;
        let gram = &x * x.transpose();
        // The Krylov space closes early; the caller must use the dense path.
        assert!(leading_eigenpairs(&gram, 1, 1e-12).is_none());
    }
}

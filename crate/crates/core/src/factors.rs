//! Principal-component factor extraction and factor-count selection.
//!
//! Factors are normalized so that `Ĝ'Ĝ / T = I_k`, with loadings
//! `X'Ĝ / T`. Each loading column is signed so its largest-magnitude entry is
//! positive, which makes extraction deterministic.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{leading_eigenpairs, symmetric_eigen_desc};

/// Relative residual accepted from the iterative eigen solver.
const LANCZOS_TOL: f64 = 1e-11;

/// Eigenvalues closer than this (relative to the largest) form a tied block.
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// `Ĝ'Ĝ / T = I`.
    FactorsOrthonormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EigenSolver {
    /// Full symmetric decomposition; the complete spectrum is reported.
    #[default]
    Dense,
    /// Lanczos for the leading pairs, falling back to `Dense` when it cannot
    /// certify them. Only the leading eigenvalues are reported.
    Leading,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    /// `T x k` factor matrix.
    pub factors: DMatrix<f64>,
    /// `N x k` loadings.
    pub loadings: DMatrix<f64>,
    /// Eigenvalues of `X'X / T` in nonincreasing order. All `min(T, N)` of
    /// them under [`EigenSolver::Dense`], the leading `k` otherwise.
    pub eigenvalues: Vec<f64>,
    /// `trace(X'X / T)`, the total variation.
    pub total_variance: f64,
    pub normalization: Normalization,
    /// Share of the total variation carried by each extracted component.
    pub explained: Vec<f64>,
}

impl FactorSet {
    pub fn k(&self) -> usize {
        self.factors.ncols()
    }

    /// Factor row at 0-based position `t` of the input matrix.
    pub fn row(&self, t: usize) -> Vec<f64> {
        self.factors.row(t).iter().copied().collect()
    }

    /// Loadings and explained shares as CSV: `series,share,l1..lk`.
    pub fn loadings_csv(&self, names: &[String]) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["series".to_string()];
        header.extend((1..=self.k()).map(|j| format!("loading_{j}")));
        wtr.write_record(&header)?;
        let mut shares = vec!["explained_share".to_string()];
        shares.extend(self.explained.iter().map(|v| v.to_string()));
        wtr.write_record(&shares)?;
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.loadings.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn extract_factors(x: &DMatrix<f64>, k: usize) -> Result<FactorSet> {
    extract_factors_with(x, k, EigenSolver::Dense)
}

/// Top-`k` principal components of the `T x N` matrix `x`.
///
/// The `T x T` Gram matrix is decomposed when `T <= N`, otherwise the
/// `N x N` covariance; both give the same factors up to rounding.
pub fn extract_factors_with(x: &DMatrix<f64>, k: usize, solver: EigenSolver) -> Result<FactorSet> {
    let (t, n) = x.shape();
    let max = t.min(n);
    if k == 0 || k > max {
        return Err(Error::KTooLarge { k, max });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let tf = t as f64;
    let total_variance = x.norm_squared() / tf;

    let gram_side = t <= n;
    let sym = if gram_side {
        x * x.transpose() / tf
    } else {
        x.tr_mul(x) / tf
    };
    let (eigenvalues, vectors) = match solver {
        EigenSolver::Leading => match leading_eigenpairs(&sym, k, LANCZOS_TOL) {
            Some((vals, vecs)) => (vals, vecs),
            None => {
                let (vals, vecs) = symmetric_eigen_desc(sym);
                (vals[..k].to_vec(), vecs.columns(0, k).into_owned())
            }
        },
        EigenSolver::Dense => {
            let (vals, vecs) = symmetric_eigen_desc(sym);
            (vals, vecs.columns(0, k).into_owned())
        }
    };
    let eigenvalues: Vec<f64> = eigenvalues.into_iter().map(|v| v.max(0.0)).collect();
    let lmax = eigenvalues[0];

    let (mut factors, mut loadings) = if gram_side {
        let factors = vectors * tf.sqrt();
        let loadings = x.tr_mul(&factors) / tf;
        (factors, loadings)
    } else {
        let rank_floor = 1e-12 * lmax.max(f64::MIN_POSITIVE);
        if let Some(j) = (0..k).find(|&j| eigenvalues[j] <= rank_floor) {
            return Err(Error::KTooLarge { k, max: j });
        }
        let mut factors = x * &vectors;
        for (j, mut col) in factors.column_iter_mut().enumerate() {
            col /= eigenvalues[j].sqrt();
        }
        let loadings = x.tr_mul(&factors) / tf;
        (factors, loadings)
    };

    fix_signs(&mut factors, &mut loadings);
    order_ties(&eigenvalues[..k], lmax, &mut factors, &mut loadings);

    let explained = eigenvalues[..k]
        .iter()
        .map(|v| if total_variance > 0.0 { v / total_variance } else { 0.0 })
        .collect();
    Ok(FactorSet {
        factors,
        loadings,
        eigenvalues,
        total_variance,
        normalization: Normalization::FactorsOrthonormal,
        explained,
    })
}

fn fix_signs(factors: &mut DMatrix<f64>, loadings: &mut DMatrix<f64>) {
    for j in 0..factors.ncols() {
        let pick = |m: &DMatrix<f64>| {
            m.column(j)
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()).then(Ordering::Less))
                .unwrap_or(0.0)
        };
        let mut pivot = pick(loadings);
        if pivot == 0.0 {
            pivot = pick(factors);
        }
        if pivot < 0.0 {
            factors.column_mut(j).neg_mut();
            loadings.column_mut(j).neg_mut();
        }
    }
}

/// Within blocks of (numerically) equal eigenvalues, orders components by
/// their sign-fixed loading vectors in descending lexicographic order.
fn order_ties(eigenvalues: &[f64], lmax: f64, factors: &mut DMatrix<f64>, loadings: &mut DMatrix<f64>) {
    let k = eigenvalues.len();
    let tol = TIE_TOL * lmax.max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && (eigenvalues[start] - eigenvalues[end]).abs() <= tol {
            end += 1;
        }
        if end - start > 1 {
            let mut idx: Vec<usize> = (start..end).collect();
            idx.sort_by(|&a, &b| {
                let la = loadings.column(a);
                let lb = loadings.column(b);
                la.iter()
                    .zip(lb.iter())
                    .map(|(x, y)| y.total_cmp(x))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            });
            let f_old = factors.clone();
            let l_old = loadings.clone();
            for (pos, &src) in idx.iter().enumerate() {
                factors.set_column(start + pos, &f_old.column(src));
                loadings.set_column(start + pos, &l_old.column(src));
            }
        }
        start = end;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorCountMethod {
    Fixed,
    EigenRatio,
    BaiNgIc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCountChoice {
    pub method: FactorCountMethod,
    pub k: usize,
    /// Criterion value for each candidate `k = 1, 2, ...`.
    pub diagnostics: Vec<f64>,
}

/// Chooses the number of factors in `1..=k_max`.
///
/// `EigenRatio` maximizes `λ_k / λ_{k+1}` over `k < k_max`, treating a zero
/// denominator as infinite. `BaiNgIc` minimizes
/// `ln V(k) + k (N + T) / (N T) ln min(N, T)` with `V(k)` the mean squared
/// residual of the rank-`k` approximation.
pub fn select_num_factors(x: &DMatrix<f64>, k_max: usize, method: FactorCountMethod) -> Result<FactorCountChoice> {
    let (t, n) = x.shape();
    let max = t.min(n);
    if k_max == 0 || k_max > max {
        return Err(Error::KTooLarge { k: k_max, max });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if method == FactorCountMethod::Fixed {
        return Ok(FactorCountChoice {
            method,
            k: k_max,
            diagnostics: Vec::new(),
        });
    }
    let tf = t as f64;
    let sym = if t <= n { x * x.transpose() / tf } else { x.tr_mul(x) / tf };
    let (vals, _) = symmetric_eigen_desc(sym);
    let vals: Vec<f64> = vals.into_iter().map(|v| v.max(0.0)).collect();
    let zero = 1e-12 * vals[0].max(f64::MIN_POSITIVE);

    let (k, diagnostics) = match method {
        FactorCountMethod::EigenRatio => {
            if k_max == 1 {
                (1, vec![])
            } else {
                let ratios: Vec<f64> = (0..k_max - 1)
                    .map(|j| {
                        if vals[j + 1] <= zero {
                            f64::INFINITY
                        } else {
                            vals[j] / vals[j + 1]
                        }
                    })
                    .collect();
                (argmax_first(&ratios) + 1, ratios)
            }
        }
        FactorCountMethod::BaiNgIc => {
            let total: f64 = x.norm_squared() / tf;
            let (nf, tf) = (n as f64, t as f64);
            let penalty = (nf + tf) / (nf * tf) * nf.min(tf).ln();
            let mut explained = 0.0;
            let ic: Vec<f64> = (1..=k_max)
                .map(|kk| {
                    explained += vals[kk - 1];
                    let v = ((total - explained) / nf).max(f64::MIN_POSITIVE);
                    v.ln() + kk as f64 * penalty
                })
                .collect();
            let neg: Vec<f64> = ic.iter().map(|v| -v).collect();
            (argmax_first(&neg) + 1, ic)
        }
        FactorCountMethod::Fixed => unreachable!(),
    };
    Ok(FactorCountChoice { method, k, diagnostics })
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Thin SVD `B = U S V'` with singular values in nonincreasing order and
/// each column of `V` signed so its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SvdParts {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd_parts(b: &DMatrix<f64>) -> Result<SvdParts> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let svd = SVD::new(b.clone(), true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V'");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut u_sorted = DMatrix::zeros(u.nrows(), r);
    let mut v_sorted = DMatrix::zeros(v_t.ncols(), r);
    let mut s = Vec::with_capacity(r);
    for (pos, &src) in order.iter().enumerate() {
        let mut vc = v_t.row(src).transpose();
        let mut uc = u.column(src).into_owned();
        let pivot = vc
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()).then(Ordering::Less))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            vc.neg_mut();
            uc.neg_mut();
        }
        v_sorted.set_column(pos, &vc);
        u_sorted.set_column(pos, &uc);
        s.push(svd.singular_values[src]);
    }
    Ok(SvdParts {
        u: u_sorted,
        singular_values: s,
        v: v_sorted,
    })
}

/// Right singular matrix `V` of an `N x k` loading matrix.
pub fn svd_rotation(loadings: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(svd_parts(loadings)?.v)
}

/// The `k x k` matrix taking estimated factors into the coordinates of a
/// reference loading matrix `B = U S V'`: each factor is first signed to agree
/// with the matching column of `U` (through its loadings), then rotated by
/// `V`. Multiply factor rows on the right by it.
pub fn reference_rotation(factors: &FactorSet, reference: &SvdParts) -> Result<DMatrix<f64>> {
    let k = factors.k();
    if reference.v.nrows() != k || reference.u.nrows() != factors.loadings.nrows() {
        return Err(Error::LengthMismatch {
            left: k,
            right: reference.v.nrows(),
        });
    }
    let mut m = reference.v.transpose();
    for j in 0..k.min(reference.u.ncols()) {
        if factors.loadings.column(j).dot(&reference.u.column(j)) < 0.0 {
            m.row_mut(j).neg_mut();
        }
    }
    Ok(m)
}

/// Factors expressed in the coordinates of `reference`, i.e. `V g_t` for
/// every row; see [`reference_rotation`].
pub fn rotate_to_reference(factors: &FactorSet, reference: &SvdParts) -> Result<DMatrix<f64>> {
    Ok(&factors.factors * reference_rotation(factors, reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_error(fs: &FactorSet) -> f64 {
        let t = fs.factors.nrows() as f64;
        let gram = fs.factors.tr_mul(&fs.factors) / t;
        (gram - DMatrix::identity(fs.k(), fs.k())).amax()
    }

    #[test]
    fn rank_one_panel_is_recovered() {
        let f = random_matrix(30, 1, 1);
        let b = random_matrix(1, 12, 2);
        let x = &f * &b;
        let fs = extract_factors(&x, 1).unwrap();
        let recon = &fs.factors * fs.loadings.transpose();
        assert!((&x - recon).norm() < 1e-8);
        let corr = fs.factors.column(0).dot(&f.column(0)) / (fs.factors.column(0).norm() * f.column(0).norm());
        assert!((corr.abs() - 1.0).abs() < 1e-10);
        let pick = fs.loadings.column(0).iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
        assert!(pick > 0.0);
    }

    #[test]
    fn full_decomposition_explains_everything() {
        for (t, n) in [(10, 25), (25, 10), (12, 12)] {
            let x = random_matrix(t, n, (t * n) as u64);
            let k = t.min(n);
            let fs = extract_factors(&x, k).unwrap();
            let total: f64 = fs.explained.iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "{t}x{n}: {total}");
            assert!(orthonormality_error(&fs) < 1e-8);
            assert!(fs.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn both_sides_agree() {
        let x = random_matrix(20, 15, 4);
        let a = extract_factors(&x, 3).unwrap();
        let b = extract_factors(&x.transpose().transpose(), 3).unwrap();
        assert_eq!(a, b);
        let wide = random_matrix(15, 20, 5);
        let tall = wide.transpose();
        let fw = extract_factors(&wide, 3).unwrap();
        let ft = extract_factors(&tall, 3).unwrap();
        for j in 0..3 {
            assert!((fw.eigenvalues[j] * 15.0 - ft.eigenvalues[j] * 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn leading_solver_matches_dense() {
        let f = random_matrix(120, 3, 8);
        let b = random_matrix(3, 400, 9) * 2.0;
        let x = &f * &b + random_matrix(120, 400, 10);
        let dense = extract_factors_with(&x, 3, EigenSolver::Dense).unwrap();
        let fast = extract_factors_with(&x, 3, EigenSolver::Leading).unwrap();
        assert!((&dense.factors - &fast.factors).amax() < 1e-6);
        assert!((dense.explained[0] - fast.explained[0]).abs() < 1e-12);
    }

    #[test]
    fn eigen_residuals_are_small() {
        let x = random_matrix(40, 60, 12);
        let sym = &x * x.transpose() / 40.0;
        let (vals, vecs) = symmetric_eigen_desc(sym.clone());
        for j in 0..40 {
            let v = vecs.column(j);
            let resid = (&sym * v - v * vals[j]).norm() / vals[0];
            assert!(resid < 1e-10);
        }
    }

    #[test]
    fn column_permutation_invariance() {
        let x = random_matrix(25, 9, 13);
        let perm: Vec<usize> = vec![3, 8, 0, 5, 1, 7, 2, 6, 4];
        let xp = x.select_columns(perm.iter());
        let a = extract_factors(&x, 3).unwrap();
        let b = extract_factors(&xp, 3).unwrap();
        assert!((&a.factors - &b.factors).amax() < 1e-8);
    }

    #[test]
    fn k_too_large() {
        let x = random_matrix(5, 3, 1);
        assert_eq!(extract_factors(&x, 4).unwrap_err(), Error::KTooLarge { k: 4, max: 3 });
        assert!(matches!(select_num_factors(&x, 4, FactorCountMethod::EigenRatio), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn eigen_ratio_detects_exact_rank_one() {
        let f = random_matrix(30, 1, 3);
        let b = random_matrix(1, 20, 4);
        let choice = select_num_factors(&(&f * &b), 6, FactorCountMethod::EigenRatio).unwrap();
        assert_eq!(choice.k, 1);
        assert!(choice.diagnostics[0].is_infinite());
    }

    #[test]
    fn tied_eigenvalues_ordered_deterministically() {
        // Two orthogonal components with identical variance.
        let t = 8;
        let x = DMatrix::from_fn(t, 4, |i, j| match (i % 4, j) {
            (0, 0) | (1, 1) => 1.0,
            (2, 0) | (3, 1) => -1.0,
            _ => 0.0,
        });
        let a = extract_factors(&x, 2).unwrap();
        assert!((a.eigenvalues[0] - a.eigenvalues[1]).abs() < 1e-12);
        let b = extract_factors(&x, 2).unwrap();
        assert_eq!(a, b);
        let l = &a.loadings;
        let first_differs = (0..4).map(|i| l[(i, 0)].total_cmp(&l[(i, 1)])).find(|o| *o != Ordering::Equal);
        assert_ne!(first_differs, Some(Ordering::Less));
    }

    /// Best rank-k approximation error by enumeration over factor bases built
    /// from all subsets of the right singular basis plus random perturbations.
    fn brute_force_rank_k_error(x: &DMatrix<f64>, k: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = x.nrows();
        let mut best = f64::INFINITY;
        for _ in 0..4000 {
            // random rank-k column space A (t x k), optimal B = pinv(A) X
            let a = DMatrix::from_fn(t, k, |_, _| rng.random_range(-1.0..1.0));
            let qr = a.qr();
            let q = qr.q();
            let proj = &q * (q.transpose() * x);
            let err = (x - proj).norm_squared();
            best = best.min(err);
        }
        best
    }

    #[test]
    fn eckart_young_spot_check() {
        for seed in 0..5 {
            let x = random_matrix(6, 4, 100 + seed);
            for k in 1..=3 {
                let fs = extract_factors(&x, k).unwrap();
                let err = (&x - &fs.factors * fs.loadings.transpose()).norm_squared();
                let brute = brute_force_rank_k_error(&x, k, seed);
                assert!(err <= brute + 1e-12, "k={k}: {err} > {brute}");
                let mut sv: Vec<f64> = x.clone().svd(false, false).singular_values.iter().copied().collect();
                sv.sort_by(|a, b| b.total_cmp(a));
                let optimum: f64 = sv[k..].iter().map(|s| s * s).sum();
                assert!((err - optimum).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn svd_rotation_properties() {
        let b = random_matrix(50, 3, 21);
        let parts = svd_parts(&b).unwrap();
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(parts.singular_values.clone()));
        let recon = &parts.u * s * parts.v.transpose();
        assert!((&b - recon).norm() < 1e-8);
        let v = svd_rotation(&b).unwrap();
        assert!((v.tr_mul(&v) - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn svd_rotation_of_orthogonal_columns_is_signed_permutation() {
        let mut b = DMatrix::zeros(6, 3);
        b[(0, 0)] = 3.0;
        b[(2, 1)] = 2.0;
        b[(5, 2)] = 1.0;
        let v = svd_rotation(&b).unwrap();
        assert!((v.abs() - DMatrix::identity(3, 3)).amax() < 1e-12);
    }
}

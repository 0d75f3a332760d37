//! L1-penalized forecast regression by cyclic coordinate descent.
//!
//! The objective is `(1/(2n)) * ||y - a - Z b||^2 + lambda * ||b||_1` with the
//! columns of `Z` centred and scaled to unit variance (divisor `n`) and `y`
//! centred; the intercept is never penalized. Coefficients are reported on the
//! original scale of the design.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ForecastModel, Method, TrainingWindow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaSelection {
    Fixed(f64),
    /// Fit the path on the head of the sample and keep the penalty with the
    /// smallest squared error on the trailing `holdout_fraction` of rows.
    Validation { holdout_fraction: f64 },
    /// K-fold cross-validation over contiguous blocks of rows. With
    /// `one_se`, the largest penalty whose mean error is within one standard
    /// error of the minimum is kept instead of the minimizer.
    KFold { folds: usize, one_se: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Explicit penalty grid; when absent a log-spaced grid from `lambda_max`
    /// down to `min_ratio * lambda_max` is used.
    pub grid: Option<Vec<f64>>,
    pub grid_len: usize,
    pub min_ratio: f64,
    /// Stop once no coefficient (standardized scale) moves more than this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub selection: LambdaSelection,
    /// Re-estimate the active set by OLS after selection.
    pub refit: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            grid: None,
            grid_len: 50,
            min_ratio: 1e-3,
            tol: 1e-8,
            max_sweeps: 10_000,
            selection: LambdaSelection::Validation { holdout_fraction: 0.2 },
            refit: false,
        }
    }
}

impl LassoConfig {
    pub fn fixed(lambda: f64) -> Self {
        Self {
            selection: LambdaSelection::Fixed(lambda),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.tol > 0.0) || self.max_sweeps == 0 {
            return bad("lasso tolerance and sweep limit must be positive");
        }
        if self.grid.is_none() && (self.grid_len == 0 || !(self.min_ratio > 0.0 && self.min_ratio < 1.0)) {
            return bad("lasso grid needs grid_len >= 1 and 0 < min_ratio < 1");
        }
        if let Some(g) = &self.grid {
            if g.is_empty() || g.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return bad("lasso grid values must be finite and non-negative");
            }
        }
        match self.selection {
            LambdaSelection::Fixed(l) if !(l.is_finite() && l >= 0.0) => bad("lambda must be finite and >= 0"),
            LambdaSelection::Validation { holdout_fraction: f } if !(f > 0.0 && f < 1.0) => {
                bad("holdout fraction must lie in (0, 1)")
            }
            LambdaSelection::KFold { folds, .. } if folds < 2 => bad("need at least two folds"),
            _ => Ok(()),
        }
    }
}

/// Centred, unit-variance copy of a design together with what is needed to map
/// coefficients back.
struct Standardized {
    z: DMatrix<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
    yc: DVector<f64>,
}

impl Standardized {
    fn new(design: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let n = design.nrows() as f64;
        let mut z = design.clone();
        let mut means = Vec::with_capacity(z.ncols());
        let mut scales = Vec::with_capacity(z.ncols());
        for mut col in z.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
            let s = (col.norm_squared() / n).sqrt();
            let spread = m.abs().max(1.0);
            if s > 1e-12 * spread {
                col /= s;
                scales.push(s);
            } else {
                // Constant column: left out of the descent entirely.
                col.fill(0.0);
                scales.push(0.0);
            }
            means.push(m);
        }
        let y_mean = y.mean();
        let yc = y.add_scalar(-y_mean);
        Self { z, means, scales, y_mean, yc }
    }

    fn n(&self) -> f64 {
        self.z.nrows() as f64
    }

    fn lambda_max(&self) -> f64 {
        let g = self.z.tr_mul(&self.yc) / self.n();
        g.amax()
    }

    fn objective(&self, beta: &DVector<f64>, resid: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * resid.norm_squared() / self.n() + lambda * beta.lp_norm(1)
    }

    /// Coordinate descent from `beta`, updating it and the residual in place.
    /// Returns `(converged, sweeps)`.
    fn descend(
        &self,
        beta: &mut DVector<f64>,
        resid: &mut DVector<f64>,
        lambda: f64,
        tol: f64,
        max_sweeps: usize,
        mut trace: Option<&mut Vec<f64>>,
    ) -> (bool, usize) {
        let n = self.n();
        for sweep in 1..=max_sweeps {
            let mut max_change = 0.0f64;
            for j in 0..self.z.ncols() {
                if self.scales[j] == 0.0 {
                    continue;
                }
                let col = self.z.column(j);
                let old = beta[j];
                let rho = col.dot(resid) / n + old;
                let new = soft_threshold(rho, lambda);
                if new != old {
                    resid.axpy(old - new, &col, 1.0);
                    beta[j] = new;
                    max_change = max_change.max((new - old).abs());
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(beta, resid, lambda));
            }
            if max_change < tol {
                return (true, sweep);
            }
        }
        (false, max_sweeps)
    }

    fn unscale(&self, beta: &DVector<f64>) -> (f64, Vec<f64>) {
        let coefs: Vec<f64> = beta
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean - coefs.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        (intercept, coefs)
    }
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

fn check_inputs(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: design.nrows(),
            right: y.len(),
        });
    }
    if design.nrows() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            available: design.nrows(),
        });
    }
    if design.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    check_inputs(design, y)?;
    Ok(Standardized::new(design, y).lambda_max())
}

fn grid_for(config: &LassoConfig, lmax: f64) -> Vec<f64> {
    if let Some(g) = &config.grid {
        let mut g = g.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        return g;
    }
    if config.grid_len == 1 || lmax == 0.0 {
        return vec![lmax];
    }
    let lo = (lmax * config.min_ratio).ln();
    let hi = lmax.ln();
    let steps = (config.grid_len - 1) as f64;
    (0..config.grid_len)
        .map(|i| (hi + (lo - hi) * i as f64 / steps).exp())
        .collect()
}

struct PathPoint {
    beta: DVector<f64>,
    resid: DVector<f64>,
    converged: bool,
}

/// Solves at each penalty in `lambdas` (descending), warm-starting each from
/// the previous solution.
fn solve_path(std: &Standardized, lambdas: &[f64], config: &LassoConfig, mut visit: impl FnMut(usize, &PathPoint)) -> PathPoint {
    let mut point = PathPoint {
        beta: DVector::zeros(std.z.ncols()),
        resid: std.yc.clone(),
        converged: true,
    };
    for (i, &lambda) in lambdas.iter().enumerate() {
        let (ok, _) = std.descend(&mut point.beta, &mut point.resid, lambda, config.tol, config.max_sweeps, None);
        point.converged = ok;
        visit(i, &point);
    }
    point
}

/// Mean held-out squared error per penalty, with fold-to-fold standard
/// errors; folds are contiguous blocks weighted by their size.
fn kfold_lambda(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    folds: usize,
    one_se: bool,
    config: &LassoConfig,
) -> Result<f64> {
    let n = design.nrows();
    if n < 2 * folds || n / folds < 1 {
        return Err(Error::TooFewRows {
            needed: 2 * folds,
            available: n,
        });
    }
    let mut fold_mse = vec![vec![0.0; grid.len()]; folds];
    let mut sizes = vec![0usize; folds];
    for f in 0..folds {
        let lo = f * n / folds;
        let hi = (f + 1) * n / folds;
        sizes[f] = hi - lo;
        let keep: Vec<usize> = (0..n).filter(|i| *i < lo || *i >= hi).collect();
        let train_x = design.select_rows(keep.iter());
        let train_y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| y[i]));
        let std = Standardized::new(&train_x, &train_y);
        let test_x = design.rows(lo, hi - lo);
        let test_y = y.rows(lo, hi - lo);
        solve_path(&std, grid, config, |i, p| {
            let (a, b) = std.unscale(&p.beta);
            let pred = test_x * DVector::from_vec(b);
            fold_mse[f][i] = (pred.add_scalar(a) - test_y).norm_squared() / (hi - lo) as f64;
        });
    }
    let w: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
    let cvm: Vec<f64> = (0..grid.len())
        .map(|i| (0..folds).map(|f| w[f] * fold_mse[f][i]).sum())
        .collect();
    let mut best = 0;
    for i in 1..grid.len() {
        if cvm[i] < cvm[best] {
            best = i;
        }
    }
    if !one_se {
        return Ok(grid[best]);
    }
    let var: f64 = (0..folds).map(|f| w[f] * (fold_mse[f][best] - cvm[best]).powi(2)).sum();
    let se = (var / (folds - 1) as f64).sqrt();
    // The grid is descending, so the first index within the band is the
    // largest qualifying penalty.
    let pick = (0..=best).find(|&i| cvm[i] <= cvm[best] + se).unwrap_or(best);
    Ok(grid[pick])
}

/// Fits the penalized regression, choosing the penalty as configured.
pub fn lasso_fit(design: &DMatrix<f64>, y: &DVector<f64>, config: &LassoConfig) -> Result<ForecastModel> {
    config.validate()?;
    check_inputs(design, y)?;
    let full = Standardized::new(design, y);
    let grid = grid_for(config, full.lambda_max());

    let lambda = match config.selection {
        LambdaSelection::Fixed(l) => l,
        LambdaSelection::Validation { holdout_fraction } => {
            let n = design.nrows();
            let hold = ((n as f64) * holdout_fraction).ceil() as usize;
            let train = n.saturating_sub(hold);
            if hold == 0 || train < 3 {
                return Err(Error::TooFewRows {
                    needed: 4,
                    available: n,
                });
            }
            let head = Standardized::new(&design.rows(0, train).into_owned(), &y.rows(0, train).into_owned());
            let tail_x = design.rows(train, hold);
            let tail_y = y.rows(train, hold);
            let mut best = (f64::INFINITY, grid[0]);
            solve_path(&head, &grid, config, |i, p| {
                let (a, b) = head.unscale(&p.beta);
                let pred = tail_x * DVector::from_vec(b);
                let err = (pred.add_scalar(a) - tail_y).norm_squared();
                if err < best.0 {
                    best = (err, grid[i]);
                }
            });
            best.1
        }
        LambdaSelection::KFold { folds, one_se } => kfold_lambda(design, y, &grid, folds, one_se, config)?,
    };

    let path: Vec<f64> = grid.iter().copied().filter(|&l| l > lambda).chain([lambda]).collect();
    let point = solve_path(&full, &path, config, |_, _| {});
    if !point.converged {
        warn!("coordinate descent stopped after {} sweeps at lambda {lambda:.3e}", config.max_sweeps);
    }
    let (intercept, coefficients) = full.unscale(&point.beta);
    let active: Vec<usize> = (0..coefficients.len()).filter(|&j| point.beta[j] != 0.0).collect();
    let n = design.nrows();
    let model = ForecastModel {
        method: Method::Linear,
        k: 0,
        q: 0,
        intercept,
        coefficients,
        active_set: Some(active),
        lambda: Some(lambda),
        converged: point.converged,
        insample_msfe: point.resid.norm_squared() / n as f64,
        window: TrainingWindow {
            first_row: 0,
            last_row: n - 1,
            n_obs: n,
        },
    };
    if config.refit {
        super::post_lasso_refit(&model, design, y)
    } else {
        Ok(model)
    }
}

/// Objective value after every sweep of a cold-started solve at `lambda`.
pub fn lasso_objective_trace(design: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, config: &LassoConfig) -> Result<Vec<f64>> {
    check_inputs(design, y)?;
    let std = Standardized::new(design, y);
    let mut beta = DVector::zeros(std.z.ncols());
    let mut resid = std.yc.clone();
    let mut trace = vec![std.objective(&beta, &resid, lambda)];
    std.descend(&mut beta, &mut resid, lambda, config.tol, config.max_sweeps, Some(&mut trace));
    Ok(trace)
}

/// Largest violation of the optimality conditions of `model` at its penalty:
/// `|z_j'r/n| <= lambda` for zero coefficients and `z_j'r/n = lambda * sign(b_j)`
/// otherwise, on the standardized design.
pub fn kkt_violation(design: &DMatrix<f64>, y: &DVector<f64>, model: &ForecastModel) -> Result<f64> {
    check_inputs(design, y)?;
    let lambda = model
        .lambda
        .ok_or_else(|| Error::InvalidConfig("model carries no penalty".into()))?;
    let std = Standardized::new(design, y);
    let beta = DVector::from_iterator(
        std.scales.len(),
        model.coefficients.iter().zip(&std.scales).map(|(b, s)| b * s),
    );
    let resid = &std.yc - &std.z * &beta;
    let grad = std.z.tr_mul(&resid) / std.n();
    let mut worst = 0.0f64;
    for j in 0..beta.len() {
        if std.scales[j] == 0.0 {
            continue;
        }
        let v = if beta[j] == 0.0 {
            (grad[j].abs() - lambda).max(0.0)
        } else {
            (grad[j] - lambda * beta[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::ols_fit;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, p, |_, j| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (1.0 + j as f64) * e + j as f64
        });
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            2.0 + 1.5 * z[(i, 0)] - 0.7 * z[(i, 1 % p)] + e
        });
        (z, y)
    }

    #[test]
    fn zero_at_lambda_max() {
        let (z, y) = problem(80, 5, 1);
        let lmax = lambda_max(&z, &y).unwrap();
        let m = lasso_fit(&z, &y, &LassoConfig::fixed(lmax)).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
        assert!(m.active_set.as_ref().unwrap().is_empty());
        assert_abs_diff_eq!(m.intercept, y.mean(), epsilon = 1e-12);
        let m = lasso_fit(&z, &y, &LassoConfig::fixed(lmax * 0.99)).unwrap();
        assert_eq!(m.active_set.unwrap().len(), 1);
    }

    #[test]
    fn zero_penalty_matches_ols() {
        let (z, y) = problem(60, 4, 2);
        let cfg = LassoConfig {
            tol: 1e-13,
            max_sweeps: 100_000,
            ..LassoConfig::fixed(0.0)
        };
        let m = lasso_fit(&z, &y, &cfg).unwrap();
        let o = ols_fit(&z, &y).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(m.coefficients[j], o.coefficients[j], epsilon = 1e-8);
        }
        assert_abs_diff_eq!(m.intercept, o.intercept, epsilon = 1e-8);
    }

    #[test]
    fn kkt_holds_on_the_grid() {
        let (z, y) = problem(100, 8, 3);
        let lmax = lambda_max(&z, &y).unwrap();
        for frac in [0.9, 0.5, 0.1, 0.01] {
            let cfg = LassoConfig {
                tol: 1e-12,
                ..LassoConfig::fixed(frac * lmax)
            };
            let m = lasso_fit(&z, &y, &cfg).unwrap();
            assert!(m.converged);
            assert!(kkt_violation(&z, &y, &m).unwrap() < 1e-8);
        }
    }

    #[test]
    fn validation_picks_a_grid_value() {
        let (z, y) = problem(120, 6, 4);
        let cfg = LassoConfig::default();
        let m = lasso_fit(&z, &y, &cfg).unwrap();
        let lmax = lambda_max(&z, &y).unwrap();
        let grid = grid_for(&cfg, lmax);
        assert!(grid.iter().any(|g| (g - m.lambda.unwrap()).abs() < 1e-15 * lmax));
        // The two true signals survive.
        let active = m.active_set.unwrap();
        assert!(active.contains(&0) && active.contains(&1));
    }

    #[test]
    fn constant_column_stays_out() {
        let (mut z, y) = problem(50, 3, 5);
        z.column_mut(2).fill(4.0);
        let m = lasso_fit(&z, &y, &LassoConfig::fixed(0.01)).unwrap();
        assert_eq!(m.coefficients[2], 0.0);
        assert!(!m.active_set.unwrap().contains(&2));
    }

    #[test]
    fn sweep_limit_is_reported() {
        let (z, y) = problem(50, 6, 6);
        let cfg = LassoConfig {
            max_sweeps: 1,
            tol: 1e-15,
            ..LassoConfig::fixed(0.0)
        };
        let m = lasso_fit(&z, &y, &cfg).unwrap();
        assert!(!m.converged);
    }

    #[test]
    fn refit_uses_active_set() {
        let (z, y) = problem(100, 5, 7);
        let lmax = lambda_max(&z, &y).unwrap();
        let cfg = LassoConfig {
            refit: true,
            ..LassoConfig::fixed(0.3 * lmax)
        };
        let m = lasso_fit(&z, &y, &cfg).unwrap();
        let active = m.active_set.clone().unwrap();
        let sub = z.select_columns(active.iter());
        let o = ols_fit(&sub, &y).unwrap();
        for (pos, &j) in active.iter().enumerate() {
            assert_abs_diff_eq!(m.coefficients[j], o.coefficients[pos], epsilon = 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn objective_never_increases(seed in 0u64..10_000, frac in 0.0f64..1.0) {
            let (z, y) = problem(40, 7, seed);
            let lmax = lambda_max(&z, &y).unwrap();
            let trace = lasso_objective_trace(&z, &y, frac * lmax, &LassoConfig::default()).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}

//! Per-predictor lagged regressions against the target and the supervised,
//! re-scaled panel built from them.
//!
//! For predictor `i` with lag order `q_i`, the target `h` steps ahead is
//! regressed on `(1, x_{i,t}, ..., x_{i,t-q_i+1})`. The scaled value
//! `x̂_{i,t}` is the fitted value with the intercept removed, computed on lags
//! centered by their regression-sample means, so the column does not depend
//! on the location or scale of `x_i`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ols;
use crate::panel::{Panel, TargetSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagCriterion {
    Aic,
    Bic,
    Cv,
}

/// How lag orders are chosen for the supervision regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LagSpec {
    /// Every predictor uses the same `q`.
    Fixed(usize),
    /// Each predictor picks its own order in `1..=q_max`.
    Select { q_max: usize, criterion: LagCriterion },
}

impl LagSpec {
    pub fn max_lag(&self) -> usize {
        match *self {
            LagSpec::Fixed(q) => q,
            LagSpec::Select { q_max, .. } => q_max,
        }
    }
}

/// Share of the common regression sample held out when scoring lag orders by
/// cross-validation.
pub const CV_HOLDOUT_FRACTION: f64 = 0.2;

/// One supervision regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaggedFit {
    pub predictor: usize,
    pub lag_order: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Regression-sample mean of each lag column.
    #[serde(skip)]
    pub lag_means: Vec<f64>,
    /// Fitted values for rows `lag_order - 1 ..= T - 1 - h` (0-based).
    #[serde(skip)]
    pub fitted: Vec<f64>,
    pub residual_variance: f64,
    pub r_squared: f64,
    /// AIC, BIC or CV score when the order was selected.
    pub criterion: Option<f64>,
    /// Set when the regression was rank deficient and the predictor was
    /// replaced by a zero column.
    pub degenerate: bool,
}

impl LaggedFit {
    fn degenerate(predictor: usize, lag_order: usize) -> Self {
        Self {
            predictor,
            lag_order,
            intercept: 0.0,
            coefficients: vec![0.0; lag_order],
            lag_means: vec![0.0; lag_order],
            fitted: Vec::new(),
            residual_variance: f64::NAN,
            r_squared: 0.0,
            criterion: None,
            degenerate: true,
        }
    }

    /// `sum_j γ_j (x_{t-j} - m_j)` at 0-based row `t`.
    pub fn scaled_value(&self, x: &[f64], t: usize) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.lag_means)
            .enumerate()
            .map(|(j, (g, m))| g * (x[t - j] - m))
            .sum()
    }
}

fn lag_design(x: &[f64], q: usize, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), q, |r, j| x[rows.start + r - j])
}

fn lead_target(y: &[f64], h: usize, rows: std::ops::Range<usize>) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.map(|t| y[t + h]))
}

fn check_inputs(y: &TargetSeries, x: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Fits the lagged regression on 0-based rows `first..=T-1-h`, where `first`
/// must be at least `q - 1`.
fn fit_on_rows(y: &TargetSeries, x: &[f64], q: usize, first: usize, predictor: usize) -> Result<LaggedFit> {
    let h = y.horizon();
    let t = y.len();
    if q == 0 {
        return Err(Error::InvalidConfig("lag order must be >= 1".into()));
    }
    let end = (t + 1).saturating_sub(h + 1).max(first); // exclusive: T - h
    let available = end - first;
    if available < q + 2 {
        return Err(Error::TooFewRows {
            needed: q + 2,
            available,
        });
    }
    let rows = first..end;
    let design = lag_design(x, q, rows.clone());
    let target = lead_target(y.values(), h, rows);
    let fit = ols(&design, &target, true)?;
    let lag_means: Vec<f64> = design.column_iter().map(|c| c.mean()).collect();
    let n = target.len() as f64;
    let tss: f64 = {
        let m = target.mean();
        target.iter().map(|v| (v - m).powi(2)).sum()
    };
    let r_squared = if tss > 0.0 {
        (1.0 - fit.rss / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(LaggedFit {
        predictor,
        lag_order: q,
        intercept: fit.intercept,
        coefficients: fit.coefficients.iter().copied().collect(),
        lag_means,
        fitted: fit.fitted.iter().copied().collect(),
        residual_variance: fit.rss / n,
        r_squared,
        criterion: None,
        degenerate: false,
    })
}

/// OLS of `y_{t+h}` on `(1, x_t, ..., x_{t-q+1})` over `t = q-1 ..= T-1-h`.
pub fn fit_lagged_regression(y: &TargetSeries, x: &[f64], q: usize) -> Result<LaggedFit> {
    check_inputs(y, x)?;
    fit_on_rows(y, x, q, q.saturating_sub(1), 0)
}

fn information_criterion(rss: f64, n: usize, q: usize, criterion: LagCriterion) -> f64 {
    let n = n as f64;
    let penalty = match criterion {
        LagCriterion::Aic => 2.0,
        LagCriterion::Bic => n.ln(),
        LagCriterion::Cv => unreachable!(),
    };
    n * (rss / n).ln() + penalty * (q as f64 + 1.0)
}

/// Expanding-window one-step-ahead MSFE over the held-out tail of the common
/// sample `t = q_max-1 ..= T-1-h`.
fn cv_score(y: &TargetSeries, x: &[f64], q: usize, q_max: usize) -> Result<f64> {
    let h = y.horizon();
    let first = q_max - 1;
    let end = y.len() - h; // exclusive
    let n_common = end.saturating_sub(first);
    let holdout = ((n_common as f64 * CV_HOLDOUT_FRACTION).ceil() as usize).max(1);
    let start = end - holdout;
    let mut sse = 0.0;
    for origin in start..end {
        // Only pairs whose target y_{t+h} is observed by `origin` are used.
        let train = y.truncate(origin + 1);
        let fit = fit_on_rows(&train, &x[..=origin], q, first, 0)?;
        let pred = fit.intercept
            + fit
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, g)| g * x[origin - j])
                .sum::<f64>();
        sse += (y.values()[origin + h] - pred).powi(2);
    }
    Ok(sse / holdout as f64)
}

/// Scores every order `1..=q_max` and returns the minimizer, breaking ties
/// toward the smaller order, together with its score.
pub fn select_lag_scored(
    y: &TargetSeries,
    x: &[f64],
    q_max: usize,
    criterion: LagCriterion,
) -> Result<(usize, f64)> {
    check_inputs(y, x)?;
    if q_max == 0 {
        return Err(Error::InvalidConfig("q_max must be >= 1".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for q in 1..=q_max {
        let score = match criterion {
            LagCriterion::Cv => cv_score(y, x, q, q_max)?,
            ic => {
                let fit = fit_on_rows(y, x, q, q_max - 1, 0)?;
                information_criterion(fit.residual_variance * fit.fitted.len() as f64, fit.fitted.len(), q, ic)
            }
        };
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((q, score));
        }
    }
    Ok(best.expect("q_max >= 1"))
}

pub fn select_lag(y: &TargetSeries, x: &[f64], q_max: usize, criterion: LagCriterion) -> Result<usize> {
    if q_max == 1 {
        check_inputs(y, x)?;
        return Ok(1);
    }
    select_lag_scored(y, x, q_max, criterion).map(|(q, _)| q)
}

/// Output of the supervision step.
#[derive(Debug, Clone)]
pub struct SupervisedScaling {
    pub fits: Vec<LaggedFit>,
    /// `max_i q_i`.
    pub q: usize,
    pub horizon: usize,
    /// Scaled panel, rows `t = q-1 ..= T-1` (0-based), one column per predictor.
    pub scaled: DMatrix<f64>,
}

impl SupervisedScaling {
    /// 0-based panel row of the first scaled row.
    pub fn first_row(&self) -> usize {
        self.q - 1
    }

    pub fn degenerate(&self) -> Vec<usize> {
        self.fits.iter().filter(|f| f.degenerate).map(|f| f.predictor).collect()
    }

    pub fn fits_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.fits)?)
    }
}

fn supervise_one(y: &TargetSeries, x: &[f64], i: usize, spec: LagSpec) -> Result<LaggedFit> {
    let (q, criterion) = match spec {
        LagSpec::Fixed(q) => (q, None),
        LagSpec::Select { q_max, criterion } => match select_lag_scored(y, x, q_max, criterion) {
            Ok((q, score)) => (q, Some(score)),
            Err(Error::RankDeficient { .. }) => return Ok(LaggedFit::degenerate(i, 1)),
            Err(e) => return Err(e),
        },
    };
    match fit_on_rows(y, x, q, q - 1, i) {
        Ok(mut fit) => {
            fit.criterion = criterion;
            Ok(fit)
        }
        Err(Error::RankDeficient { .. }) => Ok(LaggedFit::degenerate(i, q)),
        Err(e) => Err(e),
    }
}

/// Runs the supervision regression for every column of `panel` and assembles
/// the scaled panel over rows `q-1 ..= T-1`, where `q` is the largest lag
/// order used. Rank-deficient predictors contribute zero columns.
pub fn build_scaled_panel(y: &TargetSeries, panel: &Panel, spec: LagSpec) -> Result<SupervisedScaling> {
    let t = panel.n_obs();
    if y.len() != t {
        return Err(Error::LengthMismatch {
            left: t,
            right: y.len(),
        });
    }
    if spec.max_lag() == 0 {
        return Err(Error::InvalidConfig("lag order must be >= 1".into()));
    }
    let values = panel.values();
    let fits: Vec<LaggedFit> = (0..panel.n_series())
        .into_par_iter()
        .map(|i| {
            let col = values.column(i);
            let x = col.as_slice();
            check_inputs(y, x)?;
            supervise_one(y, x, i, spec)
        })
        .collect::<Result<_>>()?;

    let degenerate: Vec<&str> = fits
        .iter()
        .filter(|f| f.degenerate)
        .map(|f| panel.names()[f.predictor].as_str())
        .collect();
    if !degenerate.is_empty() {
        warn!(
            "{} rank-deficient predictor(s) contribute zero columns: {}",
            degenerate.len(),
            degenerate.join(", ")
        );
    }

    let q = fits.iter().map(|f| f.lag_order).max().unwrap_or(1);
    let first = q - 1;
    let mut scaled = DMatrix::zeros(t - first, panel.n_series());
    for (i, fit) in fits.iter().enumerate() {
        if fit.degenerate {
            continue;
        }
        let col = values.column(i);
        let x = col.as_slice();
        for (r, row) in (first..t).enumerate() {
            scaled[(r, i)] = fit.scaled_value(x, row);
        }
    }
    Ok(SupervisedScaling {
        fits,
        q,
        horizon: y.horizon(),
        scaled,
    })
}

/// In-sample R² of each predictor's supervision regression, in `[0, 1]`.
/// Degenerate predictors report 0.
pub fn insample_r2_scan(y: &TargetSeries, panel: &Panel, spec: LagSpec) -> Result<Vec<f64>> {
    let sup = build_scaled_panel(y, panel, spec)?;
    Ok(sup.fits.iter().map(|f| f.r_squared).collect())
}

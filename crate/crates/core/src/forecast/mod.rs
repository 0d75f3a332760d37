//! Diffusion-index regressions and the comparison forecasters.

mod lasso;
mod pipeline;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ols;

pub use lasso::{kkt_violation, lambda_max, lasso_fit, lasso_objective_trace, LambdaSelection, LassoConfig};
pub use pipeline::{forecast_method, FactorDesign, Forecast, MethodSpec, PipelineOptions, RawScaling, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Supervised dynamic PCA.
    #[serde(rename = "sdPCA")]
    Sdpca,
    /// Unsupervised PCA factors stacked with their lags.
    #[serde(rename = "PCA")]
    PcaLagged,
    /// Scaled PCA: one contemporaneous slope per predictor.
    #[serde(rename = "sPCA")]
    Spca,
    /// Contemporaneous unsupervised PCA factors.
    #[serde(rename = "SW")]
    Sw,
    /// Direct autoregression.
    #[serde(rename = "AR")]
    Ar,
    /// A regression on a caller-supplied design.
    #[serde(rename = "linear")]
    Linear,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Sdpca => "sdPCA",
            Method::PcaLagged => "PCA",
            Method::Spca => "sPCA",
            Method::Sw => "SW",
            Method::Ar => "AR",
            Method::Linear => "linear",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdpca" => Ok(Method::Sdpca),
            "pca" | "pca_lagged" => Ok(Method::PcaLagged),
            "spca" => Ok(Method::Spca),
            "sw" => Ok(Method::Sw),
            "ar" => Ok(Method::Ar),
            "linear" => Ok(Method::Linear),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Rows of the panel a model was trained on (0-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TrainingWindow {
    pub first_row: usize,
    pub last_row: usize,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub method: Method,
    /// Number of factors (0 for autoregressions and bare designs).
    pub k: usize,
    /// Lags used; the AR order for autoregressions.
    pub q: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Indices of nonzero coefficients; set for penalized fits only.
    pub active_set: Option<Vec<usize>>,
    pub lambda: Option<f64>,
    /// False when coordinate descent hit its sweep limit.
    pub converged: bool,
    /// Mean squared in-sample residual.
    pub insample_msfe: f64,
    pub window: TrainingWindow,
}

impl ForecastModel {
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(z)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn predict_rows(&self, design: &DMatrix<f64>) -> DVector<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        let mut out = design * beta;
        out.add_scalar_mut(self.intercept);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn linear(intercept: f64, coefficients: Vec<f64>, insample_msfe: f64, n_obs: usize) -> Self {
        Self {
            method: Method::Linear,
            k: 0,
            q: 0,
            intercept,
            coefficients,
            active_set: None,
            lambda: None,
            converged: true,
            insample_msfe,
            window: TrainingWindow {
                first_row: 0,
                last_row: n_obs.saturating_sub(1),
                n_obs,
            },
        }
    }
}

/// OLS of `y` on an intercept and the columns of `design`.
pub fn ols_fit(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<ForecastModel> {
    if design.nrows() <= design.ncols() {
        return Err(Error::TooFewRows {
            needed: design.ncols() + 1,
            available: design.nrows(),
        });
    }
    let fit = ols(design, y, true)?;
    Ok(ForecastModel::linear(
        fit.intercept,
        fit.coefficients.iter().copied().collect(),
        fit.mse(),
        y.len(),
    ))
}

/// Re-estimates a penalized model by OLS on its active columns only. An empty
/// active set gives the intercept-only model.
pub fn post_lasso_refit(model: &ForecastModel, design: &DMatrix<f64>, y: &DVector<f64>) -> Result<ForecastModel> {
    let active: Vec<usize> = match &model.active_set {
        Some(a) => a.clone(),
        None => (0..model.coefficients.len()).collect(),
    };
    if design.ncols() != model.coefficients.len() {
        return Err(Error::LengthMismatch {
            left: design.ncols(),
            right: model.coefficients.len(),
        });
    }
    let sub = design.select_columns(active.iter());
    let fit = ols(&sub, y, true)?;
    let mut coefficients = vec![0.0; design.ncols()];
    for (pos, &j) in active.iter().enumerate() {
        coefficients[j] = fit.coefficients[pos];
    }
    Ok(ForecastModel {
        intercept: fit.intercept,
        coefficients,
        insample_msfe: fit.mse(),
        converged: true,
        ..model.clone()
    })
}

/// Direct autoregression of `y_{t+h}` on `(1, y_t, ..., y_{t-p+1})`, fitted on
/// rows `p-1 ..= T-1-h`. Returns the model and its forecast of `y_{T-1+h}`.
pub fn ar_fit(y: &[f64], p: usize, h: usize) -> Result<(ForecastModel, f64)> {
    let t = y.len();
    if p == 0 || h == 0 {
        return Err(Error::InvalidConfig("AR order and horizon must be >= 1".into()));
    }
    if t <= p + 2 || t < p + h + 2 {
        return Err(Error::TooFewRows {
            needed: (p + 3).max(p + h + 2),
            available: t,
        });
    }
    let rows = (p - 1)..(t - h);
    let design = DMatrix::from_fn(rows.len(), p, |r, j| y[rows.start + r - j]);
    let target = DVector::from_iterator(rows.len(), rows.clone().map(|s| y[s + h]));
    let fit = ols(&design, &target, true)?;
    let model = ForecastModel {
        method: Method::Ar,
        k: 0,
        q: p,
        intercept: fit.intercept,
        coefficients: fit.coefficients.iter().copied().collect(),
        active_set: None,
        lambda: None,
        converged: true,
        insample_msfe: fit.mse(),
        window: TrainingWindow {
            first_row: rows.start,
            last_row: t - 1,
            n_obs: rows.len(),
        },
    };
    let last: Vec<f64> = (0..p).map(|j| y[t - 1 - j]).collect();
    let forecast = model.predict(&last);
    Ok((model, forecast))
}

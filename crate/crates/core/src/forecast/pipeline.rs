//! End-to-end forecasters: build a factor design from a panel and a target,
//! regress, and forecast `h` steps past the last row.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ar_fit, lasso_fit, ols_fit, ForecastModel, LassoConfig, Method, TrainingWindow};
use crate::error::{Error, Result};
use crate::factors::{extract_factors_with, EigenSolver, FactorSet};
use crate::panel::{Panel, StandardizationStats, TargetSeries};
use crate::supervise::{build_scaled_panel, LagSpec, SupervisedScaling};

/// One forecasting configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    /// Number of factors; ignored by autoregressions.
    pub k: usize,
    /// Supervision lags for sdPCA, stacked factor lags for lagged PCA, the
    /// order for AR; ignored by sPCA and SW.
    pub q: usize,
    /// Per-predictor lag selection for sdPCA, overriding `q`.
    pub lag_spec: Option<LagSpec>,
    /// Penalize the forecast regression instead of plain OLS.
    pub lasso: bool,
}

impl MethodSpec {
    pub fn new(method: Method, k: usize, q: usize) -> Self {
        Self {
            method,
            k,
            q,
            lag_spec: None,
            lasso: false,
        }
    }

    pub fn sdpca(k: usize, q: usize) -> Self {
        Self::new(Method::Sdpca, k, q)
    }

    pub fn pca_lagged(k: usize, q: usize) -> Self {
        Self::new(Method::PcaLagged, k, q)
    }

    pub fn spca(k: usize) -> Self {
        Self::new(Method::Spca, k, 1)
    }

    pub fn sw(k: usize) -> Self {
        Self::new(Method::Sw, k, 1)
    }

    pub fn ar(p: usize) -> Self {
        Self::new(Method::Ar, 0, p)
    }

    pub fn with_lag_spec(mut self, spec: LagSpec) -> Self {
        self.lag_spec = Some(spec);
        self
    }

    pub fn with_lasso(mut self, lasso: bool) -> Self {
        self.lasso = lasso;
        self
    }

    /// Short label such as `sdPCA` or `AR(2)`, used in reports.
    pub fn label(&self) -> String {
        let base = match self.method {
            Method::Ar => format!("AR({})", self.q),
            m => m.label().to_string(),
        };
        if self.lasso {
            format!("{base}-lasso")
        } else {
            base
        }
    }

    fn supervision(&self) -> Option<LagSpec> {
        match self.method {
            Method::Sdpca => Some(self.lag_spec.unwrap_or(LagSpec::Fixed(self.q))),
            Method::Spca => Some(LagSpec::Fixed(1)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.method {
            Method::Linear => Err(Error::InvalidConfig("`linear` is not a forecasting method".into())),
            Method::Ar if self.q == 0 => Err(Error::InvalidConfig("AR order must be >= 1".into())),
            Method::Ar => Ok(()),
            _ if self.k == 0 => Err(Error::InvalidConfig("k must be >= 1".into())),
            Method::Sdpca | Method::PcaLagged if self.q == 0 && self.lag_spec.is_none() => {
                Err(Error::InvalidConfig("q must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// How the raw panel is prepared before unsupervised PCA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RawScaling {
    /// Demean and divide by the standard deviation (window moments).
    #[default]
    Standardize,
    /// Demean only.
    Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub solver: EigenSolver,
    pub raw_scaling: RawScaling,
    pub lasso: LassoConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            solver: EigenSolver::Leading,
            raw_scaling: RawScaling::default(),
            lasso: LassoConfig::default(),
        }
    }
}

/// A forecast regression ready to be fitted: the design over the training
/// rows, the aligned targets, and the predictor row for the forecast.
#[derive(Debug, Clone)]
pub struct FactorDesign {
    pub spec: MethodSpec,
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub forecast_row: Vec<f64>,
    /// 0-based panel row of the first regression row.
    pub first_row: usize,
    pub last_row: usize,
    pub factors: Option<FactorSet>,
    pub scaling: Option<Arc<SupervisedScaling>>,
}

/// A fitted model and its point forecast.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub model: ForecastModel,
    pub value: f64,
}

impl FactorDesign {
    /// Right-multiplies the design and the forecast row by `m`.
    pub fn transform(&self, m: &DMatrix<f64>) -> Result<FactorDesign> {
        if m.nrows() != self.design.ncols() {
            return Err(Error::LengthMismatch {
                left: self.design.ncols(),
                right: m.nrows(),
            });
        }
        let row = DMatrix::from_row_slice(1, self.forecast_row.len(), &self.forecast_row) * m;
        Ok(FactorDesign {
            design: &self.design * m,
            forecast_row: row.iter().copied().collect(),
            ..self.clone()
        })
    }

    pub fn fit(&self, lasso: Option<&LassoConfig>) -> Result<Forecast> {
        if self.design.nrows() < self.design.ncols() + 2 {
            return Err(Error::TooFewRows {
                needed: self.design.ncols() + 2,
                available: self.design.nrows(),
            });
        }
        let mut model = match lasso {
            Some(cfg) => lasso_fit(&self.design, &self.target, cfg)?,
            None => ols_fit(&self.design, &self.target)?,
        };
        model.method = self.spec.method;
        model.k = self.spec.k;
        model.q = match self.spec.method {
            Method::Sw => 0,
            _ => self.first_row + 1,
        };
        model.window = TrainingWindow {
            first_row: self.first_row,
            last_row: self.last_row,
            n_obs: self.design.nrows(),
        };
        let value = model.predict(&self.forecast_row);
        Ok(Forecast { model, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Raw,
    Supervised(LagSpec),
}

/// Per-window cache: supervision regressions and factor extractions are
/// computed once and shared by every method that needs them. Factors are
/// extracted at the largest `k` requested from a source and sliced for
/// smaller ones.
pub struct Workspace<'a> {
    panel: &'a Panel,
    y: &'a TargetSeries,
    opts: &'a PipelineOptions,
    scalings: Vec<(LagSpec, Arc<SupervisedScaling>)>,
    factors: Vec<(Source, FactorSet)>,
    k_plan: Vec<(Source, usize)>,
}

impl<'a> Workspace<'a> {
    pub fn new(panel: &'a Panel, y: &'a TargetSeries, opts: &'a PipelineOptions) -> Result<Self> {
        if panel.n_obs() != y.len() {
            return Err(Error::LengthMismatch {
                left: panel.n_obs(),
                right: y.len(),
            });
        }
        Ok(Self {
            panel,
            y,
            opts,
            scalings: Vec::new(),
            factors: Vec::new(),
            k_plan: Vec::new(),
        })
    }

    /// Registers the methods that will be run so each factor source is
    /// extracted only once, at the largest `k` needed.
    pub fn plan(&mut self, specs: &[MethodSpec]) {
        for s in specs {
            let source = match (s.method, s.supervision()) {
                (Method::PcaLagged | Method::Sw, _) => Source::Raw,
                (_, Some(l)) => Source::Supervised(l),
                _ => continue,
            };
            match self.k_plan.iter_mut().find(|(src, _)| *src == source) {
                Some((_, k)) => *k = (*k).max(s.k),
                None => self.k_plan.push((source, s.k)),
            }
        }
    }

    fn scaling(&mut self, spec: LagSpec) -> Result<Arc<SupervisedScaling>> {
        if let Some((_, s)) = self.scalings.iter().find(|(l, _)| *l == spec) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(build_scaled_panel(self.y, self.panel, spec)?);
        self.scalings.push((spec, Arc::clone(&s)));
        Ok(s)
    }

    fn raw_matrix(&self) -> Result<DMatrix<f64>> {
        let values = self.panel.values();
        match self.opts.raw_scaling {
            RawScaling::Standardize => {
                let stats = StandardizationStats::fit(values);
                let retained = stats.retained();
                if retained.is_empty() {
                    return Err(Error::ZeroVarianceColumn);
                }
                let z = stats.apply(values)?;
                Ok(if retained.len() == z.ncols() {
                    z
                } else {
                    z.select_columns(retained.iter())
                })
            }
            RawScaling::Center => {
                let mut z = values.clone();
                for mut col in z.column_iter_mut() {
                    let m = col.mean();
                    col.add_scalar_mut(-m);
                }
                Ok(z)
            }
        }
    }

    fn factor_set(&mut self, source: Source, k: usize) -> Result<FactorSet> {
        if let Some((_, f)) = self.factors.iter().find(|(s, f)| *s == source && f.k() >= k) {
            return Ok(slice_factors(f, k));
        }
        let planned = self
            .k_plan
            .iter()
            .find(|(s, _)| *s == source)
            .map_or(k, |(_, kp)| (*kp).max(k));
        let x = match source {
            Source::Raw => self.raw_matrix()?,
            Source::Supervised(l) => self.scaling(l)?.scaled.clone(),
        };
        let max = x.nrows().min(x.ncols());
        // Extract as many as planned when possible, but never fail a small
        // request because a larger one elsewhere is infeasible.
        let fs = match extract_factors_with(&x, planned.min(max).max(k), self.opts.solver) {
            Ok(fs) => fs,
            Err(Error::KTooLarge { .. }) if planned > k => extract_factors_with(&x, k, self.opts.solver)?,
            Err(e) => return Err(e),
        };
        let out = slice_factors(&fs, k);
        self.factors.retain(|(s, _)| *s != source);
        self.factors.push((source, fs));
        Ok(out)
    }

    /// Builds the forecast regression for a factor method.
    pub fn design(&mut self, spec: &MethodSpec) -> Result<FactorDesign> {
        spec.validate()?;
        let t = self.panel.n_obs();
        let h = self.y.horizon();
        let yv = self.y.values();
        let (factors, scaling, source_first, lags) = match spec.method {
            Method::Sdpca | Method::Spca => {
                let lag = spec.supervision().expect("supervised method");
                let scaling = self.scaling(lag)?;
                let fs = self.factor_set(Source::Supervised(lag), spec.k)?;
                let first = scaling.first_row();
                (fs, Some(scaling), first, 1)
            }
            Method::PcaLagged => (self.factor_set(Source::Raw, spec.k)?, None, 0, spec.q),
            Method::Sw => (self.factor_set(Source::Raw, spec.k)?, None, 0, 1),
            Method::Ar | Method::Linear => {
                return Err(Error::InvalidConfig(format!("{} has no factor design", spec.method)))
            }
        };
        // Regression rows t = first ..= T-1-h in panel coordinates.
        let first = source_first + lags - 1;
        if t < first + h + 1 {
            return Err(Error::TooFewRows {
                needed: first + h + 1,
                available: t,
            });
        }
        let n_rows = t - h - first;
        let k = factors.k();
        let f = &factors.factors;
        let row_of = |panel_row: usize, lag: usize, j: usize| f[(panel_row - lag - source_first, j)];
        let design = DMatrix::from_fn(n_rows, k * lags, |r, c| row_of(first + r, c / k, c % k));
        let target = DVector::from_fn(n_rows, |r, _| yv[first + r + h]);
        let forecast_row = (0..k * lags).map(|c| row_of(t - 1, c / k, c % k)).collect();
        Ok(FactorDesign {
            spec: *spec,
            design,
            target,
            forecast_row,
            first_row: first,
            last_row: t - 1,
            factors: Some(factors),
            scaling,
        })
    }

    /// Fits `spec` on the whole workspace sample and forecasts `y_{T-1+h}`.
    pub fn forecast(&mut self, spec: &MethodSpec) -> Result<Forecast> {
        spec.validate()?;
        if spec.method == Method::Ar {
            let (model, value) = ar_fit(self.y.values(), spec.q, self.y.horizon())?;
            return Ok(Forecast { model, value });
        }
        let lasso = spec.lasso.then_some(&self.opts.lasso);
        self.design(spec)?.fit(lasso)
    }
}

fn slice_factors(fs: &FactorSet, k: usize) -> FactorSet {
    if fs.k() == k {
        return fs.clone();
    }
    FactorSet {
        factors: fs.factors.columns(0, k).into_owned(),
        loadings: fs.loadings.columns(0, k).into_owned(),
        eigenvalues: fs.eigenvalues.clone(),
        total_variance: fs.total_variance,
        normalization: fs.normalization,
        explained: fs.explained[..k].to_vec(),
    }
}

/// Fits one method on `panel` and `y` (whose horizon sets `h`) and forecasts
/// `y_{T-1+h}`.
pub fn forecast_method(spec: &MethodSpec, panel: &Panel, y: &TargetSeries, opts: &PipelineOptions) -> Result<Forecast> {
    let mut ws = Workspace::new(panel, y, opts)?;
    ws.forecast(spec)
}

//! Forecast evaluation: in-sample MSFE, expanding-window out-of-sample RMSFE,
//! and Monte-Carlo reports across replications.

use std::io::Write;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{Method, MethodSpec, PipelineOptions, Workspace};
use crate::panel::{Panel, TargetSeries};
use crate::simgen::{generate, SimConfig};
use crate::supervise::LagSpec;

/// Mean squared difference between `y` and `yhat`.
pub fn insample_msfe(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::TooFewRows { needed: 1, available: 0 });
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Every combination of methods, factor counts and lag orders, skipping
/// duplicates for methods that ignore `k` or `q`.
pub fn expand_grid(methods: &[Method], ks: &[usize], qs: &[usize], lasso: bool) -> Vec<MethodSpec> {
    let mut out: Vec<MethodSpec> = Vec::new();
    for &m in methods {
        for &k in ks {
            for &q in qs {
                let spec = match m {
                    Method::Spca => MethodSpec::spca(k),
                    Method::Sw => MethodSpec::sw(k),
                    Method::Ar => MethodSpec::ar(q),
                    _ => MethodSpec::new(m, k, q),
                };
                let spec = spec.with_lasso(lasso && m != Method::Ar);
                if !out.contains(&spec) {
                    out.push(spec);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    /// Share of the sample in the first training window, `T1 = floor(f T)`.
    pub train_fraction: f64,
    /// Keep the window at `T1` rows instead of letting it grow.
    pub fixed_width: bool,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            fixed_width: false,
        }
    }
}

impl RollingConfig {
    pub fn with_train_fraction(train_fraction: f64) -> Self {
        Self {
            train_fraction,
            ..Self::default()
        }
    }

    /// Length of the first training window for a sample of `t` rows.
    pub fn first_window(&self, t: usize) -> Result<usize> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        // A tiny epsilon keeps exact products such as 0.6 * 200 from rounding down.
        let t1 = (self.train_fraction * t as f64 + 1e-9).floor() as usize;
        if t1 < 4 || t1 >= t {
            return Err(Error::TooFewRows {
                needed: 4,
                available: t1,
            });
        }
        Ok(t1)
    }
}

/// A window whose fit failed; the sweep records it and moves on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSkip {
    /// 0-based panel row of the window's last observation.
    pub window_end: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingCell {
    pub spec: MethodSpec,
    pub horizon: usize,
    /// `(window_end, forecast, realized)` for every successful window.
    pub forecasts: Vec<(usize, f64, f64)>,
    pub skipped: Vec<WindowSkip>,
}

impl RollingCell {
    pub fn squared_errors(&self) -> Vec<f64> {
        self.forecasts.iter().map(|(_, f, y)| (y - f).powi(2)).collect()
    }

    /// Root mean squared error over the successful windows; `None` if every
    /// window failed.
    pub fn rmsfe(&self) -> Option<f64> {
        let e = self.squared_errors();
        (!e.is_empty()).then(|| (e.iter().sum::<f64>() / e.len() as f64).sqrt())
    }
}

/// Re-fits every method on each expanding (or fixed-width) window and
/// forecasts `h` steps past its end. Window `tau = 1, 2, ...` ends at 0-based
/// row `T1 + tau - 2` and is scored against the target `h` rows later, so the
/// last window forecasts the final observation.
pub fn rolling_forecasts(
    panel: &Panel,
    y: &TargetSeries,
    specs: &[MethodSpec],
    cfg: &RollingConfig,
    opts: &PipelineOptions,
) -> Result<Vec<RollingCell>> {
    let t = panel.n_obs();
    if y.len() != t {
        return Err(Error::LengthMismatch { left: t, right: y.len() });
    }
    let h = y.horizon();
    let t1 = cfg.first_window(t)?;
    if t1 + h > t {
        return Err(Error::TooFewRows {
            needed: t1 + h,
            available: t,
        });
    }
    let mut cells: Vec<RollingCell> = specs
        .iter()
        .map(|s| RollingCell {
            spec: *s,
            horizon: h,
            forecasts: Vec::new(),
            skipped: Vec::new(),
        })
        .collect();
    for end in (t1 - 1)..(t - h) {
        let start = if cfg.fixed_width { end + 1 - t1 } else { 0 };
        let sub_panel = panel.rows(start..end + 1)?;
        let sub_y = y.window(start..end + 1);
        let mut ws = Workspace::new(&sub_panel, &sub_y, opts)?;
        ws.plan(specs);
        let realized = y.values()[end + h];
        for cell in cells.iter_mut() {
            match ws.forecast(&cell.spec) {
                Ok(f) => cell.forecasts.push((end, f.value, realized)),
                Err(e) => {
                    debug!("{} window ending at {end}: {e}", cell.spec.label());
                    cell.skipped.push(WindowSkip {
                        window_end: end,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    for cell in &cells {
        if !cell.skipped.is_empty() {
            warn!("{}: {} window(s) skipped", cell.spec.label(), cell.skipped.len());
        }
    }
    Ok(cells)
}

/// In-sample MSFE of each method fitted on the whole sample; `None` marks a
/// failed fit.
pub fn insample_msfes(
    panel: &Panel,
    y: &TargetSeries,
    specs: &[MethodSpec],
    opts: &PipelineOptions,
) -> Result<Vec<std::result::Result<f64, String>>> {
    let mut ws = Workspace::new(panel, y, opts)?;
    ws.plan(specs);
    Ok(specs
        .iter()
        .map(|s| ws.forecast(s).map(|f| f.model.insample_msfe).map_err(|e| e.to_string()))
        .collect())
}

/// Chooses a common supervision lag order by comparing the out-of-sample
/// RMSFE of sdPCA with `q = 1..=q_max`; ties go to the smaller order.
pub fn cross_validate_q(
    panel: &Panel,
    y: &TargetSeries,
    k: usize,
    q_max: usize,
    cfg: &RollingConfig,
    opts: &PipelineOptions,
) -> Result<(usize, Vec<f64>)> {
    if q_max == 0 {
        return Err(Error::InvalidConfig("q_max must be >= 1".into()));
    }
    if q_max == 1 {
        return Ok((1, vec![]));
    }
    let specs: Vec<MethodSpec> = (1..=q_max)
        .map(|q| MethodSpec::sdpca(k, q).with_lag_spec(LagSpec::Fixed(q)))
        .collect();
    let cells = rolling_forecasts(panel, y, &specs, cfg, opts)?;
    let scores: Vec<f64> = cells.iter().map(|c| c.rmsfe().unwrap_or(f64::INFINITY)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok((best + 1, scores))
}

/// One row of a report: a grid cell in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub rep: usize,
    pub method: String,
    pub k: usize,
    pub q: usize,
    pub h: usize,
    pub msfe: Option<f64>,
    pub rmsfe: Option<f64>,
    /// Windows (or whole fits) that failed and were left out.
    #[serde(skip)]
    pub skipped: usize,
}

/// Mean and median of a cell across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub k: usize,
    pub q: usize,
    pub h: usize,
    pub reps: usize,
    pub msfe_mean: Option<f64>,
    pub msfe_median: Option<f64>,
    pub rmsfe_mean: Option<f64>,
    pub rmsfe_median: Option<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len().is_multiple_of(2) { 0.5 * (s[m - 1] + s[m]) } else { s[m] })
}

impl EvalReport {
    /// Combines in-sample and rolling results for one replication.
    pub fn from_parts(
        rep: usize,
        specs: &[MethodSpec],
        h: usize,
        insample: Option<&[std::result::Result<f64, String>]>,
        rolling: Option<&[RollingCell]>,
    ) -> Self {
        let records = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let msfe = insample.and_then(|v| v[i].as_ref().ok().copied());
                let cell = rolling.map(|c| &c[i]);
                let skipped = cell.map_or(0, |c| c.skipped.len())
                    + usize::from(insample.is_some_and(|v| v[i].is_err()));
                EvalRecord {
                    rep,
                    method: s.label(),
                    k: s.k,
                    q: record_q(s),
                    h,
                    msfe,
                    rmsfe: cell.and_then(RollingCell::rmsfe),
                    skipped,
                }
            })
            .collect();
        Self { records }
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.records.extend(other.records);
    }

    pub fn summary(&self) -> Vec<CellSummary> {
        let mut keys: Vec<(String, usize, usize, usize)> = Vec::new();
        for r in &self.records {
            let key = (r.method.clone(), r.k, r.q, r.h);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(method, k, q, h)| {
                let rows: Vec<&EvalRecord> = self
                    .records
                    .iter()
                    .filter(|r| r.method == method && r.k == k && r.q == q && r.h == h)
                    .collect();
                let msfe: Vec<f64> = rows.iter().filter_map(|r| r.msfe).collect();
                let rmsfe: Vec<f64> = rows.iter().filter_map(|r| r.rmsfe).collect();
                CellSummary {
                    reps: rows.len(),
                    skipped: rows.iter().map(|r| r.skipped).sum(),
                    msfe_mean: mean(&msfe),
                    msfe_median: median(&msfe),
                    rmsfe_mean: mean(&rmsfe),
                    rmsfe_median: median(&rmsfe),
                    method,
                    k,
                    q,
                    h,
                }
            })
            .collect()
    }

    pub fn cell(&self, method: &str) -> Option<CellSummary> {
        self.summary().into_iter().find(|c| c.method == method)
    }

    /// Long format, one row per grid cell per replication; failed values
    /// are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "method", "k", "q", "h", "msfe", "rmsfe"])?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.rep.to_string(),
                r.method.clone(),
                r.k.to_string(),
                r.q.to_string(),
                r.h.to_string(),
                opt(r.msfe),
                opt(r.rmsfe),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

fn record_q(s: &MethodSpec) -> usize {
    match (s.method, s.lag_spec) {
        (Method::Spca | Method::Sw, _) => 1,
        (_, Some(l)) => l.max_lag(),
        _ => s.q,
    }
}

/// What a Monte-Carlo run measures in each replication.
#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    InSample,
    Rolling(RollingConfig),
    Both(RollingConfig),
}

/// Evaluates every method on `reps` independent draws. Replications run in
/// parallel on the current rayon pool; the report is ordered by replication
/// and does not depend on scheduling.
pub fn monte_carlo(
    sim: &SimConfig,
    reps: usize,
    specs: &[MethodSpec],
    experiment: &Experiment,
    opts: &PipelineOptions,
) -> Result<EvalReport> {
    sim.validate()?;
    let per_rep: Vec<Result<EvalReport>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let draw = generate(sim, rep as u64)?;
            evaluate_sample(rep, &draw.panel, &draw.target, specs, experiment, opts)
        })
        .collect();
    let mut report = EvalReport::default();
    for r in per_rep {
        report.extend(r?);
    }
    Ok(report)
}

/// Evaluates one sample as replication `rep`.
pub fn evaluate_sample(
    rep: usize,
    panel: &Panel,
    y: &TargetSeries,
    specs: &[MethodSpec],
    experiment: &Experiment,
    opts: &PipelineOptions,
) -> Result<EvalReport> {
    let insample = match experiment {
        Experiment::InSample | Experiment::Both(_) => Some(insample_msfes(panel, y, specs, opts)?),
        Experiment::Rolling(_) => None,
    };
    let rolling = match experiment {
        Experiment::Rolling(cfg) | Experiment::Both(cfg) => Some(rolling_forecasts(panel, y, specs, cfg, opts)?),
        Experiment::InSample => None,
    };
    Ok(EvalReport::from_parts(
        rep,
        specs,
        y.horizon(),
        insample.as_deref(),
        rolling.as_deref(),
    ))
}

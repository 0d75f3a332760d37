//! Time-series panels, stationarity transforms and standardization.

use std::collections::HashSet;
use std::ops::Range;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x N` panel of predictors: rows are time, columns are series.
///
/// Dates are kept as opaque ordered labels. Group labels and transformation
/// codes are optional per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    dates: Vec<String>,
    names: Vec<String>,
    groups: Vec<Option<String>>,
    tcodes: Vec<Option<u8>>,
}

impl Panel {
    pub fn new(values: DMatrix<f64>, dates: Vec<String>, names: Vec<String>) -> Result<Self> {
        let n = values.ncols();
        Self::with_metadata(values, dates, names, vec![None; n], vec![None; n])
    }

    pub fn with_metadata(
        values: DMatrix<f64>,
        dates: Vec<String>,
        names: Vec<String>,
        groups: Vec<Option<String>>,
        tcodes: Vec<Option<u8>>,
    ) -> Result<Self> {
        let (t, n) = values.shape();
        if n == 0 {
            return Err(Error::EmptyPanel("no columns".into()));
        }
        if t < 2 {
            return Err(Error::InvalidPanel(format!("need at least 2 rows, got {t}")));
        }
        if dates.len() != t {
            return Err(Error::LengthMismatch {
                left: t,
                right: dates.len(),
            });
        }
        for len in [names.len(), groups.len(), tcodes.len()] {
            if len != n {
                return Err(Error::LengthMismatch { left: n, right: len });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate column name `{name}`")));
            }
        }
        if let Some(code) = tcodes.iter().flatten().find(|c| !(1..=7).contains(*c)) {
            return Err(Error::UnknownCode(*code));
        }
        Ok(Self {
            values,
            dates,
            names,
            groups,
            tcodes,
        })
    }

    /// Panel with generated labels `x1..xN` and dates `1..T`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (t, n) = values.shape();
        let dates = (1..=t).map(|i| i.to_string()).collect();
        let names = (1..=n).map(|i| format!("x{i}")).collect();
        Self::new(values, dates, names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[Option<String>] {
        &self.groups
    }

    pub fn tcodes(&self) -> &[Option<u8>] {
        &self.tcodes
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.values.column(i).into_owned()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows in `range`, all columns.
    pub fn rows(&self, range: Range<usize>) -> Result<Panel> {
        if range.end > self.n_obs() || range.len() < 2 {
            return Err(Error::InvalidPanel(format!(
                "row range {range:?} invalid for {} rows",
                self.n_obs()
            )));
        }
        Ok(Panel {
            values: self.values.rows(range.start, range.len()).into_owned(),
            dates: self.dates[range].to_vec(),
            names: self.names.clone(),
            groups: self.groups.clone(),
            tcodes: self.tcodes.clone(),
        })
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Panel> {
        if keep.is_empty() {
            return Err(Error::EmptyPanel("no columns selected".into()));
        }
        let values = self.values.select_columns(keep.iter());
        Panel::with_metadata(
            values,
            self.dates.clone(),
            keep.iter().map(|&i| self.names[i].clone()).collect(),
            keep.iter().map(|&i| self.groups[i].clone()).collect(),
            keep.iter().map(|&i| self.tcodes[i]).collect(),
        )
    }

    /// Drops one column by name, returning it as a target series.
    pub fn split_target(&self, name: &str) -> Result<(Panel, TargetSeries)> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| Error::InvalidConfig(format!("no column named `{name}`")))?;
        let keep: Vec<usize> = (0..self.n_series()).filter(|&i| i != idx).collect();
        let target = TargetSeries::new(name, self.column(idx).iter().copied().collect())?;
        Ok((self.select_columns(&keep)?, target))
    }

    /// Applies every column's transformation code and trims leading rows so
    /// that all columns stay aligned. Columns without a code are left as-is.
    pub fn apply_transforms(&self) -> Result<Panel> {
        let depth = self
            .tcodes
            .iter()
            .map(|c| c.map_or(0, tcode_depth))
            .max()
            .unwrap_or(0);
        let t = self.n_obs();
        if t <= depth + 1 {
            return Err(Error::InvalidPanel(format!(
                "{t} rows cannot absorb differencing depth {depth}"
            )));
        }
        let out_rows = t - depth;
        let mut values = DMatrix::zeros(out_rows, self.n_series());
        for (j, code) in self.tcodes.iter().enumerate() {
            let col = self.values.column(j);
            let series: Vec<f64> = col.iter().copied().collect();
            let transformed = match code {
                Some(c) => apply_tcode(&series, *c).map_err(|e| match e {
                    Error::NonPositiveForLog { index, value } => Error::InvalidPanel(format!(
                        "column `{}`: non-positive value {value} at row {index} under log transform",
                        self.names[j]
                    )),
                    other => other,
                })?,
                None => series,
            };
            let skip = transformed.len() - out_rows;
            for (r, v) in transformed[skip..].iter().enumerate() {
                values[(r, j)] = *v;
            }
        }
        Ok(Panel {
            values,
            dates: self.dates[depth..].to_vec(),
            names: self.names.clone(),
            groups: self.groups.clone(),
            tcodes: self.tcodes.clone(),
        })
    }
}

/// The forecasting target, aligned row-for-row with its panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSeries {
    name: String,
    values: Vec<f64>,
    horizon: usize,
}

impl TargetSeries {
    /// A one-step-ahead target.
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            name: name.into(),
            values,
            horizon: 1,
        })
    }

    pub fn with_horizon(mut self, h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidConfig("forecast horizon must be >= 1".into()));
        }
        self.horizon = h;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in `range`, keeping the name and horizon.
    pub fn window(&self, range: Range<usize>) -> TargetSeries {
        TargetSeries {
            name: self.name.clone(),
            values: self.values[range].to_vec(),
            horizon: self.horizon,
        }
    }

    pub fn truncate(&self, len: usize) -> TargetSeries {
        TargetSeries {
            name: self.name.clone(),
            values: self.values[..len.min(self.values.len())].to_vec(),
            horizon: self.horizon,
        }
    }
}

/// Number of leading observations consumed by a transformation code.
pub fn tcode_depth(code: u8) -> usize {
    match code {
        2 | 5 => 1,
        3 | 6 | 7 => 2,
        _ => 0,
    }
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Applies one transformation code:
///
/// | code | transform                |
/// |------|--------------------------|
/// | 1    | `x`                      |
/// | 2    | `Δx`                     |
/// | 3    | `Δ²x`                    |
/// | 4    | `ln x`                   |
/// | 5    | `Δ ln x`                 |
/// | 6    | `Δ² ln x`                |
/// | 7    | `Δ(x_t / x_{t-1} - 1)`   |
pub fn apply_tcode(series: &[f64], code: u8) -> Result<Vec<f64>> {
    if !(1..=7).contains(&code) {
        return Err(Error::UnknownCode(code));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if series.len() <= tcode_depth(code) {
        return Err(Error::TooFewRows {
            needed: tcode_depth(code) + 1,
            available: series.len(),
        });
    }
    let logs = || -> Result<Vec<f64>> {
        series
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value > 0.0 {
                    Ok(value.ln())
                } else {
                    Err(Error::NonPositiveForLog { index, value })
                }
            })
            .collect()
    };
    Ok(match code {
        1 => series.to_vec(),
        2 => diff(series),
        3 => diff(&diff(series)),
        4 => logs()?,
        5 => diff(&logs()?),
        6 => diff(&diff(&logs()?)),
        7 => {
            let growth: Vec<f64> = series.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            if growth.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
            diff(&growth)
        }
        _ => unreachable!(),
    })
}

/// Column means and standard deviations of the window a panel was
/// standardized on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    /// Indices of columns whose standard deviation is zero.
    pub zero_variance: Vec<usize>,
    /// Number of rows the statistics were computed on.
    pub fitted_rows: usize,
}

impl StandardizationStats {
    pub fn fit(values: &DMatrix<f64>) -> Self {
        let t = values.nrows();
        let mut means = Vec::with_capacity(values.ncols());
        let mut stddevs = Vec::with_capacity(values.ncols());
        let mut zero_variance = Vec::new();
        for (j, col) in values.column_iter().enumerate() {
            let mean = col.mean();
            let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = (ss / (t as f64 - 1.0)).sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                zero_variance.push(j);
            }
            means.push(mean);
            stddevs.push(sd);
        }
        Self {
            means,
            stddevs,
            zero_variance,
            fitted_rows: t,
        }
    }

    pub fn retained(&self) -> Vec<usize> {
        (0..self.means.len())
            .filter(|j| self.zero_variance.binary_search(j).is_err())
            .collect()
    }

    /// `(x - mean) / sd` for every retained column; flagged columns become 0.
    pub fn apply(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if values.ncols() != self.means.len() {
            return Err(Error::LengthMismatch {
                left: values.ncols(),
                right: self.means.len(),
            });
        }
        let mut out = values.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.zero_variance.binary_search(&j).is_ok() {
                col.fill(0.0);
            } else {
                let (m, s) = (self.means[j], self.stddevs[j]);
                col.apply(|v| *v = (*v - m) / s);
            }
        }
        Ok(out)
    }
}

/// Standardizes every column to mean 0 and sample standard deviation 1.
///
/// With `stats`, previously fitted statistics are applied instead, which is
/// how training-window moments reach test rows. Zero-variance columns are
/// flagged in the returned statistics and dropped from the returned panel.
pub fn standardize(
    panel: &Panel,
    stats: Option<&StandardizationStats>,
) -> Result<(Panel, StandardizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => StandardizationStats::fit(panel.values()),
    };
    let scaled = stats.apply(panel.values())?;
    let retained = stats.retained();
    if retained.is_empty() {
        return Err(Error::ZeroVarianceColumn);
    }
    if !stats.zero_variance.is_empty() {
        let names: Vec<&str> = stats
            .zero_variance
            .iter()
            .map(|&j| panel.names()[j].as_str())
            .collect();
        warn!("excluding zero-variance columns: {}", names.join(", "));
    }
    let full = Panel {
        values: scaled,
        dates: panel.dates.clone(),
        names: panel.names.clone(),
        groups: panel.groups.clone(),
        tcodes: panel.tcodes.clone(),
    };
    let out = if retained.len() == panel.n_series() {
        full
    } else {
        full.select_columns(&retained)?
    };
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn tcode_examples() {
        let e = std::f64::consts::E;
        assert!(close(&apply_tcode(&[1.0, e, e * e], 4).unwrap(), &[0.0, 1.0, 2.0], 1e-15));
        assert_eq!(apply_tcode(&[5.0, 5.0, 5.0], 2).unwrap(), vec![0.0, 0.0]);
        let ln2 = 2f64.ln();
        assert!(close(
            &apply_tcode(&[1.0, 2.0, 4.0, 8.0], 5).unwrap(),
            &[ln2, ln2, ln2],
            1e-15
        ));
    }

    #[test]
    fn tcode_output_lengths() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        for (code, depth) in [(1, 0), (2, 1), (3, 2), (4, 0), (5, 1), (6, 2), (7, 2)] {
            assert_eq!(apply_tcode(&x, code).unwrap().len(), 10 - depth, "code {code}");
        }
    }

    #[test]
    fn tcode_errors() {
        assert_eq!(apply_tcode(&[1.0, 2.0], 8), Err(Error::UnknownCode(8)));
        assert_eq!(apply_tcode(&[1.0, 2.0], 0), Err(Error::UnknownCode(0)));
        assert!(matches!(
            apply_tcode(&[1.0, 0.0, 2.0], 5),
            Err(Error::NonPositiveForLog { index: 1, .. })
        ));
        assert!(matches!(
            apply_tcode(&[-1.0, 2.0], 4),
            Err(Error::NonPositiveForLog { index: 0, .. })
        ));
    }

    #[test]
    fn standardize_examples() {
        let values = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 4.0, 4.0]);
        let panel = Panel::from_matrix(values).unwrap();
        let (out, stats) = standardize(&panel, None).unwrap();
        assert_eq!(stats.zero_variance, vec![1]);
        assert_eq!(out.n_series(), 1);
        let col = out.column(0);
        assert_abs_diff_eq!(col.mean(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(col.variance() * 3.0 / 2.0, 1.0, epsilon = 1e-12);

        let train = StandardizationStats {
            means: vec![2.0],
            stddevs: vec![2.0],
            zero_variance: vec![],
            fitted_rows: 10,
        };
        let test = Panel::from_matrix(DMatrix::from_column_slice(2, 1, &[6.0, 0.0])).unwrap();
        let (out, _) = standardize(&test, Some(&train)).unwrap();
        assert_eq!(out.values()[(0, 0)], 2.0);
        assert_eq!(out.values()[(1, 0)], -1.0);
    }

    #[test]
    fn all_constant_panel_errors() {
        let panel = Panel::from_matrix(DMatrix::from_element(4, 2, 1.5)).unwrap();
        assert_eq!(standardize(&panel, None).unwrap_err(), Error::ZeroVarianceColumn);
    }

    #[test]
    fn transforms_align_columns() {
        let values = DMatrix::from_fn(6, 3, |i, j| (i + 1) as f64 * (j + 1) as f64);
        let panel = Panel::with_metadata(
            values,
            (0..6).map(|i| format!("d{i}")).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![None; 3],
            vec![Some(1), Some(2), Some(6)],
        )
        .unwrap();
        let out = panel.apply_transforms().unwrap();
        assert_eq!(out.n_obs(), 4);
        assert_eq!(out.dates()[0], "d2");
        // identity column keeps its last four values
        assert_eq!(out.values()[(0, 0)], 3.0);
        assert_eq!(out.values()[(0, 1)], 2.0);
        assert!(out.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = Panel::new(
            DMatrix::zeros(3, 2),
            vec!["1".into(), "2".into(), "3".into()],
            vec!["a".into(), "a".into()],
        );
        assert!(matches!(r, Err(Error::InvalidPanel(_))));
    }

    proptest! {
        #[test]
        fn second_difference_is_repeated_difference(x in prop::collection::vec(-1e3f64..1e3, 3..40)) {
            let twice = apply_tcode(&apply_tcode(&x, 2).unwrap(), 2).unwrap();
            prop_assert_eq!(apply_tcode(&x, 3).unwrap(), twice);
        }

        #[test]
        fn log_second_difference_composes(x in prop::collection::vec(1e-3f64..1e3, 3..40)) {
            let composed = apply_tcode(&apply_tcode(&x, 5).unwrap(), 2).unwrap();
            let direct = apply_tcode(&x, 6).unwrap();
            prop_assert!(close(&direct, &composed, 1e-12));
        }

        #[test]
        fn standardize_is_idempotent(
            data in prop::collection::vec(-50f64..50.0, 24),
        ) {
            let values = DMatrix::from_column_slice(8, 3, &data);
            let panel = Panel::from_matrix(values).unwrap();
            if let Ok((once, _)) = standardize(&panel, None) {
                let (twice, _) = standardize(&once, None).unwrap();
                let diff = (once.values() - twice.values()).amax();
                prop_assert!(diff < 1e-12, "diff {}", diff);
            }
        }
    }
}

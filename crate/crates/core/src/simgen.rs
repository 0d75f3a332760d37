//! Monte-Carlo draws from a weak-factor model with a lagged-factor target.
//!
//! `x_t = B f_t + u_t` with `f_t ~ N(0, I_r)`, `u_{i,t} ~ N(0, 1)`, and only
//! `n` randomly chosen rows of `B` nonzero (entries uniform on `[-a, a]`).
//! The target is `y_{t+1} = sum_j beta_j' f_{t-j} + e_{t+1}`, `j < q`.
//!
//! Every replication draws from its own ChaCha8 stream, selected from the
//! master seed by the replication index, so draws are reproducible and
//! independent of how replications are scheduled across threads.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{reference_rotation, svd_parts};
use crate::forecast::{FactorDesign, MethodSpec, PipelineOptions, Workspace};
use crate::fredmd::save_fredmd;
use crate::panel::{Panel, TargetSeries};
use crate::supervise::SupervisedScaling;

/// Name and version of the generator, recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), stream = replication index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t: usize,
    pub n_series: usize,
    /// Number of rows of `B` with nonzero loadings.
    pub n_nonzero: usize,
    /// `betas[j]` multiplies `f_{t-j}`; its length is the target lag count `q`
    /// and every entry has length `r`.
    pub betas: Vec<Vec<f64>>,
    /// Half-width of the uniform loading law.
    pub loading_bound: f64,
    pub seed: u64,
    pub idiosyncratic_noise: bool,
    pub target_noise: bool,
}

impl SimConfig {
    /// Two factors, two target lags, `beta_0 = (1, -0.8)`, `beta_1 = (-1, 2)`.
    pub fn new(t: usize, n_series: usize, n_nonzero: usize) -> Self {
        Self {
            t,
            n_series,
            n_nonzero,
            betas: vec![vec![1.0, -0.8], vec![-1.0, 2.0]],
            loading_bound: 2.0,
            seed: 1234,
            idiosyncratic_noise: true,
            target_noise: true,
        }
    }

    pub fn with_betas(mut self, betas: Vec<Vec<f64>>) -> Self {
        self.betas = betas;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn r(&self) -> usize {
        self.betas.first().map_or(0, Vec::len)
    }

    pub fn q(&self) -> usize {
        self.betas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.q() == 0 || self.r() == 0 {
            return bad("need at least one factor and one target lag".into());
        }
        if self.betas.iter().any(|b| b.len() != self.r()) {
            return bad("every beta must have r entries".into());
        }
        if self.n_nonzero == 0 || self.n_nonzero > self.n_series {
            return bad(format!("need 1 <= n <= N, got n = {} and N = {}", self.n_nonzero, self.n_series));
        }
        if self.t < 2 {
            return bad("need T >= 2".into());
        }
        if !(self.loading_bound.is_finite() && self.loading_bound > 0.0) {
            return bad("loading bound must be positive".into());
        }
        if self.betas.iter().flatten().any(|b| !b.is_finite()) {
            return bad("betas must be finite".into());
        }
        Ok(())
    }

    /// `ln n / ln N`, a descriptive measure of factor strength.
    pub fn strength(&self) -> f64 {
        (self.n_nonzero as f64).ln() / (self.n_series as f64).ln()
    }
}

#[derive(Debug, Clone)]
pub struct SimDraw {
    pub panel: Panel,
    /// `target[t]` is the value of `y` at panel row `t`, horizon 1.
    pub target: TargetSeries,
    /// `(T + q) x r`. Row `t + q` drives panel row `t`; the first `q` rows are
    /// burn-in so the target is defined at every panel row.
    pub factors: DMatrix<f64>,
    /// `N x r` true loadings.
    pub loadings: DMatrix<f64>,
    /// Sorted indices of the nonzero rows of `loadings`.
    pub nonzero_rows: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    /// Target noise, aligned with `target` plus one final entry for `y_next`.
    pub target_noise: Vec<f64>,
    /// The target one step past the last panel row.
    pub y_next: f64,
}

impl SimDraw {
    pub fn q(&self) -> usize {
        self.betas.len()
    }

    /// True factor vector driving panel row `t`; `t` may run from `-q` up to
    /// `T - 1`.
    pub fn factor(&self, t: isize) -> Vec<f64> {
        let row = (t + self.q() as isize) as usize;
        self.factors.row(row).iter().copied().collect()
    }

    /// Noise-free part of `y` at panel row `t` (`0..=T`, `T` being `y_next`).
    pub fn signal(&self, t: usize) -> f64 {
        self.betas
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let f = self.factor(t as isize - 1 - j as isize);
                b.iter().zip(&f).map(|(b, f)| b * f).sum::<f64>()
            })
            .sum()
    }

    /// Regressors `(f_{t-1}', ..., f_{t-q}')` for the target at panel row `t`,
    /// i.e. the true stacked factors.
    pub fn true_design(&self) -> DMatrix<f64> {
        let (t, q, r) = (self.panel.n_obs(), self.q(), self.factors.ncols());
        DMatrix::from_fn(t, q * r, |row, c| {
            let f = self.factor(row as isize - 1 - (c / r) as isize);
            f[c % r]
        })
    }

    /// The panel with the target appended as a final column named `y`, all
    /// transformation codes 1.
    pub fn export_panel(&self) -> Result<Panel> {
        let (t, n) = (self.panel.n_obs(), self.panel.n_series());
        let values = DMatrix::from_fn(t, n + 1, |i, j| {
            if j < n {
                self.panel.values()[(i, j)]
            } else {
                self.target.values()[i]
            }
        });
        let mut names = self.panel.names().to_vec();
        names.push("y".into());
        Panel::with_metadata(values, self.panel.dates().to_vec(), names, vec![None; n + 1], vec![Some(1); n + 1])
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        save_fredmd(&self.export_panel()?, path)
    }

    /// `B_gamma`: row `i` stacks `gamma_ij * b_i'` over the lags of predictor
    /// `i`'s supervision regression, padding shorter fits with zeros.
    pub fn supervised_loadings(&self, scaling: &SupervisedScaling) -> Result<DMatrix<f64>> {
        let (n, r) = self.loadings.shape();
        if scaling.fits.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: scaling.fits.len(),
            });
        }
        let q = scaling.q;
        let mut out = DMatrix::zeros(n, q * r);
        for (i, fit) in scaling.fits.iter().enumerate() {
            for (j, g) in fit.coefficients.iter().enumerate() {
                for c in 0..r {
                    out[(i, j * r + c)] = g * self.loadings[(i, c)];
                }
            }
        }
        Ok(out)
    }
}

/// The sdPCA forecast regression with factors rotated into the coordinates of
/// the true supervised loadings: `B_gamma = U S V'` is formed from the fitted
/// supervision slopes and the TRUE loadings, and each factor row `g_t` is
/// replaced by `V g_t` (after sign alignment with `U`). On a well-estimated
/// draw the rotated factors approximate the stacked `(f_t, ..., f_{t-q+1})`,
/// so the regression coefficients line up with the stacked betas.
pub fn rotated_sdpca_design(draw: &SimDraw, k: usize, q: usize, opts: &PipelineOptions) -> Result<FactorDesign> {
    let mut ws = Workspace::new(&draw.panel, &draw.target, opts)?;
    let design = ws.design(&MethodSpec::sdpca(k, q))?;
    let scaling = design.scaling.as_ref().expect("sdPCA design carries its scaling");
    let b_gamma = draw.supervised_loadings(scaling)?;
    let reference = svd_parts(&b_gamma)?;
    if reference.v.nrows() != k {
        return Err(Error::InvalidConfig(format!(
            "rotation needs k = r * q = {}, got {k}",
            reference.v.nrows()
        )));
    }
    let fs = design.factors.as_ref().expect("sdPCA design carries its factors");
    let m = reference_rotation(fs, &reference)?;
    design.transform(&m)
}

/// The RNG for replication `rep` under `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draws replication `rep`.
pub fn generate(cfg: &SimConfig, rep: u64) -> Result<SimDraw> {
    cfg.validate()?;
    let mut rng = replication_rng(cfg.seed, rep);
    let (t, n, r, q) = (cfg.t, cfg.n_series, cfg.r(), cfg.q());

    let mut nonzero_rows = sample(&mut rng, n, cfg.n_nonzero).into_vec();
    nonzero_rows.sort_unstable();
    let law = Uniform::new_inclusive(-cfg.loading_bound, cfg.loading_bound)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut loadings = DMatrix::zeros(n, r);
    for &i in &nonzero_rows {
        for c in 0..r {
            loadings[(i, c)] = law.sample(&mut rng);
        }
    }

    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut factors = DMatrix::zeros(t + q, r);
    // Row-major fill keeps the stream order independent of storage layout.
    for i in 0..t + q {
        for c in 0..r {
            factors[(i, c)] = normal(&mut rng);
        }
    }
    let u_scale = if cfg.idiosyncratic_noise { 1.0 } else { 0.0 };
    let mut x = DMatrix::zeros(t, n);
    for i in 0..t {
        for j in 0..n {
            x[(i, j)] = u_scale * normal(&mut rng);
        }
    }
    x += factors.rows(q, t) * loadings.transpose();

    let e_scale = if cfg.target_noise { 1.0 } else { 0.0 };
    let target_noise: Vec<f64> = (0..=t).map(|_| e_scale * normal(&mut rng)).collect();

    let mut draw = SimDraw {
        panel: Panel::from_matrix(x)?,
        target: TargetSeries::new("y", vec![0.0; t])?,
        factors,
        loadings,
        nonzero_rows,
        betas: cfg.betas.clone(),
        target_noise,
        y_next: 0.0,
    };
    let y: Vec<f64> = (0..t).map(|s| draw.signal(s) + draw.target_noise[s]).collect();
    draw.y_next = draw.signal(t) + draw.target_noise[t];
    draw.target = TargetSeries::new("y", y)?;
    Ok(draw)
}

/// Sanity report on a draw against the laws it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    /// Largest |sample mean| of a factor coordinate over the panel rows.
    pub max_factor_mean: f64,
    pub mean_bound: f64,
    /// Max-norm distance between the factor sample covariance and `I_r`.
    pub covariance_deviation: f64,
    /// Largest |correlation| between two factor coordinates.
    pub max_cross_correlation: f64,
    pub nonzero_loading_rows: usize,
    pub expected_nonzero_rows: usize,
    pub strength: f64,
    pub ok: bool,
}

pub fn population_checks(draw: &SimDraw) -> PopulationReport {
    let t = draw.panel.n_obs();
    let f = draw.factors.rows(draw.q(), t);
    let tf = t as f64;
    let means: Vec<f64> = f.column_iter().map(|c| c.mean()).collect();
    let max_factor_mean = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut centered = f.into_owned();
    for (j, mut c) in centered.column_iter_mut().enumerate() {
        c.add_scalar_mut(-means[j]);
    }
    let cov = centered.tr_mul(&centered) / (tf - 1.0);
    let r = cov.nrows();
    let eye = DMatrix::<f64>::identity(r, r);
    let covariance_deviation = (&cov - eye).amax();
    let mut max_cross_correlation = 0.0f64;
    for a in 0..r {
        for b in a + 1..r {
            let c = cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt();
            max_cross_correlation = max_cross_correlation.max(c.abs());
        }
    }
    let nonzero_loading_rows = draw
        .loadings
        .row_iter()
        .filter(|row| row.iter().any(|v| *v != 0.0))
        .count();
    let mean_bound = 4.0 / tf.sqrt();
    let n = draw.panel.n_series();
    let strength = (draw.nonzero_rows.len() as f64).ln() / (n as f64).ln();
    PopulationReport {
        max_factor_mean,
        mean_bound,
        covariance_deviation,
        max_cross_correlation,
        nonzero_loading_rows,
        expected_nonzero_rows: draw.nonzero_rows.len(),
        strength,
        ok: max_factor_mean <= mean_bound
            && covariance_deviation <= 0.3
            && nonzero_loading_rows == draw.nonzero_rows.len(),
    }
}

/// OLS of the target on the true stacked factors, `(intercept, slopes)`.
pub fn oracle_regression(draw: &SimDraw) -> Result<(f64, DVector<f64>)> {
    let z = draw.true_design();
    let y = DVector::from_column_slice(draw.target.values());
    let fit = crate::linalg::ols(&z, &y, true)?;
    Ok((fit.intercept, fit.coefficients))
}

//! Flag and config-file handling. Every key can come from the command line or
//! from a TOML file with a `[common]` table and one table per command; flags
//! win over the command table, which wins over `[common]`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "sdpca", version, about = "Supervised dynamic PCA forecasting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw Monte-Carlo panels and evaluate the method grid on each.
    Simulate(Settings),
    /// Validate a FRED-MD CSV, optionally transform/standardize it, and report dropped columns.
    Ingest(Settings),
    /// Fit every requested method on the full sample and forecast `h` steps past its end.
    Forecast(Settings),
    /// Rolling-window out-of-sample evaluation on a FRED-MD CSV.
    Evaluate(Settings),
    /// In-sample R² of each predictor's supervision regression.
    #[command(name = "scan-r2")]
    ScanR2(Settings),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Ingest(_) => "ingest",
            Command::Forecast(_) => "forecast",
            Command::Evaluate(_) => "evaluate",
            Command::ScanR2(_) => "scan-r2",
        }
    }

    pub fn settings(&self) -> &Settings {
        match self {
            Command::Simulate(s)
            | Command::Ingest(s)
            | Command::Forecast(s)
            | Command::Evaluate(s)
            | Command::ScanR2(s) => s,
        }
    }
}

/// Keys shared by the command line and the config file. Unset keys fall back
/// to the config file and then to the per-command defaults below.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// TOML config file with `[common]` and per-command tables.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Master seed [default: 1234].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte-Carlo replications (simulate) [default: 100].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated methods: sdpca, pca, spca, sw, ar. Append `-lasso` for a
    /// penalized fit and `:K` to pin the factor count (the AR order for `ar`)
    /// [default: simulate `sdpca:4,pca:2,spca:2,sw:2`, otherwise `sdpca,pca,spca,sw,ar:1,ar:2`].
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Factor counts for methods without a pinned `:K` [default: 2].
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Lag orders; for `ar` without `:P` these are the AR orders [default: 2].
    #[arg(long, value_delimiter = ',')]
    pub q: Option<Vec<usize>>,
    /// Forecast horizons [default: 1].
    #[arg(long, value_delimiter = ',')]
    pub h: Option<Vec<usize>>,
    /// Share of the sample in the first training window [default: simulate 0.6, evaluate 0.8].
    #[arg(long = "train-frac")]
    pub train_frac: Option<f64>,
    /// Penalize every factor method with the Lasso [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub lasso: Option<bool>,
    /// Penalty: a number (glmnet scale), `validation`, `cv` or `cv1se` [default: validation].
    #[arg(long)]
    pub lambda: Option<String>,
    /// Output directory [default: out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long)]
    pub jobs: Option<usize>,

    /// FRED-MD CSV to read (ingest, forecast, evaluate, scan-r2).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column to forecast (forecast, evaluate, scan-r2).
    #[arg(long)]
    pub target: Option<String>,
    /// Apply each column's transformation code after reading [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub transform: Option<bool>,
    /// Write the standardized panel (ingest) [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
    /// Keep the rolling window at its initial width [default: false].
    #[arg(long = "fixed-width", num_args = 0..=1, default_missing_value = "true")]
    pub fixed_width: Option<bool>,
    /// Per-predictor lag selection for supervision: aic, bic or cv, with the
    /// largest `q` as the maximum order [default: fixed q].
    #[arg(long = "lag-criterion")]
    pub lag_criterion: Option<String>,

    /// Sample length (simulate) [default: 200].
    #[arg(long)]
    pub t: Option<usize>,
    /// Number of predictors (simulate) [default: 300].
    #[arg(long = "n-series")]
    pub n_series: Option<usize>,
    /// Predictors with nonzero loadings (simulate) [default: 40].
    #[arg(long = "n-nonzero")]
    pub n_nonzero: Option<usize>,
    /// Target coefficients per lag, `;`-separated lags of `,`-separated
    /// factors (simulate) [default: `1,-0.8;-1,2`].
    #[arg(long)]
    pub betas: Option<String>,
    /// insample, rolling or both (simulate) [default: both].
    #[arg(long)]
    pub mode: Option<String>,
    /// Also write every simulated panel as CSV (simulate) [default: false].
    #[arg(long = "save-draws", num_args = 0..=1, default_missing_value = "true")]
    pub save_draws: Option<bool>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl Settings {
    /// Fields set in `top` replace those in `self`.
    fn overlay(&mut self, top: &Settings) {
        overlay!(
            self, top, seed, reps, methods, k, q, h, train_frac, lasso, lambda, out, jobs, input, target,
            transform, standardize, fixed_width, lag_criterion, t, n_series, n_nonzero, betas, mode, save_draws
        );
    }
}

/// The fully resolved run configuration, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub reps: usize,
    pub methods: Vec<String>,
    pub k: Vec<usize>,
    pub q: Vec<usize>,
    pub h: Vec<usize>,
    pub train_frac: f64,
    pub lasso: bool,
    pub lambda: String,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub input: Option<PathBuf>,
    pub target: Option<String>,
    pub transform: bool,
    pub standardize: bool,
    pub fixed_width: bool,
    pub lag_criterion: Option<String>,
    pub t: usize,
    pub n_series: usize,
    pub n_nonzero: usize,
    pub betas: Vec<Vec<f64>>,
    pub mode: String,
    pub save_draws: bool,
}

fn read_file(path: &Path, command: &str) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut tables: BTreeMap<String, Settings> =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut merged = tables.remove("common").unwrap_or_default();
    if let Some(own) = tables.remove(command) {
        merged.overlay(&own);
    }
    let known = ["simulate", "ingest", "forecast", "evaluate", "scan-r2"];
    if let Some(other) = tables.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(CliError::config(format!("unknown config table `[{other}]`")));
    }
    Ok(merged)
}

pub fn parse_betas(raw: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let betas: Vec<Vec<f64>> = raw
        .split(';')
        .map(|lag| {
            lag.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(format!("bad --betas `{raw}`: {e}")))?;
    Ok(betas)
}

pub fn resolve(command: &Command) -> Result<RunConfig, CliError> {
    let name = command.name();
    let flags = command.settings();
    let mut s = match &flags.config {
        Some(path) => read_file(path, name)?,
        None => Settings::default(),
    };
    s.overlay(flags);

    let simulate = name == "simulate";
    let default_methods: &[&str] = if simulate {
        &["sdpca:4", "pca:2", "spca:2", "sw:2"]
    } else {
        &["sdpca", "pca", "spca", "sw", "ar:1", "ar:2"]
    };
    let cfg = RunConfig {
        command: name.to_string(),
        seed: s.seed.unwrap_or(1234),
        reps: s.reps.unwrap_or(100),
        methods: s
            .methods
            .unwrap_or_else(|| default_methods.iter().map(|m| m.to_string()).collect()),
        k: s.k.unwrap_or_else(|| vec![2]),
        q: s.q.unwrap_or_else(|| vec![2]),
        h: s.h.unwrap_or_else(|| vec![1]),
        train_frac: s.train_frac.unwrap_or(if simulate { 0.6 } else { 0.8 }),
        lasso: s.lasso.unwrap_or(false),
        lambda: s.lambda.unwrap_or_else(|| "validation".into()),
        out: s.out.unwrap_or_else(|| PathBuf::from("out")),
        jobs: s.jobs,
        input: s.input,
        target: s.target,
        transform: s.transform.unwrap_or(true),
        standardize: s.standardize.unwrap_or(false),
        fixed_width: s.fixed_width.unwrap_or(false),
        lag_criterion: s.lag_criterion,
        t: s.t.unwrap_or(200),
        n_series: s.n_series.unwrap_or(300),
        n_nonzero: s.n_nonzero.unwrap_or(40),
        betas: parse_betas(s.betas.as_deref().unwrap_or("1,-0.8;-1,2"))?,
        mode: s.mode.unwrap_or_else(|| "both".into()),
        save_draws: s.save_draws.unwrap_or(false),
    };
    cfg.check()?;
    Ok(cfg)
}

impl RunConfig {
    fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::config(m.to_string()));
        if self.methods.is_empty() || self.k.is_empty() || self.q.is_empty() || self.h.is_empty() {
            return bad("methods, k, q and h lists must be nonempty");
        }
        if self.k.contains(&0) || self.q.contains(&0) || self.h.contains(&0) {
            return bad("k, q and h values must be >= 1");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad("train-frac must lie in (0, 1)");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be >= 1");
        }
        if self.command == "simulate" && self.reps == 0 {
            return bad("reps must be >= 1");
        }
        if !["insample", "rolling", "both"].contains(&self.mode.as_str()) {
            return bad("mode must be insample, rolling or both");
        }
        let needs_input = ["ingest", "forecast", "evaluate", "scan-r2"].contains(&self.command.as_str());
        if needs_input {
            match &self.input {
                None => return bad("--input is required"),
                Some(p) if !p.is_file() => {
                    return Err(CliError::config(format!("input {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if ["forecast", "evaluate", "scan-r2"].contains(&self.command.as_str()) && self.target.is_none() {
            return bad("--target is required");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[common]\nseed = 7\nk = [1, 2]\n\n[simulate]\nreps = 3\nseed = 8\nbetas = \"1,1;1,1\"\n",
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "sdpca",
            "simulate",
            "--config",
            path.to_str().unwrap(),
            "--reps",
            "5",
        ])
        .unwrap();
        let cfg = resolve(&cli.command).unwrap();
        assert_eq!(cfg.seed, 8);
        assert_eq!(cfg.reps, 5);
        assert_eq!(cfg.k, vec![1, 2]);
        assert_eq!(cfg.betas, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(cfg.train_frac, 0.6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[simulate]\nrepz = 3\n").unwrap();
        let cli = Cli::try_parse_from(["sdpca", "simulate", "--config", path.to_str().unwrap()]).unwrap();
        assert!(resolve(&cli.command).is_err());
    }

    #[test]
    fn list_flags_split_on_commas() {
        let cli = Cli::try_parse_from(["sdpca", "simulate", "--k", "1,2,3", "--lasso", "--methods", "sdpca,ar:1"]).unwrap();
        let cfg = resolve(&cli.command).unwrap();
        assert_eq!(cfg.k, vec![1, 2, 3]);
        assert!(cfg.lasso);
        assert_eq!(cfg.methods, vec!["sdpca", "ar:1"]);
    }

    #[test]
    fn missing_input_is_a_config_error() {
        let cli = Cli::try_parse_from(["sdpca", "evaluate", "--target", "y"]).unwrap();
        assert!(resolve(&cli.command).is_err());
    }
}

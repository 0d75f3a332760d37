//! The five subcommands. Each writes its artifacts under `cfg.out` and returns
//! the list of written files plus the number of hard-error cells.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use sdpca::eval::{evaluate_sample, rolling_forecasts, EvalRecord, EvalReport, Experiment, RollingConfig};
use sdpca::forecast::{MethodSpec, PipelineOptions, Workspace};
use sdpca::fredmd::{ingest_fredmd, save_fredmd};
use sdpca::panel::{standardize, Panel, TargetSeries};
use sdpca::simgen::{generate, SimConfig};
use sdpca::supervise::{build_scaled_panel, LagSpec};
use sdpca::{extract_factors, Method};

use crate::grid::{lag_criterion, lasso_config, method_grid};
use crate::settings::RunConfig;
use crate::CliError;

pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub hard_errors: usize,
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn finish(self, hard_errors: usize) -> Outcome {
        Outcome {
            outputs: self.written,
            hard_errors,
        }
    }
}

fn options(cfg: &RunConfig) -> Result<PipelineOptions, CliError> {
    Ok(PipelineOptions {
        lasso: lasso_config(&cfg.lambda)?,
        ..PipelineOptions::default()
    })
}

fn specs(cfg: &RunConfig) -> Result<Vec<MethodSpec>, CliError> {
    let crit = lag_criterion(cfg.lag_criterion.as_deref())?;
    method_grid(&cfg.methods, &cfg.k, &cfg.q, cfg.lasso, crit)
}

/// A cell is a hard error when a metric that was asked for could not be
/// computed at all; individual skipped windows are only warnings.
fn hard_errors(records: &[EvalRecord], insample: bool, rolling: bool) -> usize {
    records
        .iter()
        .filter(|r| (insample && r.msfe.is_none()) || (rolling && r.rmsfe.is_none()))
        .count()
}

fn write_report(w: &mut Writer, report: &EvalReport) -> Result<(), CliError> {
    w.put("results.csv", report.to_csv()?)?;
    w.put("summary.json", report.summary_json()?)?;
    Ok(())
}

fn load_panel(cfg: &RunConfig) -> Result<(Panel, Vec<sdpca::fredmd::DroppedColumn>), CliError> {
    let input = cfg.input.as_ref().expect("checked at resolution");
    let ingested = ingest_fredmd(input)?;
    let mut panel = ingested.panel;
    if cfg.transform {
        panel = panel.apply_transforms()?;
    }
    Ok((panel, ingested.dropped))
}

fn split(cfg: &RunConfig) -> Result<(Panel, TargetSeries), CliError> {
    let (panel, _) = load_panel(cfg)?;
    let target = cfg.target.as_deref().expect("checked at resolution");
    Ok(panel.split_target(target)?)
}

/// Shares of total variation carried by the leading principal components of
/// the standardized panel.
fn pca_shares(panel: &Panel) -> Result<serde_json::Value, CliError> {
    let (std, stats) = standardize(panel, None)?;
    let k = 8.min(std.n_series()).min(std.n_obs() - 1);
    let fs = extract_factors(std.values(), k)?;
    Ok(json!({
        "n_obs": std.n_obs(),
        "n_series": std.n_series(),
        "zero_variance_columns": stats.zero_variance.iter().map(|&j| panel.names()[j].clone()).collect::<Vec<_>>(),
        "explained": fs.explained,
    }))
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sim = SimConfig::new(cfg.t, cfg.n_series, cfg.n_nonzero)
        .with_betas(cfg.betas.clone())
        .with_seed(cfg.seed);
    sim.validate()?;
    let specs = specs(cfg)?;
    let opts = options(cfg)?;
    let rolling = RollingConfig {
        train_fraction: cfg.train_frac,
        fixed_width: cfg.fixed_width,
    };
    let experiment = match cfg.mode.as_str() {
        "insample" => Experiment::InSample,
        "rolling" => Experiment::Rolling(rolling),
        _ => Experiment::Both(rolling),
    };
    let mut w = Writer::new(&cfg.out)?;
    info!(
        "simulate: {} reps of (T, N, n) = ({}, {}, {}), {} method cells, h = {:?}",
        cfg.reps,
        cfg.t,
        cfg.n_series,
        cfg.n_nonzero,
        specs.len(),
        cfg.h
    );
    let done = AtomicUsize::new(0);
    let step = (cfg.reps / 10).max(1);
    let per_rep: Vec<Result<(EvalReport, Option<(String, String)>), CliError>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let draw = generate(&sim, rep as u64)?;
            let mut report = EvalReport::default();
            for &h in &cfg.h {
                let y = draw.target.clone().with_horizon(h)?;
                report.extend(evaluate_sample(rep, &draw.panel, &y, &specs, &experiment, &opts)?);
            }
            let saved = if cfg.save_draws {
                let mut buf = Vec::new();
                sdpca::write_fredmd(&draw.export_panel()?, &mut buf)?;
                Some((format!("draws/rep_{rep:04}.csv"), String::from_utf8_lossy(&buf).into_owned()))
            } else {
                None
            };
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n % step == 0 || n == cfg.reps {
                info!("simulate: {n}/{} replications", cfg.reps);
            }
            Ok((report, saved))
        })
        .collect();
    let mut report = EvalReport::default();
    for r in per_rep {
        let (rep, saved) = r?;
        report.extend(rep);
        if let Some((name, csv)) = saved {
            w.put(&name, csv)?;
        }
    }
    write_report(&mut w, &report)?;
    let hard = hard_errors(&report.records, cfg.mode != "rolling", cfg.mode != "insample");
    Ok(w.finish(hard))
}

pub fn ingest(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (panel, dropped) = load_panel(cfg)?;
    let panel = if cfg.standardize { standardize(&panel, None)?.0 } else { panel };
    let mut w = Writer::new(&cfg.out)?;
    let path = cfg.out.join("panel.csv");
    save_fredmd(&panel, &path)?;
    w.written.push(path);
    let mut report = String::new();
    for d in &dropped {
        report.push_str(&serde_json::to_string(d)?);
        report.push('\n');
    }
    w.put("drop_report.jsonl", report)?;
    w.put("panel_pca.json", serde_json::to_string_pretty(&pca_shares(&panel)?)?)?;
    println!(
        "{}",
        json!({
            "n_obs": panel.n_obs(),
            "n_series": panel.n_series(),
            "dropped": dropped.iter().map(|d| d.name.clone()).collect::<Vec<_>>(),
        })
    );
    Ok(w.finish(0))
}

#[derive(Serialize)]
struct ForecastRecord {
    method: String,
    k: usize,
    q: usize,
    h: usize,
    forecast: Option<f64>,
    model: Option<sdpca::ForecastModel>,
    error: Option<String>,
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

pub fn forecast(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (panel, y) = split(cfg)?;
    let specs = specs(cfg)?;
    let opts = options(cfg)?;
    let mut w = Writer::new(&cfg.out)?;
    let mut lines = String::new();
    let mut hard = 0;
    for &h in &cfg.h {
        let yh = y.clone().with_horizon(h)?;
        let mut ws = Workspace::new(&panel, &yh, &opts)?;
        ws.plan(&specs);
        for spec in &specs {
            let label = spec.label();
            let rec = match ws.forecast(spec) {
                Ok(f) => ForecastRecord {
                    method: label.clone(),
                    k: spec.k,
                    q: f.model.q,
                    h,
                    forecast: Some(f.value),
                    model: Some(f.model),
                    error: None,
                },
                Err(e) => {
                    hard += 1;
                    log::warn!("{label} at h = {h}: {e}");
                    ForecastRecord {
                        method: label.clone(),
                        k: spec.k,
                        q: spec.q,
                        h,
                        forecast: None,
                        model: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            if rec.error.is_none() && spec.method != Method::Ar {
                let design = ws.design(spec)?;
                let stem = format!("{}_k{}_q{}_h{h}", slug(&label), spec.k, spec.q);
                if let Some(fs) = &design.factors {
                    w.put(&format!("loadings_{stem}.csv"), fs.loadings_csv(panel.names())?)?;
                }
                if let Some(sc) = &design.scaling {
                    w.put(&format!("supervision_{stem}.json"), sc.fits_json()?)?;
                }
            }
            lines.push_str(&serde_json::to_string(&rec)?);
            lines.push('\n');
        }
    }
    w.put("forecasts.jsonl", &lines)?;
    print!("{lines}");
    Ok(w.finish(hard))
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (panel, y) = split(cfg)?;
    let specs = specs(cfg)?;
    let opts = options(cfg)?;
    let rolling = RollingConfig {
        train_fraction: cfg.train_frac,
        fixed_width: cfg.fixed_width,
    };
    info!(
        "evaluate: T = {}, N = {}, {} method cells, h = {:?}",
        panel.n_obs(),
        panel.n_series(),
        specs.len(),
        cfg.h
    );
    let per_h: Vec<Result<_, CliError>> = cfg
        .h
        .par_iter()
        .map(|&h| {
            let yh = y.clone().with_horizon(h)?;
            let cells = rolling_forecasts(&panel, &yh, &specs, &rolling, &opts)?;
            info!("evaluate: h = {h} done");
            Ok((h, cells))
        })
        .collect();
    let mut report = EvalReport::default();
    let mut detail = String::from("method,k,q,h,window_end,forecast,actual\n");
    let mut skips = String::new();
    for r in per_h {
        let (h, cells) = r?;
        report.extend(EvalReport::from_parts(0, &specs, h, None, Some(&cells)));
        for c in &cells {
            let label = c.spec.label();
            for (end, f, a) in &c.forecasts {
                detail.push_str(&format!("{label},{},{},{h},{end},{f},{a}\n", c.spec.k, c.spec.q));
            }
            for s in &c.skipped {
                skips.push_str(
                    &serde_json::to_string(&json!({"method": label, "k": c.spec.k, "q": c.spec.q, "h": h, "window_end": s.window_end, "error": s.error}))?,
                );
                skips.push('\n');
            }
        }
    }
    let mut w = Writer::new(&cfg.out)?;
    write_report(&mut w, &report)?;
    w.put("forecasts.csv", detail)?;
    w.put("skipped_windows.jsonl", skips)?;
    w.put("panel_pca.json", serde_json::to_string_pretty(&pca_shares(&panel)?)?)?;
    let hard = hard_errors(&report.records, false, true);
    Ok(w.finish(hard))
}

pub fn scan_r2(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (panel, y) = split(cfg)?;
    let h = cfg.h[0];
    let q = *cfg.q.iter().max().expect("nonempty");
    let spec = match lag_criterion(cfg.lag_criterion.as_deref())? {
        Some(criterion) => LagSpec::Select { q_max: q, criterion },
        None => LagSpec::Fixed(q),
    };
    let yh = y.with_horizon(h)?;
    let sup = build_scaled_panel(&yh, &panel, spec)?;
    let mut out = String::from("series,group,tcode,lag_order,r2\n");
    for (i, fit) in sup.fits.iter().enumerate() {
        let group = panel.groups()[i].clone().unwrap_or_default();
        let tcode = panel.tcodes()[i].map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&panel.names()[i]),
            csv_field(&group),
            tcode,
            fit.lag_order,
            fit.r_squared
        ));
    }
    let mut w = Writer::new(&cfg.out)?;
    w.put("r2.csv", out)?;
    Ok(w.finish(0))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

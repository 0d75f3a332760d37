//! Method tokens and penalty rules from the command line.

use sdpca::forecast::{LambdaSelection, LassoConfig, Method, MethodSpec};
use sdpca::supervise::{LagCriterion, LagSpec};

use crate::CliError;

/// Expands tokens such as `sdpca`, `pca:2`, `sdpca-lasso:4` or `ar:1` into
/// method specs, crossing unpinned factor counts with `ks` and lags with `qs`.
pub fn method_grid(
    tokens: &[String],
    ks: &[usize],
    qs: &[usize],
    lasso_all: bool,
    lag_criterion: Option<LagCriterion>,
) -> Result<Vec<MethodSpec>, CliError> {
    let mut out: Vec<MethodSpec> = Vec::new();
    let mut push = |s: MethodSpec| {
        if !out.contains(&s) {
            out.push(s);
        }
    };
    for token in tokens {
        let token = token.trim();
        let (name, pinned) = match token.split_once(':') {
            Some((n, k)) => {
                let k: usize = k
                    .parse()
                    .map_err(|_| CliError::config(format!("bad count in method `{token}`")))?;
                if k == 0 {
                    return Err(CliError::config(format!("count in `{token}` must be >= 1")));
                }
                (n, Some(k))
            }
            None => (token, None),
        };
        let (name, lasso) = match name.strip_suffix("-lasso") {
            Some(n) => (n, true),
            None => (name, lasso_all),
        };
        let method: Method = name.parse().map_err(|e: sdpca::Error| CliError::config(e.to_string()))?;
        let counts: Vec<usize> = pinned.map_or_else(|| ks.to_vec(), |k| vec![k]);
        match method {
            Method::Ar => {
                for p in pinned.map_or_else(|| qs.to_vec(), |p| vec![p]) {
                    push(MethodSpec::ar(p));
                }
            }
            Method::Spca | Method::Sw => {
                for &k in &counts {
                    let s = if method == Method::Sw { MethodSpec::sw(k) } else { MethodSpec::spca(k) };
                    push(s.with_lasso(lasso));
                }
            }
            Method::Sdpca | Method::PcaLagged => {
                for &k in &counts {
                    for &q in qs {
                        let mut s = MethodSpec::new(method, k, q).with_lasso(lasso);
                        if let (Method::Sdpca, Some(c)) = (method, lag_criterion) {
                            s = s.with_lag_spec(LagSpec::Select { q_max: q, criterion: c });
                        }
                        push(s);
                    }
                }
            }
            Method::Linear => return Err(CliError::config("`linear` is not a forecasting method".into())),
        }
    }
    Ok(out)
}

pub fn lag_criterion(raw: Option<&str>) -> Result<Option<LagCriterion>, CliError> {
    match raw.map(str::to_ascii_lowercase).as_deref() {
        None | Some("fixed") => Ok(None),
        Some("aic") => Ok(Some(LagCriterion::Aic)),
        Some("bic") => Ok(Some(LagCriterion::Bic)),
        Some("cv") => Ok(Some(LagCriterion::Cv)),
        Some(other) => Err(CliError::config(format!("unknown lag criterion `{other}`"))),
    }
}

/// `validation`, `cv`, `cv1se`, or a fixed penalty on the glmnet scale.
pub fn lasso_config(raw: &str) -> Result<LassoConfig, CliError> {
    let selection = match raw.to_ascii_lowercase().as_str() {
        "validation" => LambdaSelection::Validation { holdout_fraction: 0.2 },
        "cv" => LambdaSelection::KFold { folds: 10, one_se: false },
        "cv1se" => LambdaSelection::KFold { folds: 10, one_se: true },
        other => {
            let l: f64 = other
                .parse()
                .map_err(|_| CliError::config(format!("bad --lambda `{raw}`")))?;
            if !(l.is_finite() && l >= 0.0) {
                return Err(CliError::config("lambda must be finite and >= 0".into()));
            }
            LambdaSelection::Fixed(l)
        }
    };
    Ok(LassoConfig {
        selection,
        ..LassoConfig::default()
    })
}

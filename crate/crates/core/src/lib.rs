//! Supervised dynamic principal components for forecasting with large
//! panels of predictors.
//!
//! Each predictor is first regressed on its own lags against the target `h`
//! steps ahead; the fitted values form a target-aware panel whose principal
//! components are then used in a direct forecast regression. Unsupervised
//! PCA, scaled PCA and autoregressive benchmarks share the same machinery.

pub mod error;
pub mod eval;
pub mod factors;
pub mod forecast;
pub mod fredmd;
pub mod linalg;
pub mod panel;
pub mod simgen;
pub mod supervise;

pub use error::{Error, Result};
pub use factors::{extract_factors, extract_factors_with, select_num_factors, EigenSolver, FactorCountMethod, FactorSet};
pub use forecast::{forecast_method, ForecastModel, LassoConfig, Method, MethodSpec, PipelineOptions};
pub use fredmd::{ingest_fredmd, read_fredmd, write_fredmd};
pub use panel::{standardize, Panel, TargetSeries};
pub use supervise::{build_scaled_panel, LagCriterion, LagSpec, SupervisedScaling};

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/panels.md")]
    mod panels {}
    #[doc = include_str!("../../../book/src/supervision.md")]
    mod supervision {}
    #[doc = include_str!("../../../book/src/factors.md")]
    mod factors {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

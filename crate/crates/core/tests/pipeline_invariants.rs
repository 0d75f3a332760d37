use proptest::prelude::*;

use sdpca::forecast::Workspace;
use sdpca::simgen::{generate, SimConfig};
use sdpca::{forecast_method, MethodSpec, Panel, PipelineOptions, TargetSeries};

fn draw(seed: u64) -> (Panel, TargetSeries) {
    let d = generate(&SimConfig::new(80, 25, 15).with_seed(seed), 0).unwrap();
    (d.panel, d.target)
}

fn specs(k: usize) -> [MethodSpec; 4] {
    [MethodSpec::sdpca(k, 2), MethodSpec::pca_lagged(k, 2), MethodSpec::spca(k), MethodSpec::sw(k)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn an_extra_factor_never_fits_worse(seed in 0u64..10_000, k in 1usize..5) {
        let (panel, y) = draw(seed);
        let opts = PipelineOptions::default();
        for (small, large) in specs(k).iter().zip(specs(k + 1).iter()) {
            let a = forecast_method(small, &panel, &y, &opts).unwrap().model.insample_msfe;
            let b = forecast_method(large, &panel, &y, &opts).unwrap().model.insample_msfe;
            prop_assert!(b <= a * (1.0 + 1e-10) + 1e-12, "{}: k={} {} vs k+1 {}", small.label(), k, a, b);
        }
    }

    #[test]
    fn sdpca_forecast_ignores_predictor_units(
        seed in 0u64..10_000,
        col in 0usize..25,
        c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
    ) {
        let (panel, y) = draw(seed);
        let mut values = panel.values().clone();
        values.column_mut(col).scale_mut(c);
        let rescaled = Panel::from_matrix(values).unwrap();
        let opts = PipelineOptions::default();
        let spec = MethodSpec::sdpca(3, 2);
        let a = forecast_method(&spec, &panel, &y, &opts).unwrap().value;
        let b = forecast_method(&spec, &rescaled, &y, &opts).unwrap().value;
        prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
    }

    #[test]
    fn contemporaneous_methods_ignore_planned_lags(seed in 0u64..10_000, q in 2usize..5) {
        let (panel, y) = draw(seed);
        let opts = PipelineOptions::default();
        let mut ws = Workspace::new(&panel, &y, &opts).unwrap();
        // Planning a deeper lagged method moves the common first row; the
        // contemporaneous methods must not notice.
        ws.plan(&[MethodSpec::sdpca(2, q), MethodSpec::pca_lagged(2, q), MethodSpec::sw(2), MethodSpec::spca(2)]);
        for spec in [MethodSpec::sw(2), MethodSpec::spca(2)] {
            let planned = ws.forecast(&spec).unwrap();
            let alone = forecast_method(&spec, &panel, &y, &opts).unwrap();
            prop_assert_eq!(planned.value.to_bits(), alone.value.to_bits());
            prop_assert_eq!(&planned.model.coefficients, &alone.model.coefficients);
        }
    }
}

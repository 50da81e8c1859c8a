use proptest::prelude::*;

use super::*;
use crate::model::{Model, ModelConfig, ModelKind};

fn round_trip(t: &HorizonTable) -> HorizonTable {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    HorizonTable::read_csv(buf.as_slice()).unwrap()
}

#[test]
fn improvement_matches_hand_computed_values() {
    let cases = [(1.463, 1.327, 10.2), (12.973, 1.327, 877.6), (2.861, 2.515, 13.76)];
    for (other, reference, pct) in cases {
        let got = relative_improvement(other, reference).unwrap();
        assert!((got - pct).abs() < 0.05, "{other} vs {reference}: {got}");
    }
    assert_eq!(relative_improvement(1.327, 1.327).unwrap(), 0.0);
    assert!(relative_improvement(1.0, 0.0).is_err());
    assert!(relative_improvement(f64::NAN, 1.0).is_err());
}

#[test]
fn improvement_table_has_zero_reference_column_and_skips_gaps() {
    let mut t = HorizonTable::new("horizon", vec!["temponet".into(), "dlinear".into()], vec![1, 20]);
    t.set(1, "temponet", Some(2.0)).unwrap();
    t.set(1, "dlinear", Some(3.0)).unwrap();
    t.set(20, "dlinear", Some(4.0)).unwrap();
    let imp = t.improvement_over("temponet").unwrap();
    assert_eq!(imp.get(1, "temponet"), Some(0.0));
    assert_eq!(imp.get(1, "dlinear"), Some(50.0));
    assert_eq!(imp.get(20, "dlinear"), None);
    assert!(t.improvement_over("nlinear").is_err());
    assert!(t.set(40, "temponet", Some(1.0)).is_err());
}

#[test]
fn two_by_two_mae_matrix_from_cells() {
    let cell = |m: &str, h, mae| MetricCell {
        mae: Some(mae),
        ..MetricCell::failed(m, h, "")
    };
    let mut cells = vec![cell("temponet", 20, 1.0), cell("dlinear", 1, 2.0), cell("temponet", 1, 0.5)];
    cells.push(cell("dlinear", 20, 3.0));
    let t = MetricsReport { cells }.mae_table();
    assert_eq!(t.horizons, vec![1, 20]);
    assert_eq!(t.models, vec!["temponet".to_string(), "dlinear".to_string()]);
    assert!(t.values.iter().flatten().all(Option::is_some));
    assert_eq!(t.get(20, "dlinear"), Some(3.0));
}

#[test]
fn metrics_report_round_trips_including_failures() {
    let report = MetricsReport {
        cells: vec![
            MetricCell {
                model: "temponet".into(),
                horizon: 20,
                mae: Some(1.2345678901234567),
                mse: Some(2.5e-7),
                param_count: Some(245_505),
                train_ms: Some(1234.5),
                infer_mean_ms: Some(0.1),
                infer_std_ms: Some(0.01),
                failure: None,
            },
            MetricCell::failed("dlinear", 20, "training diverged, at epoch 2"),
        ],
    };
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    assert_eq!(MetricsReport::read_csv(buf.as_slice()).unwrap(), report);
}

#[test]
fn horizon_table_rejects_bad_rows() {
    assert!(HorizonTable::read_csv("".as_bytes()).is_err());
    assert!(HorizonTable::read_csv("horizon,a\nx,1\n".as_bytes()).is_err());
    assert!(HorizonTable::read_csv("horizon,a\n1,zz\n".as_bytes()).is_err());
}

#[test]
fn box_stats_match_sorted_interpolation() {
    let s = BoxStats::from_values(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
    assert_eq!(s, BoxStats { min: 1.0, q1: 2.0, median: 3.0, q3: 4.0, max: 5.0 });
    let s = BoxStats::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
    assert!(BoxStats::from_values(&[]).is_err());
    assert!(BoxStats::from_values(&[1.0, f64::NAN]).is_err());
}

#[test]
fn svg_figures_are_well_formed() {
    let series = vec![
        Series { name: "history".into(), start: 0, values: vec![1.0, 2.0, 3.0] },
        Series { name: "true".into(), start: 3, values: vec![4.0, 5.0] },
        Series { name: "a<b".into(), start: 3, values: vec![4.5, 5.5] },
    ];
    let svg = forecast_svg("window 0", &series).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert!(svg.contains("a&lt;b"));
    let groups = vec![("x".to_string(), vec![1.0, 2.0]), ("y".to_string(), vec![3.0])];
    let svg = box_plot_svg("mae", &groups).unwrap();
    assert_eq!(svg.matches("<rect").count(), 3);
    assert!(forecast_svg("empty", &[]).is_err());
    assert!(box_plot_svg("none", &[]).is_err());
}

#[test]
fn bench_records_its_settings_and_orders_models() {
    let cfg = ModelConfig {
        d_model: 16,
        heads: 2,
        d_ff: 32,
        n_enc: 1,
        n_dec: 1,
        in_channels: 3,
        lookback: 16,
        horizon: 4,
        label_len: 8,
        ..ModelConfig::default()
    };
    let batch = crate::diagnostics::micro_batch_for(&cfg, 1, 3).unwrap();
    let settings = BenchConfig { warmup: 1, repeats: 10 };
    let net = Model::new(ModelKind::Temponet, cfg.clone(), 0).unwrap();
    let naive = Model::new(ModelKind::Persistence, cfg, 0).unwrap();
    let a = bench(&net, &batch, &settings).unwrap();
    let b = bench(&naive, &batch, &settings).unwrap();
    assert_eq!((a.warmup, a.repeats, a.model.as_str()), (1, 10, "temponet"));
    assert_eq!(a.param_count, net.param_count());
    assert_eq!(b.param_count, 0);
    assert!(b.mean_ms < a.mean_ms, "{b:?} vs {a:?}");
    assert!(bench(&net, &batch, &BenchConfig { warmup: 0, repeats: 0 }).is_err());
}

fn table_strategy() -> impl Strategy<Value = HorizonTable> {
    (1usize..4, 1usize..5).prop_flat_map(|(m, h)| {
        proptest::collection::vec(proptest::option::of(-1e6f64..1e6), m * h).prop_map(move |vals| {
            let models = (0..m).map(|k| format!("m{k}")).collect();
            let horizons = (1..=h).map(|k| k * 20).collect();
            let mut t = HorizonTable::new("horizon", models, horizons);
            for (r, row) in t.values.iter_mut().enumerate() {
                row.copy_from_slice(&vals[r * m..(r + 1) * m]);
            }
            t
        })
    })
}

proptest! {
    #[test]
    fn prop_horizon_tables_round_trip(t in table_strategy()) {
        prop_assert_eq!(round_trip(&t), t);
    }

    #[test]
    fn prop_improvement_sign_is_antisymmetric(a in 0.01f64..100.0, b in 0.01f64..100.0) {
        let ab = relative_improvement(a, b).unwrap();
        let ba = relative_improvement(b, a).unwrap();
        prop_assert!(ab * ba <= 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
        prop_assert_eq!(ab > 0.0, a > b);
    }
}

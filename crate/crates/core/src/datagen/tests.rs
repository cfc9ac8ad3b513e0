use super::*;
use crate::autodiff::Tensor;

fn toy(x: Vec<Vec<f64>>, kinds: Vec<FeatureKind>) -> CausalDataset {
    let n = x.len();
    let d = kinds.len();
    CausalDataset {
        x: Tensor::from_rows(&x).unwrap(),
        t: (0..n).map(|i| (i % 2) as u8).collect(),
        y: vec![0.0; n],
        mu0: None,
        mu1: None,
        feature_kinds: kinds,
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
    }
}

#[test]
fn binary_columns_become_plus_minus_one() {
    let ds = toy(vec![vec![0.0], vec![1.0], vec![1.0], vec![0.0]], vec![FeatureKind::Binary]);
    let (out, _) = preprocess(&ds, PreprocSpec::default()).unwrap();
    assert_eq!(out.x.data(), &[-1.0, 1.0, 1.0, -1.0]);
}

#[test]
fn continuous_columns_map_onto_range() {
    let ds = toy(vec![vec![2.0], vec![4.0], vec![6.0]], vec![FeatureKind::Continuous]);
    let (out, _) = preprocess(&ds, PreprocSpec::default()).unwrap();
    let expected = [0.05, 0.525, 1.0];
    for (a, b) in out.x.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
}

#[test]
fn preprocessing_is_idempotent() {
    let raw = gen_ihdp_like(&GeneratorConfig::ihdp_like(3)).unwrap();
    let (once, _) = preprocess(&raw, PreprocSpec::default()).unwrap();
    let (twice, _) = preprocess(&once, PreprocSpec::default()).unwrap();
    for (a, b) in once.x.data().iter().zip(twice.x.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_column_goes_to_midpoint() {
    let ds = toy(vec![vec![3.0], vec![3.0]], vec![FeatureKind::Continuous]);
    let (out, _) = preprocess(&ds, PreprocSpec::default()).unwrap();
    assert_eq!(out.x.data(), &[0.525, 0.525]);
}

#[test]
fn invalid_ranges_are_rejected() {
    let ds = toy(vec![vec![1.0], vec![2.0]], vec![FeatureKind::Continuous]);
    assert!(preprocess(&ds, PreprocSpec { lo: 0.0, hi: 1.0 }).is_err());
    assert!(preprocess(&ds, PreprocSpec { lo: 0.5, hi: 0.5 }).is_err());
    assert!("ordinal".parse::<FeatureKind>().is_err());
}

#[test]
fn test_mapping_is_clamp_free_but_never_zero() {
    let train = toy(vec![vec![1.0], vec![2.0]], vec![FeatureKind::Continuous]);
    let p = Preprocessor::fit(&train, PreprocSpec::default()).unwrap();
    // 1 − 0.05/0.95 maps exactly onto zero before the nudge.
    let test = Tensor::matrix(3, 1, vec![5.0, -3.0, 1.0 - 0.05 / 0.95]).unwrap();
    let out = p.apply_matrix(&test).unwrap();
    assert!(out.data()[0] > 1.0);
    assert!(out.data()[1] < 0.0);
    assert!(out.data().iter().all(|&v| v != 0.0));
}

#[test]
fn generated_data_has_no_zero_after_preprocessing() {
    for cfg in [GeneratorConfig::ihdp_like(1), GeneratorConfig::acic_like(1)] {
        let raw = generate(&cfg).unwrap();
        let (ds, _) = preprocess(&raw, PreprocSpec::default()).unwrap();
        let min_abs = ds.x.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        assert!(min_abs > 0.0);
        let frac = ds.treated_fraction();
        assert!(frac > 0.0 && frac < 1.0);
    }
}

#[test]
fn ihdp_defaults_and_calibrated_effect() {
    let ds = gen_ihdp_like(&GeneratorConfig::ihdp_like(0)).unwrap();
    assert_eq!((ds.n_samples(), ds.n_features()), (747, 25));
    assert_eq!(ds.feature_kinds.iter().filter(|k| **k == FeatureKind::Binary).count(), 19);
    let tau = ds.true_ite().unwrap();
    let mean = tau.iter().sum::<f64>() / tau.len() as f64;
    assert!((mean - 4.0).abs() < 1e-9, "mean effect {mean}");
    for name in IHDP_TARGETS {
        assert!(ds.column_index(name).is_some(), "{name}");
    }
    let kinds: Vec<_> = IHDP_TARGETS.iter().map(|n| ds.feature_kinds[ds.column_index(n).unwrap()]).collect();
    assert_eq!(kinds.iter().filter(|k| **k == FeatureKind::Continuous).count(), 2);
}

/// Mean treated fraction over 100 seeds under no selection bias stays inside
/// the 3σ band of a fair coin: σ = sqrt(0.25 / (747 · 100)).
#[test]
fn unbiased_selection_treats_half() {
    let fracs: Vec<f64> = (0..100)
        .map(|s| {
            let cfg = GeneratorConfig {
                selection_bias_strength: 0.0,
                ..GeneratorConfig::ihdp_like(s)
            };
            gen_ihdp_like(&cfg).unwrap().treated_fraction()
        })
        .collect();
    let mean = fracs.iter().sum::<f64>() / 100.0;
    let sigma = (0.25f64 / (747.0 * 100.0)).sqrt();
    assert!((mean - 0.5).abs() < 3.0 * sigma, "mean treated fraction {mean}");
}

#[test]
fn acic_defaults_bounded_effect_and_determinism() {
    let cfg = GeneratorConfig::acic_like(4);
    let ds = gen_acic_like(&cfg).unwrap();
    assert_eq!((ds.n_samples(), ds.n_features()), (1000, 200));
    assert!(ds.true_ite().unwrap().iter().all(|&t| (0.1..=0.5).contains(&t)));
    assert_eq!(ds, gen_acic_like(&cfg).unwrap());
    assert_ne!(ds, gen_acic_like(&GeneratorConfig::acic_like(5)).unwrap());
}

#[test]
fn generator_config_validation() {
    let bad = GeneratorConfig {
        n_binary: 30,
        ..GeneratorConfig::ihdp_like(0)
    };
    assert!(matches!(generate(&bad), Err(DataError::Config(_))));
    let small = GeneratorConfig {
        n_samples: 10,
        ..GeneratorConfig::ihdp_like(0)
    };
    assert!(generate(&small).is_err());
}

#[test]
fn split_sizes_follow_floor_of_three_quarters() {
    let ds = gen_ihdp_like(&GeneratorConfig::ihdp_like(0)).unwrap();
    let (train, test, idx) = split(&ds, 0.75, 1).unwrap();
    assert_eq!((train.n_samples(), test.n_samples()), (560, 187));
    let mut all: Vec<usize> = idx.train.iter().chain(&idx.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..747).collect::<Vec<_>>());
    assert!(train.mu0.is_some() && test.mu1.is_some());

    let acic = gen_acic_like(&GeneratorConfig::acic_like(0)).unwrap();
    let (train, test, _) = split(&acic, 0.75, 1).unwrap();
    assert_eq!((train.n_samples(), test.n_samples()), (750, 250));
    assert!(split(&acic, 1.0, 0).is_err());
    assert!(split(&acic, 0.0, 0).is_err());
}

#[test]
fn split_fails_when_train_cannot_hold_both_arms() {
    let mut ds = toy((0..20).map(|i| vec![i as f64]).collect(), vec![FeatureKind::Continuous]);
    ds.t = vec![0; 20];
    ds.t[0] = 1;
    // One treated row and a 5% train share: at most one row in train.
    assert!(matches!(split(&ds, 0.05, 0), Err(DataError::Degenerate(_))));
}

#[test]
fn csv_toy_file_loads() {
    let text = "a,b,t,y\n0.5,1,1,2.0\n1.5,0,0,1.0\n2.5,1,1,3.0\n";
    let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
    assert_eq!((ds.n_samples(), ds.n_features()), (3, 2));
    assert_eq!(ds.feature_kinds, vec![FeatureKind::Continuous, FeatureKind::Binary]);
    assert!(ds.mu0.is_none());
}

#[test]
fn csv_errors_are_descriptive() {
    let no_y = "a,t\n1,0\n";
    match read_csv(no_y.as_bytes(), &CsvSchema::default()) {
        Err(DataError::MissingColumn(c)) => assert_eq!(c, "y"),
        other => panic!("unexpected {other:?}"),
    }
    let bad = "a,t,y\n1,0,2\nfoo,1,3\n";
    let msg = read_csv(bad.as_bytes(), &CsvSchema::default()).unwrap_err().to_string();
    assert!(msg.contains("line 3") && msg.contains("`a`"), "{msg}");
    assert!(read_csv("".as_bytes(), &CsvSchema::default()).is_err());
    assert!(read_csv("a,t,y\n".as_bytes(), &CsvSchema::default()).is_err());
}

#[test]
fn csv_schema_overrides_kind() {
    let text = "a,t,y\n1,1,2\n2,0,1\n";
    let mut schema = CsvSchema::default();
    schema.kinds.insert("a".into(), FeatureKind::Continuous);
    let ds = read_csv(text.as_bytes(), &schema).unwrap();
    assert_eq!(ds.feature_kinds, vec![FeatureKind::Continuous]);
}

#[test]
fn csv_round_trip_is_exact() {
    let ds = gen_ihdp_like(&GeneratorConfig {
        n_samples: 40,
        ..GeneratorConfig::ihdp_like(8)
    })
    .unwrap();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back.x, ds.x);
    assert_eq!(back.mu1, ds.mu1);
    assert_eq!(back.feature_kinds, ds.feature_kinds);
}

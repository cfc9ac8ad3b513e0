use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::FeatureKind;

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        latent_dim: 4,
        encoder_hidden: vec![16, 16],
        decoder_hidden: vec![16],
        discriminator_hidden: vec![16],
        ..ArchConfig::default()
    }
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        arch: tiny_arch(),
        seed: 5,
        ..TrainConfig::default()
    }
}

/// `y = x·w + t` with a few continuous covariates.
fn toy(n: usize, d: usize, treated: usize, seed: u64) -> CausalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
    let t: Vec<u8> = (0..n).map(|i| u8::from(i < treated)).collect();
    let mu0: Vec<f64> = rows.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let mu1: Vec<f64> = mu0.iter().map(|v| v + 1.0).collect();
    let y = (0..n).map(|i| if t[i] == 1 { mu1[i] } else { mu0[i] }).collect();
    CausalDataset {
        x: Tensor::from_rows(&rows).unwrap(),
        t,
        y,
        mu0: Some(mu0),
        mu1: Some(mu1),
        feature_kinds: vec![FeatureKind::Continuous; d],
        feature_names: (0..d).map(|j| format!("x{j}")).collect(),
    }
}

#[test]
fn balanced_batches() {
    let ds = toy(20, 3, 2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = sample_balanced_batch(&ds, 8, 5, &mut rng).unwrap();
    assert_eq!(b.t, vec![1, 1, 1, 1, 0, 0, 0, 0]);
    assert_eq!(b.noise.shape(), &[8, 5]);
    assert!(b.rows[..4].iter().all(|&r| r < 2));
    let distinct: std::collections::BTreeSet<_> = b.rows[..4].iter().collect();
    assert!(distinct.len() <= 2);
    let again = sample_balanced_batch(&ds, 8, 5, &mut rng).unwrap();
    assert_ne!(b, again);
    assert!(sample_balanced_batch(&ds, 7, 5, &mut rng).is_err());

    let mut all_treated = ds.clone();
    all_treated.t = vec![1; 20];
    assert!(matches!(sample_balanced_batch(&all_treated, 8, 5, &mut rng), Err(TrainError::Data(_))));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 6 + 1, ..TrainConfig::default() },
        TrainConfig { batch_size: 2, ..TrainConfig::default() },
        TrainConfig { d_steps_per_g_step: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))), "{bad:?}");
    }
    let err = toml::from_str::<TrainConfig>("epoch = 3").unwrap_err().to_string();
    assert!(err.contains("epoch"), "{err}");
}

#[test]
fn vegan_without_runtime_is_vegan_i_and_deterministic() {
    let ds = toy(48, 3, 20, 1);
    let cfg = tiny_cfg(3);
    let (a, la) = train_vegan(&ds, None, &cfg).unwrap();
    let (b, lb) = train_vegan_i(&ds, &cfg).unwrap();
    let (c, _) = train_vegan_i(&ds, &cfg).unwrap();
    assert_eq!(a.store, b.store);
    assert_eq!(b.store, c.store);
    assert_eq!(la.epochs.len(), 3);
    assert!(lb.epochs.iter().all(|e| e.d_beta_bce.is_none() && e.d_delta_bce.is_some()));

    let fresh = VeganModel::new(3, &cfg.arch, derive(cfg.seed, &[MODEL_STREAM])).unwrap();
    for id in b.d_beta_params() {
        assert_eq!(b.store.get(id), fresh.store.get(id));
    }
    for id in b.d_delta_params() {
        assert_ne!(b.store.get(id), fresh.store.get(id));
    }

    let disabled = TrainConfig { use_runtime_da: false, ..cfg.clone() };
    let (d, _) = train_vegan(&ds, Some(&ds.x), &disabled).unwrap();
    assert_eq!(d.store, b.store);
    let (e, le) = train_vegan(&ds, Some(&ds.x), &cfg).unwrap();
    assert_ne!(e.store, b.store);
    assert!(le.epochs.iter().all(|r| r.d_beta_bce.is_some()));
}

#[test]
fn tarnet_plus_without_runtime_is_tarnet() {
    let ds = toy(48, 3, 20, 2);
    let cfg = tiny_cfg(3);
    let (a, la) = train_tarnet(&ds, &cfg).unwrap();
    let (b, _) = train_tarnet_plus(&ds, None, &cfg).unwrap();
    assert_eq!(a.store, b.store);
    assert!(la.epochs.iter().all(|e| e.d_delta_bce.is_none() && e.d_beta_bce.is_none()));
    let (c, _) = train_tarnet_plus(&ds, Some(&ds.x), &cfg).unwrap();
    for id in a.psi_params() {
        assert_ne!(a.store.get(id), c.store.get(id));
    }
}

#[test]
fn runtime_width_is_checked() {
    let ds = toy(40, 3, 20, 3);
    let wrong = Tensor::zeros(&[5, 4]);
    assert!(matches!(train_vegan(&ds, Some(&wrong), &tiny_cfg(1)), Err(TrainError::Data(_))));
}

#[test]
fn overflow_aborts_with_position() {
    let mut ds = toy(40, 3, 20, 4);
    ds.y.iter_mut().for_each(|v| *v *= 1e300);
    let cfg = TrainConfig {
        standardize_outcome: false,
        ..tiny_cfg(2)
    };
    match train_tarnet(&ds, &cfg) {
        Err(TrainError::NonFinite { epoch, batch, .. }) => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn tarnet_fits_a_linear_toy() {
    let ds = toy(64, 3, 32, 6);
    let cfg = TrainConfig {
        batch_size: 32,
        ..tiny_cfg(500)
    };
    let (_, log) = train_tarnet(&ds, &cfg).unwrap();
    let last = log.last().unwrap().reconstruction;
    assert!(last < 0.01, "{last}");
}

#[test]
fn identical_domains_keep_d_beta_at_chance() {
    let ds = toy(64, 3, 32, 7);
    let (_, log) = train_tarnet_plus(&ds, Some(&ds.x), &tiny_cfg(60)).unwrap();
    let tail: Vec<f64> = log.epochs[40..].iter().map(|e| e.d_beta_bce.unwrap()).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((mean - LN_2).abs() < 0.05, "{mean}");
}

#[test]
fn prior_discriminator_settles_near_chance() {
    let ds = toy(96, 4, 48, 8);
    let (_, log) = train_vegan_i(&ds, &tiny_cfg(300)).unwrap();
    let tail: Vec<f64> = log.epochs[200..].iter().map(|e| e.d_delta_bce.unwrap()).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((mean - LN_2).abs() < 0.05, "{mean}");
}

#[test]
fn log_csv_and_mmd_tracking() {
    let ds = toy(40, 3, 20, 9);
    let cfg = TrainConfig {
        track_mmd: true,
        ..tiny_cfg(2)
    };
    let (_, log) = train_vegan_i(&ds, &cfg).unwrap();
    assert!(log.initial_mmd_treated_control.is_some());
    assert!(log.epochs.iter().all(|e| e.mmd_treated_control.is_some()));
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("epoch,reconstruction,d_delta_bce,d_beta_bce"));
    assert!(lines[1].starts_with("1,"));
    assert!(lines[1].contains(",,"), "absent D_beta column is empty: {}", lines[1]);
}

#[test]
fn checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy(40, 3, 20, 10);
    let cfg = TrainConfig {
        checkpoint_every: Some(2),
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..tiny_cfg(3)
    };
    let (model, _) = train_vegan_i(&ds, &cfg).unwrap();
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    assert_eq!(names, ["epoch_0002.json", "epoch_0003.json"]);
    let ck: ModelCheckpoint = serde_json::from_slice(&std::fs::read(dir.path().join("epoch_0003.json")).unwrap()).unwrap();
    let back = VeganModel::from_checkpoint(&ck).unwrap();
    assert_eq!(back.store, model.store);
}

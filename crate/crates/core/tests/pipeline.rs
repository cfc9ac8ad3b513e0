use vegan_core::corruption::{check_not_wiped, corrupt, CorruptionSpec, Targets};
use vegan_core::datagen::{gen_ihdp_like, split, GeneratorConfig, PreprocSpec, Preprocessor, IHDP_TARGETS};
use vegan_core::metrics::{eps_cate, pehe};
use vegan_core::networks::{ArchConfig, ModelKind, TrainedModel};
use vegan_core::trainer::{train_model, TrainConfig};

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 32,
        arch: ArchConfig {
            latent_dim: 4,
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            discriminator_hidden: vec![8],
            ..ArchConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn generate_corrupt_train_evaluate() {
    let raw = gen_ihdp_like(&GeneratorConfig::ihdp_like(5)).unwrap();
    let (train_raw, test_raw, _) = split(&raw, 0.75, 5).unwrap();
    let prep = Preprocessor::fit(&train_raw, PreprocSpec::default()).unwrap();
    let (train, test) = (prep.apply(&train_raw).unwrap(), prep.apply(&test_raw).unwrap());
    let spec = CorruptionSpec::new(Targets::named(IHDP_TARGETS), 0.333, 9);
    let runtime = corrupt(&test, &spec, &train.column_means()).unwrap();
    check_not_wiped(&runtime.x).unwrap();

    let tau = runtime.true_ite().unwrap();
    for kind in ModelKind::ALL {
        let (model, log) = train_model(kind, &train, Some(&runtime.x), &tiny_train()).unwrap();
        assert_eq!(log.epochs.len(), 5);
        let pred = model.predict_ite(&runtime.x).unwrap();
        let (p, e) = (pehe(&pred.tau, &tau).unwrap(), eps_cate(&pred.tau, &tau).unwrap());
        assert!(p.is_finite() && p >= e, "{kind}: sqrt PEHE {p} vs eps {e}");

        // Checkpoints restore to an identical predictor.
        let back = TrainedModel::from_checkpoint(&model.checkpoint(kind)).unwrap();
        assert_eq!(back.predict_ite(&runtime.x).unwrap().tau, pred.tau);
    }
}

#[test]
fn fully_dropped_covariates_are_detected() {
    let raw = gen_ihdp_like(&GeneratorConfig { n_samples: 100, ..GeneratorConfig::ihdp_like(1) }).unwrap();
    let ds = Preprocessor::fit(&raw, PreprocSpec::default()).unwrap().apply(&raw).unwrap();
    let wiped = corrupt(&ds, &CorruptionSpec::new(Targets::all(), 1.0, 0), &ds.column_means()).unwrap();
    assert!(check_not_wiped(&wiped.x).is_err());
}

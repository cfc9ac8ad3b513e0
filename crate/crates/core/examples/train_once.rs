//! Trains one model on the IHDP-like benchmark and prints timing and metrics.
//!
//!     cargo run --release -p vegan-core --example train_once -- vegan 0.333 0 [epochs]

use std::time::Instant;

use vegan_core::corruption::{corrupt, CorruptionSpec, Targets};
use vegan_core::datagen::{gen_ihdp_like, split, GeneratorConfig, PreprocSpec, Preprocessor, IHDP_TARGETS};
use vegan_core::metrics::{eps_cate, pehe};
use vegan_core::networks::ModelKind;
use vegan_core::trainer::{train_model, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: ModelKind = args.first().map(|s| s.parse().unwrap()).unwrap_or(ModelKind::Vegan);
    let cl: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.333);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(300);

    let raw = gen_ihdp_like(&GeneratorConfig::ihdp_like(seed)).unwrap();
    let (train_raw, test_raw, _) = split(&raw, 0.75, seed).unwrap();
    let prep = Preprocessor::fit(&train_raw, PreprocSpec::default()).unwrap();
    let (train, test) = (prep.apply(&train_raw).unwrap(), prep.apply(&test_raw).unwrap());
    let spec = CorruptionSpec::new(Targets::named(IHDP_TARGETS), cl, seed);
    let runtime = corrupt(&test, &spec, &train.column_means()).unwrap();

    let cfg = TrainConfig { epochs, seed, track_mmd: true, ..TrainConfig::default() };
    let start = Instant::now();
    let (model, log) = train_model(kind, &train, Some(&runtime.x), &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = log.last().unwrap();
    let p_in = model.predict_ite(&train.x).unwrap();
    let p_out = model.predict_ite(&runtime.x).unwrap();
    let (tau_in, tau_out) = (train.true_ite().unwrap(), runtime.true_ite().unwrap());
    println!(
        "{kind} cl={cl} seed={seed}: {secs:.1}s, recon {:.4}, d_delta {:?}, d_beta {:?}, mmd {:?} -> {:?}",
        last.reconstruction, last.d_delta_bce, last.d_beta_bce, log.initial_mmd_treated_control, last.mmd_treated_control
    );
    println!(
        "  in-sample sqrt_pehe {:.4} eps_cate {:.4} | out-of-sample sqrt_pehe {:.4} eps_cate {:.4}",
        pehe(&p_in.tau, &tau_in).unwrap(),
        eps_cate(&p_in.tau, &tau_in).unwrap(),
        pehe(&p_out.tau, &tau_out).unwrap(),
        eps_cate(&p_out.tau, &tau_out).unwrap()
    );
}

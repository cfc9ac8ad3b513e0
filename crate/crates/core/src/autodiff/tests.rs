use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn identity_matmul_is_a_noop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 3, 4);
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(3));
    let av = g.constant(a.clone());
    let out = g.matmul(i, av).unwrap();
    assert_eq!(g.value(out), &a);
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0).unwrap());
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s).item().unwrap(), 0.5);
}

#[test]
fn mean_of_squares() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::column(&[1.0, 2.0, 3.0]).unwrap());
    let sq = g.square(x).unwrap();
    let m = g.mean(sq).unwrap();
    assert!((g.value(m).item().unwrap() - 14.0 / 3.0).abs() < 1e-15);
}

#[test]
fn square_gradient_at_three() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0).unwrap(), true);
    let y = g.square(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.leaf(x).unwrap().item().unwrap(), 6.0);
}

#[test]
fn constant_root_has_zero_gradient() {
    let mut store = ParamStore::new();
    let p = store.insert("p", Tensor::column(&[1.0, 2.0]).unwrap());
    let mut g = Graph::new();
    let pv = g.param(&store, p);
    let c = g.constant(Tensor::scalar(5.0).unwrap());
    let zero = g.affine(pv, 0.0, 0.0).unwrap();
    let s = g.sum(zero).unwrap();
    let root = g.add(s, c).unwrap();
    let grads = g.backward(root).unwrap();
    assert_eq!(grads.param(p).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut g = Graph::new();
    let x = g.input(Tensor::column(&[1.0, 2.0]).unwrap(), true);
    assert!(matches!(g.backward(x), Err(AutodiffError::Contract(_))));
}

#[test]
fn shape_and_domain_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(AutodiffError::Shape(_))));
    let c = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, c), Err(AutodiffError::Shape(_))));
    assert!(matches!(g.log(a), Err(AutodiffError::Domain(_))));
    let big = g.constant(Tensor::scalar(1000.0).unwrap());
    assert!(matches!(g.exp(big), Err(AutodiffError::NonFinite(_))));
}

#[test]
fn tensors_reject_nan_and_bad_shapes() {
    assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(vec![2, 2], vec![1.0; 4]).is_ok());
}

#[test]
fn row_broadcast_gradient_sums_over_rows() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[3, 2]), true);
    let b = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap(), true);
    let y = g.add(x, b).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.leaf(b).unwrap().data(), &[3.0, 3.0]);
    assert_eq!(grads.leaf(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn sum_sigmoid_wx_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let w = store.insert("w", random_matrix(&mut rng, 4, 3));
    let x = random_matrix(&mut rng, 5, 4);
    let err = finite_difference_check(&store, w, 1e-5, None, |g, s| {
        let xv = g.constant(x.clone());
        let wv = g.param(s, w);
        let h = g.matmul(xv, wv)?;
        let a = g.sigmoid(h)?;
        g.sum(a)
    })
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn linear_function_is_exact_under_finite_differences() {
    let mut store = ParamStore::new();
    let p = store.insert("p", Tensor::column(&[0.5, -1.5, 2.0]).unwrap());
    let err = finite_difference_check(&store, p, 1e-3, None, |g, s| {
        let pv = g.param(s, p);
        let a = g.affine(pv, 0.25, 0.0)?;
        g.sum(a)
    })
    .unwrap();
    assert!(err < 1e-10, "relative error {err}");
}

#[test]
fn zero_step_is_rejected() {
    let mut store = ParamStore::new();
    let p = store.insert("p", Tensor::scalar(1.0).unwrap());
    let r = finite_difference_check(&store, p, 0.0, None, |g, s| Ok(g.param(s, p)));
    assert!(matches!(r, Err(AutodiffError::Contract(_))));
}

/// Every primitive, each wrapped into a scalar through a random projection,
/// at 100 random points.
#[test]
fn every_primitive_matches_finite_differences() {
    type Build = fn(&mut Graph, Var, Var) -> Result<Var, AutodiffError>;
    let ops: Vec<(&str, Build)> = vec![
        ("matmul", |g, a, b| {
            let bt = g.select_rows(b, &[0, 1, 2])?;
            g.matmul(a, bt)
        }),
        ("add", |g, a, b| g.add(a, b)),
        ("add_row", |g, a, b| {
            let r = g.select_rows(b, &[1])?;
            g.add(a, r)
        }),
        ("sub", |g, a, b| g.sub(a, b)),
        ("mul", |g, a, b| g.mul(a, b)),
        ("mul_scalar", |g, a, b| {
            let s = g.mean(b)?;
            g.mul(a, s)
        }),
        ("square", |g, a, _| g.square(a)),
        ("mean", |g, a, _| g.mean(a)),
        ("sum", |g, a, _| g.sum(a)),
        ("log", |g, a, _| {
            let p = g.square(a)?;
            let p = g.affine(p, 1.0, 0.5)?;
            g.log(p)
        }),
        ("exp", |g, a, _| g.exp(a)),
        ("sigmoid", |g, a, _| g.sigmoid(a)),
        ("softplus", |g, a, _| g.softplus(a)),
        ("elu", |g, a, _| g.elu(a)),
        ("relu", |g, a, _| g.relu(a)),
        ("concat", |g, a, b| g.concat(&[a, b, a])),
        ("clamp", |g, a, _| g.clamp(a, -0.5, 0.5)),
        ("select_rows", |g, a, _| g.select_rows(a, &[2, 0, 2])),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (name, build) in ops {
        for point in 0..100 {
            let mut store = ParamStore::new();
            let a = store.insert("a", random_matrix(&mut rng, 3, 3));
            let b = store.insert("b", random_matrix(&mut rng, 3, 3));
            // Keep kinks of relu/clamp away from the probe.
            if matches!(name, "relu" | "clamp" | "elu") {
                let nudged: Vec<f64> = store
                    .get(a)
                    .data()
                    .iter()
                    .map(|&v| if (v.abs() - 0.5).abs() < 1e-3 || v.abs() < 1e-3 { v + 0.01 } else { v })
                    .collect();
                store.set(a, Tensor::matrix(3, 3, nudged).unwrap()).unwrap();
            }
            let proj: Vec<f64> = (0..27).map(|_| rng.random_range(0.5..1.5)).collect();
            let scalarize = move |g: &mut Graph, s: &ParamStore| -> Result<Var, AutodiffError> {
                let (av, bv) = (g.param(s, a), g.param(s, b));
                let out = build(g, av, bv)?;
                let n = g.value(out).numel();
                let shape = g.value(out).shape().to_vec();
                let w = g.constant(Tensor::new(shape, proj[..n].to_vec())?);
                let weighted = g.mul(out, w)?;
                g.sum(weighted)
            };
            for p in [a, b] {
                let err = finite_difference_check(&store, p, 1e-5, None, &scalarize).unwrap();
                assert!(err < 1e-4, "{name} point {point}: relative error {err}");
            }
        }
    }
}

#[test]
fn mlp_init_is_deterministic_and_shaped() {
    let spec = MlpSpec::new(vec![25, 100, 100, 100], Activation::Elu, OutputActivation::Identity);
    let mut s1 = ParamStore::new();
    let mut s2 = ParamStore::new();
    build_mlp(&mut s1, "g", &spec, 7).unwrap();
    build_mlp(&mut s2, "g", &spec, 7).unwrap();
    assert_eq!(s1, s2);

    let mut s3 = ParamStore::new();
    let dec = build_mlp(
        &mut s3,
        "psi",
        &MlpSpec::new(vec![100, 200, 1], Activation::Elu, OutputActivation::Identity),
        1,
    )
    .unwrap();
    assert_eq!(s3.get(dec.layers[0].weight).shape(), &[100, 200]);
    assert_eq!(s3.get(dec.layers[0].bias).data(), &[0.0; 200]);
    let bound = (6.0f64 / 300.0).sqrt();
    assert!(s3.get(dec.layers[0].weight).data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn degenerate_mlp_specs_are_rejected() {
    let mut s = ParamStore::new();
    let one = MlpSpec::new(vec![25], Activation::Elu, OutputActivation::Identity);
    assert!(matches!(build_mlp(&mut s, "x", &one, 0), Err(AutodiffError::InvalidSpec(_))));
    let zero = MlpSpec::new(vec![25, 0, 1], Activation::Elu, OutputActivation::Identity);
    assert!(build_mlp(&mut s, "x", &zero, 0).is_err());
}

#[test]
fn mlp_rejects_wrong_input_width() {
    let mut s = ParamStore::new();
    let mlp = build_mlp(&mut s, "m", &MlpSpec::new(vec![3, 2], Activation::Relu, OutputActivation::Sigmoid), 0).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 5]));
    assert!(matches!(mlp.forward(&mut g, &s, x), Err(AutodiffError::Shape(_))));
}

fn one_param_step(cfg: OptimizerConfig, p0: f64, grad: f64) -> f64 {
    let mut store = ParamStore::new();
    let p = store.insert("p", Tensor::scalar(p0).unwrap());
    let mut opt = Optimizer::new(cfg, vec![p], &store).unwrap();
    // Build a graph whose gradient w.r.t. p is exactly `grad`.
    let mut g = Graph::new();
    let pv = g.param(&store, p);
    let root = g.affine(pv, grad, 0.0).unwrap();
    let grads = g.backward(root).unwrap();
    opt.step(&mut store, &grads).unwrap();
    store.get(p).item().unwrap()
}

#[test]
fn sgd_one_step() {
    let p = one_param_step(OptimizerConfig::sgd(0.1, 0.0), 1.0, 1.0);
    assert!((p - 0.9).abs() < 1e-15);
}

#[test]
fn sgd_weight_decay_shrinks() {
    let p = one_param_step(OptimizerConfig::sgd(1e-3, 1e-2), 2.0, 0.0);
    assert!((p - 2.0 * (1.0 - 1e-3 * 1e-2)).abs() < 1e-15);
}

#[test]
fn adam_first_step_has_learning_rate_magnitude() {
    let cfg = OptimizerConfig {
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    };
    for g in [1e-4, 1.0, 1e3] {
        let p = one_param_step(cfg, 0.0, g);
        // ε = 1e-8 in the denominator is the only scale dependence.
        assert!((p.abs() - 1e-3).abs() < 1e-3 * 1e-3, "grad {g} moved by {p}");
    }
}

#[test]
fn optimizer_requires_every_gradient() {
    let mut store = ParamStore::new();
    let p = store.insert("p", Tensor::scalar(1.0).unwrap());
    let q = store.insert("q", Tensor::scalar(1.0).unwrap());
    let mut opt = Optimizer::new(OptimizerConfig::default(), vec![p, q], &store).unwrap();
    let mut g = Graph::new();
    let pv = g.param(&store, p);
    let grads = g.backward(pv).unwrap();
    assert!(matches!(opt.step(&mut store, &grads), Err(AutodiffError::MissingGradient(_))));
    assert!(Optimizer::new(OptimizerConfig::sgd(0.0, 0.0), vec![p], &store).is_err());
}

#[test]
fn training_trajectories_are_bit_identical() {
    let run = || {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![4, 8, 1], Activation::Elu, OutputActivation::Identity);
        let mlp = build_mlp(&mut store, "m", &spec, 3).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default(), mlp.params(), &store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random_matrix(&mut rng, 6, 4);
            let y = random_matrix(&mut rng, 6, 1);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let yv = g.constant(y);
            let out = mlp.forward(&mut g, &store, xv).unwrap();
            let d = g.sub(out, yv).unwrap();
            let sq = g.square(d).unwrap();
            let loss = g.mean(sq).unwrap();
            let grads = g.backward(loss).unwrap();
            opt.step(&mut store, &grads).unwrap();
        }
        store
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_restores_parameters() {
    let mut store = ParamStore::new();
    build_mlp(&mut store, "m", &MlpSpec::new(vec![3, 4, 2], Activation::Elu, OutputActivation::Identity), 5).unwrap();
    let entries = to_entries(&store);
    let json = serde_json::to_string(&entries).unwrap();
    let back: Vec<CheckpointEntry> = serde_json::from_str(&json).unwrap();
    assert_eq!(from_entries(&back).unwrap(), store);

    let mut other = ParamStore::new();
    build_mlp(&mut other, "m", &MlpSpec::new(vec![3, 4, 2], Activation::Elu, OutputActivation::Identity), 6).unwrap();
    load_into(&mut other, &back).unwrap();
    assert_eq!(other, store);
}

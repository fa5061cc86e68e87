use ngsc_tensor::{backward, grad_check, Conv2dSpec, GradCheckConfig, ParamStore, Scope, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Fixed random projection so the objective is not a symmetric sum.
fn project(y: &Var<f64>, seed: u64) -> ngsc_tensor::Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Var::constant(random(y.shape(), &mut rng));
    y.mul(&w)?.sum()
}

fn check(build: impl Fn(&mut ParamStore<f64>, &mut ChaCha8Rng), f: impl Fn(&Scope<f64>) -> ngsc_tensor::Result<Var<f64>>) {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        build(&mut store, &mut rng);
        let cfg = GradCheckConfig { eps: 1e-4, coords_per_param: 12, seed };
        let report = grad_check(&mut store, &f, &cfg).unwrap();
        assert!(
            report.max_relative_error < 1e-4,
            "seed {seed}: {} ({})",
            report.max_relative_error,
            report.worst_param
        );
    }
}

#[test]
fn grad_check_quadratic_is_exact() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::from_f64([3], &[0.5, -1.5, 2.0]).unwrap()).unwrap();
    let report = grad_check(&mut store, |s| s.param(p).square()?.sum(), &GradCheckConfig::default()).unwrap();
    assert!(report.max_relative_error < 1e-7);
}

#[test]
fn grad_check_conv2d() {
    check(
        |s, rng| {
            s.add("x", random(&[2, 4, 6, 5], rng)).unwrap();
            s.add("w", random(&[6, 2, 3, 3], rng)).unwrap();
            s.add("b", random(&[6], rng)).unwrap();
        },
        |s| {
            let st = s.store();
            let y = s.param(st.id("x")?).conv2d(&s.param(st.id("w")?), Some(&s.param(st.id("b")?)), Conv2dSpec::new(2, 1, 2))?;
            project(&y, 1)
        },
    );
}

#[test]
fn grad_check_conv_gelu_mean() {
    check(
        |s, rng| {
            s.add("x", random(&[1, 4, 8, 8], rng)).unwrap();
            s.add("p", random(&[4, 4, 3, 3], rng)).unwrap();
        },
        |s| {
            let st = s.store();
            s.param(st.id("x")?)
                .conv2d(&s.param(st.id("p")?), None, Conv2dSpec::new(1, 1, 1))?
                .gelu_tanh()?
                .mean()
        },
    );
}

#[test]
fn grad_check_conv_transpose2d() {
    check(
        |s, rng| {
            s.add("x", random(&[2, 3, 3, 4], rng)).unwrap();
            s.add("w", random(&[3, 5, 4, 4], rng)).unwrap();
            s.add("b", random(&[5], rng)).unwrap();
        },
        |s| {
            let st = s.store();
            let y = s.param(st.id("x")?).conv_transpose2d(&s.param(st.id("w")?), Some(&s.param(st.id("b")?)), 2, 1)?;
            project(&y, 2)
        },
    );
}

#[test]
fn grad_check_avg_pool2d() {
    check(
        |s, rng| {
            s.add("x", random(&[2, 3, 4, 6], rng)).unwrap();
        },
        |s| project(&s.param(s.store().id("x")?).avg_pool2d(2)?, 3),
    );
}

#[test]
fn grad_check_gelu_tanh() {
    check(
        |s, rng| {
            s.add("x", random(&[5, 7], rng).map(|v| 3.0 * v)).unwrap();
        },
        |s| project(&s.param(s.store().id("x")?).gelu_tanh()?, 4),
    );
}

#[test]
fn grad_check_softmax() {
    check(
        |s, rng| {
            s.add("x", random(&[3, 5, 4], rng)).unwrap();
        },
        |s| {
            let x = s.param(s.store().id("x")?);
            let a = project(&x.softmax(1)?, 5)?;
            let b = project(&x.softmax(2)?, 6)?;
            a.add(&b)
        },
    );
}

#[test]
fn grad_check_layer_norm() {
    check(
        |s, rng| {
            s.add("x", random(&[6, 8], rng)).unwrap();
            s.add("g", random(&[8], rng)).unwrap();
            s.add("b", random(&[8], rng)).unwrap();
        },
        |s| {
            let st = s.store();
            let y = s.param(st.id("x")?).layer_norm(&s.param(st.id("g")?), &s.param(st.id("b")?))?;
            project(&y, 7)
        },
    );
}

#[test]
fn grad_check_linear_and_shape_ops() {
    check(
        |s, rng| {
            s.add("x", random(&[2, 3, 4], rng)).unwrap();
            s.add("w", random(&[4, 5], rng)).unwrap();
            s.add("b", random(&[5], rng)).unwrap();
        },
        |s| {
            let st = s.store();
            let x = s.param(st.id("x")?);
            let y = x.linear(&s.param(st.id("w")?), Some(&s.param(st.id("b")?)))?;
            let z = Var::concat(&[y.permute(&[1, 0, 2])?, x.permute(&[1, 0, 2])?], 2)?;
            let z = z.slice(2, 1, 7)?.softplus()?;
            project(&z, 8)
        },
    );
}

#[test]
fn backward_linearity_and_quadratic() {
    let mut store = ParamStore::<f32>::new();
    let w = store.add("w", Tensor::from_f64([3], &[0.3, -0.2, 0.9]).unwrap()).unwrap();
    let x = Tensor::from_f64([3], &[1.0, 2.0, -4.0]).unwrap();
    let loss = Scope::tracked(&store).param(w).mul(&Var::constant(x.clone())).unwrap().sum().unwrap();
    backward(&loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad.as_ref().unwrap(), &x);

    let mut store = ParamStore::<f32>::new();
    let w = store.add("w", Tensor::from_f64([2], &[1.0, 2.0]).unwrap()).unwrap();
    let loss = Scope::tracked(&store).param(w).square().unwrap().sum().unwrap();
    backward(&loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
    // A second backward without reset accumulates.
    backward(&loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[4.0, 8.0]);
}

#[test]
fn backward_rejects_non_scalar_and_constant_losses() {
    let mut store = ParamStore::<f32>::new();
    let w = store.add("w", Tensor::ones([2])).unwrap();
    let v = Scope::tracked(&store).param(w);
    assert!(backward(&v.square().unwrap(), &mut store).is_err());
    let c = Var::constant(Tensor::<f32>::scalar(1.0));
    assert!(backward(&c, &mut store).is_err());
}

#[test]
fn tape_visits_in_reverse_topological_order() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::ones([2])).unwrap();
    let s = Scope::tracked(&store);
    let a = s.param(w);
    let b = a.square().unwrap();
    let c = b.add(&a).unwrap();
    let d = c.mul(&b).unwrap().sum().unwrap();
    let tape = Tape::record(&d);
    let ids = tape.ids();
    assert_eq!(ids.len(), 5);
    assert!(ids.windows(2).all(|p| p[0] > p[1]));
    assert_eq!(tape.ops().first(), Some(&"sum"));
    assert_eq!(tape.ops().last(), Some(&"leaf"));
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::cell::Cell;
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::<f64>::ones([2])).unwrap();
    let calls = Cell::new(0.0);
    let res = grad_check(
        &mut store,
        |s| {
            calls.set(calls.get() + 1.0);
            s.param(p).sum()?.add_scalar(calls.get())
        },
        &GradCheckConfig::default(),
    );
    assert!(matches!(res, Err(ngsc_tensor::TensorError::Unreliable(..))));
}

fn arb_tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f32>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f32..2.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_in_input(
        x1 in arb_tensor(vec![1, 2, 5, 5]),
        x2 in arb_tensor(vec![1, 2, 5, 5]),
        w in arb_tensor(vec![3, 2, 3, 3]),
        a in -2.0f32..2.0,
        b in -2.0f32..2.0,
    ) {
        let spec = Conv2dSpec::new(1, 1, 1);
        let wv = Var::constant(w);
        let conv = |x: Tensor<f32>| Var::constant(x).conv2d(&wv, None, spec).unwrap().value().clone();
        let mix = x1.zip_map(&x2, |p, q| a * p + b * q);
        let lhs = conv(mix);
        let rhs = conv(x1).zip_map(&conv(x2), |p, q| a * p + b * q);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-4);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(x in arb_tensor(vec![4, 6]), c in -50.0f32..50.0) {
        let y = Var::constant(x.clone()).softmax(1).unwrap();
        for row in y.value().data().chunks(6) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
        let shifted = Var::constant(x.map(|v| v + c)).softmax(1).unwrap();
        prop_assert!(shifted.value().max_abs_diff(y.value()) < 1e-5);
    }

    #[test]
    fn avg_pool_commutes_with_scaling(x in arb_tensor(vec![1, 2, 4, 4]), c in -3.0f32..3.0) {
        let a = Var::constant(x.map(|v| c * v)).avg_pool2d(2).unwrap();
        let b = Var::constant(x).avg_pool2d(2).unwrap().value().map(|v| c * v);
        prop_assert!(a.value().max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn avg_pool_of_constant_is_constant(c in -5.0f32..5.0, k in 1usize..4) {
        let x = Var::constant(Tensor::full([1, 1, 4 * k, 4 * k], c));
        let y = x.avg_pool2d(k).unwrap();
        prop_assert!(y.value().data().iter().all(|&v| (v - c).abs() < 1e-6));
    }
}

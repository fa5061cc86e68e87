use ngsc_codec::gradcheck::grad_check;
use ngsc_codec::layers::Builder;
use ngsc_codec::nstb::{
    cosine_window_attention, window_merge, window_partition, NGramContext, Nstb, NstbConfig, TagMlp, UnigramEmbed,
    WindowAttention,
};
use ngsc_tensor::{GradCheckConfig, ParamStore, Scope, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Fixed random projection so objectives are not symmetric sums.
fn project(y: &Var<f64>, seed: u64) -> ngsc_codec::Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let w = Var::constant(random(y.shape(), &mut rng).cast());
    Ok(y.mul(&w)?.sum()?)
}

fn assert_grads<M>(
    build: impl Fn(&mut Builder) -> M,
    input_shape: &[usize],
    f: impl Fn(&M, &Scope<f64>, &Var<f64>) -> ngsc_codec::Result<Var<f64>>,
) {
    for seed in 0..3 {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = store.add("input", random(input_shape, &mut rng)).unwrap();
        let module = build(&mut Builder::new(&mut store, &mut rng));
        let mut store = store.cast::<f64>();
        let cfg = GradCheckConfig { eps: 1e-4, coords_per_param: 6, seed };
        let report = grad_check(&mut store, |s| f(&module, s, &s.param(x)), &cfg).unwrap();
        assert!(report.max_relative_error < 1e-4, "seed {seed}: {} at {}", report.max_relative_error, report.worst_param);
    }
}

fn small_cfg(ngram: bool, tag: bool) -> NstbConfig {
    NstbConfig { window: 8, heads: 2, ngram_order: 2, ngram_enabled: ngram, tag_mlp_enabled: tag, mlp_expansion: 2 }
}

fn block(dim: usize, cfg: &NstbConfig, seed: u64) -> (ParamStore<f32>, Nstb) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = Nstb::new(&mut Builder::new(&mut store, &mut rng), dim, cfg).unwrap();
    (store, b)
}

#[test]
fn grad_check_tag_mlp() {
    assert_grads(|b| TagMlp::new(b, 32, 2, true).unwrap(), &[16, 32], |m, s, x| project(&m.forward(s, x)?, 1));
}

#[test]
fn grad_check_attention_with_learned_tokens() {
    assert_grads(
        |b| {
            b.tensor("tokens", random(&[2, 4, 8], &mut ChaCha8Rng::seed_from_u64(11))).unwrap();
            WindowAttention::new(b, 8, 2, 4).unwrap()
        },
        &[2, 8, 8, 8],
        |a, s, x| {
            let grid = window_partition(x, 4, (2, 2))?;
            let t = s.param(s.store().id("tokens")?);
            project(&window_merge(&a.forward(s, &grid, Some(&t))?)?, 2)
        },
    );
}

#[test]
fn grad_check_unigram_embed() {
    assert_grads(|b| UnigramEmbed::new(b, 8).unwrap(), &[1, 8, 8, 8], |u, s, x| project(&u.forward(s, x)?, 3));
}

#[test]
fn grad_check_ngram_context() {
    assert_grads(|b| NGramContext::new(b, 8, 2).unwrap(), &[1, 4, 8, 8], |c, s, x| project(&c.forward(s, x, 4)?, 4));
}

#[test]
fn grad_check_full_nstb() {
    for block_index in [0, 1] {
        assert_grads(
            |b| Nstb::new(b, 16, &small_cfg(true, true)).unwrap(),
            &[1, 16, 16, 16],
            |n, s, x| n.forward(s, x, None, block_index)?.mean().map_err(Into::into),
        );
    }
}

#[test]
fn grad_check_nstb_with_tokens_projected() {
    assert_grads(
        |b| {
            b.tensor("lt", random(&[1, 4, 16], &mut ChaCha8Rng::seed_from_u64(5))).unwrap();
            Nstb::new(b, 16, &small_cfg(true, true)).unwrap()
        },
        &[1, 16, 16, 16],
        |n, s, x| {
            let lt = s.param(s.store().id("lt")?);
            project(&n.forward(s, x, Some(&lt), 0)?, 6)
        },
    );
}

#[test]
fn attention_rows_sum_to_one() {
    // With every value row equal to 1 the output is the row sum of the
    // attention matrix.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d, heads) = (16, 8, 2);
    let mut data = random(&[3, n, 3 * d], &mut rng).cast::<f64>().into_data();
    for tok in data.chunks_mut(3 * d) {
        tok[2 * d..].fill(1.0);
    }
    let qkv = Var::constant(Tensor::new(vec![3, n, 3 * d], data).unwrap());
    let mut lt = random(&[1, 4, 3 * d], &mut rng).cast::<f64>().into_data();
    for tok in lt.chunks_mut(3 * d) {
        tok[2 * d..].fill(1.0);
    }
    let lt = Var::constant(Tensor::new(vec![1, 4, 3 * d], lt).unwrap());
    let tau = Var::constant(Tensor::from_f64([heads], &[0.01, 0.3]).unwrap());
    let bias = Var::constant(random(&[heads, n, n], &mut rng).cast());
    let out = cosine_window_attention(&qkv, Some(&lt), &tau, &bias, heads, 3).unwrap();
    assert!(out.value().data().iter().all(|v| (v - 1.0).abs() < 1e-5));
}

#[test]
fn permuting_windows_changes_only_their_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Var::constant(random(&[1, 16, 16, 2], &mut rng));
    let grid = window_partition(&x, 8, (0, 0)).unwrap();
    let mut data = grid.windows.value().data().to_vec();
    let w = 64 * 2;
    let (a, b) = data.split_at_mut(w);
    a.swap_with_slice(&mut b[2 * w..3 * w]);
    let swapped = grid.with_windows(Var::constant(Tensor::new(vec![4, 64, 2], data).unwrap()));
    let merged = window_merge(&swapped).unwrap();
    for y in 0..16 {
        for xx in 0..16 {
            let win = (y / 8) * 2 + xx / 8;
            for c in 0..2 {
                let got = merged.value().at(&[0, y, xx, c]);
                let orig = x.value().at(&[0, y, xx, c]);
                if win == 0 || win == 3 {
                    let (sy, sx) = if win == 0 { (y + 8, xx + 8) } else { (y - 8, xx - 8) };
                    assert_eq!(got, x.value().at(&[0, sy, sx, c]));
                } else {
                    assert_eq!(got, orig);
                }
            }
        }
    }
}

#[test]
fn nstb_preserves_shape() {
    let (store, b) = block(32, &NstbConfig { heads: 4, ..NstbConfig::default() }, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Var::constant(random(&[1, 32, 32, 32], &mut rng));
    let y = b.forward(&Scope::frozen(&store), &x, None, 0).unwrap();
    assert_eq!(y.shape(), &[1, 32, 32, 32]);
}

#[test]
fn ablation_mode_differs_from_full_mode() {
    let (store, full) = block(16, &small_cfg(true, true), 3);
    let ablated = Nstb { context: None, ..full.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Var::constant(random(&[1, 16, 16, 16], &mut rng));
    let s = Scope::frozen(&store);
    let a = full.forward(&s, &x, None, 0).unwrap();
    let b = ablated.forward(&s, &x, None, 0).unwrap();
    assert!(a.value().max_abs_diff(b.value()) > 1e-4);
}

#[test]
fn cyclic_translation_by_a_window_commutes() {
    let (store, b) = block(16, &small_cfg(true, true), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[1, 16, 16, 16], &mut rng);
    let roll = |t: &Tensor<f32>| Tensor::from_fn([1, 16, 16, 16], |i| {
        let (y, xx, c) = (i / 256, (i / 16) % 16, i % 16);
        t.at(&[0, (y + 8) % 16, xx, c])
    });
    let s = Scope::frozen(&store);
    for block_index in [1, 0] {
        let y = b.forward(&s, &Var::constant(x.clone()), None, block_index).unwrap();
        let y_rolled = b.forward(&s, &Var::constant(roll(&x)), None, block_index).unwrap();
        assert!(y_rolled.value().max_abs_diff(&roll(y.value())) < 1e-4, "block {block_index}");
    }
}

/// Change in window B = rows 0..8, cols 8..16 after perturbing pixel (3, 7),
/// which lies in window A = rows 0..8, cols 0..8.
fn neighbour_window_change(ngram: bool) -> f64 {
    let (store, b) = block(16, &small_cfg(ngram, true), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[1, 16, 16, 16], &mut rng);
    let mut x2 = x.clone();
    let at = x2.offset(&[0, 3, 7, 0]);
    // Not constant across channels, or the layer norm would erase it.
    for c in 0..16 {
        x2.data_mut()[at + c] += 0.05 * c as f32;
    }
    let s = Scope::frozen(&store);
    let y1 = b.forward(&s, &Var::constant(x), None, 0).unwrap();
    let y2 = b.forward(&s, &Var::constant(x2), None, 0).unwrap();
    let mut worst = 0.0f64;
    for y in 0..8 {
        for xx in 8..16 {
            for c in 0..16 {
                let d = (y1.value().at(&[0, y, xx, c]) - y2.value().at(&[0, y, xx, c])) as f64;
                worst = worst.max(d.abs());
            }
        }
    }
    worst
}

#[test]
fn context_expands_the_receptive_field() {
    assert!(neighbour_window_change(true) > 1e-6);
    assert!(neighbour_window_change(false) < 1e-6);
}

#[test]
fn learned_tokens_change_the_output() {
    let (store, b) = block(16, &small_cfg(true, true), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Var::constant(random(&[1, 16, 16, 16], &mut rng));
    let s = Scope::frozen(&store);
    let t1 = Var::constant(random(&[1, 4, 16], &mut rng));
    let t2 = Var::constant(random(&[1, 4, 16], &mut rng));
    let a = b.forward(&s, &x, Some(&t1), 0).unwrap();
    let c = b.forward(&s, &x, Some(&t2), 0).unwrap();
    assert!(a.value().max_abs_diff(c.value()) > 1e-5);
}

#[test]
fn second_block_of_a_pair_is_shifted() {
    let (_, b) = block(16, &small_cfg(true, true), 0);
    assert_eq!(b.layout(16, 16, 0).unwrap(), (8, 0));
    assert_eq!(b.layout(16, 16, 1).unwrap(), (8, 4));
    assert_eq!(b.layout(16, 16, 2).unwrap(), (8, 0));
}

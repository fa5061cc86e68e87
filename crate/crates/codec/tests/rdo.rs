use ngsc_codec::net::TrainOutput;
use ngsc_codec::nstb::NstbConfig;
use ngsc_codec::rdo::{
    lambda_of_qindex, mse, rate_term, rd_loss, sample_roi_mask, weighted_distortion, AdamConfig, TrainConfig, Trainer,
    ROI_BACKGROUND,
};
use ngsc_codec::{CodecConfig, CodecError, CodecModel};
use ngsc_tensor::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(0.0..1.0))
}

#[test]
fn uniform_mask_gives_plain_mse_exactly() {
    let x = random(&[2, 3, 17, 9], 1);
    let y = random(&[2, 3, 17, 9], 2);
    let plain = mse(&x, &y).unwrap();
    for alpha in [0.0, 0.5, 0.9] {
        for level in [1.0, 0.2] {
            assert_eq!(weighted_distortion(&x, &y, &Tensor::full([2, 1, 17, 9], level), alpha).unwrap(), plain);
        }
    }
    assert_eq!(weighted_distortion(&x, &x, &Tensor::full([2, 1, 17, 9], 1.0), 0.5).unwrap(), 0.0);
}

#[test]
fn half_plane_weighting_matches_per_pixel_oracle() {
    // Raw weights 1 (left) and 0.5 (right) have mean 0.75, so they normalize
    // to 4/3 and 2/3.
    let (h, w) = (6, 8);
    let x = random(&[1, 3, h, w], 3);
    let y = random(&[1, 3, h, w], 4);
    let r = Tensor::from_fn([1, 1, h, w], |i| if i % w < w / 2 { 1.0 } else { 0.0 });
    let mut oracle = 0.0;
    for c in 0..3 {
        for yy in 0..h {
            for xx in 0..w {
                let d = x.at(&[0, c, yy, xx]) - y.at(&[0, c, yy, xx]);
                oracle += if xx < w / 2 { 4.0 / 3.0 } else { 2.0 / 3.0 } * d * d;
            }
        }
    }
    oracle /= (3 * h * w) as f64;
    assert!((weighted_distortion(&x, &y, &r, 0.5).unwrap() - oracle).abs() < 1e-12);

    // Error only on the left: 4/3 of the unweighted contribution.
    let y_left = Tensor::from_fn([1, 3, h, w], |i| if i % w < w / 2 { y.data()[i] } else { x.data()[i] });
    let d = weighted_distortion(&x, &y_left, &r, 0.5).unwrap();
    assert!((d - 4.0 / 3.0 * mse(&x, &y_left).unwrap()).abs() < 1e-6);
}

#[test]
fn rate_term_examples() {
    let half = Var::constant(Tensor::full([1, 10, 10, 10], 0.5f64));
    let one = Var::constant(Tensor::full([1, 4, 1, 1], 1.0));
    assert!((rate_term(&half, &one, 1000).unwrap().value().item() - 1.0).abs() < 1e-12);
    assert_eq!(rate_term(&one, &one, 1000).unwrap().value().item(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let py: Tensor<f64> = Tensor::from_fn([1, 8, 4, 4], |_| rng.gen_range(1e-6..1.0));
    let pz: Tensor<f64> = Tensor::from_fn([1, 4, 1, 1], |_| rng.gen_range(1e-6..1.0));
    let oracle = -(py.data().iter().chain(pz.data()).map(|p| p.ln()).sum::<f64>()) / std::f64::consts::LN_2 / 256.0;
    let got = rate_term(&Var::constant(py), &Var::constant(pz), 256).unwrap().value().item();
    assert!((got - oracle).abs() < 1e-5);
}

fn output(x_hat: Tensor<f64>, p: f64) -> TrainOutput<f64> {
    TrainOutput {
        x_hat: Var::constant(x_hat),
        y_likelihood: Var::constant(Tensor::full([1, 8, 2, 2], p)),
        z_likelihood: Var::constant(Tensor::full([1, 4, 1, 1], p)),
        pixels: 64,
    }
}

#[test]
fn rd_loss_examples() {
    let x = random(&[1, 3, 8, 8], 5);
    let r = Tensor::ones([1, 1, 8, 8]);
    let perfect = output(x.clone(), 1.0);
    assert_eq!(rd_loss(&Var::constant(x.clone()), &perfect, &r, 0.7, 0.5).unwrap().1.total, 0.0);

    let noisy = random(&[1, 3, 8, 8], 6);
    let out = output(noisy.clone(), 0.25);
    let xv = Var::constant(x.clone());
    let mut prev = -1.0;
    for i in 0..=10 {
        let total = rd_loss(&xv, &out, &r, i as f64 / 10.0, 0.5).unwrap().1.total;
        assert!(total >= prev);
        prev = total;
    }
    let (_, terms) = rd_loss(&xv, &out, &r, 1.0, 0.0).unwrap();
    let bpp = (32.0 * 2.0 + 4.0 * 2.0) / 64.0;
    let oracle = 0.0932 * 255.0 * 255.0 * mse(&x, &noisy).unwrap() + bpp;
    assert!((terms.total - oracle).abs() < 1e-5);
    assert_eq!(terms.lambda, lambda_of_qindex(1.0));
}

#[test]
fn roi_masks() {
    let a = sample_roi_mask(&mut ChaCha8Rng::seed_from_u64(3), 64, 48);
    let b = sample_roi_mask(&mut ChaCha8Rng::seed_from_u64(3), 64, 48);
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut coverage = 0.0;
    for _ in 0..1000 {
        let m = sample_roi_mask(&mut rng, 64, 64);
        assert!(m.data().iter().all(|&v| v == 1.0 || v == ROI_BACKGROUND));
        coverage += m.data().iter().filter(|&&v| v == 1.0).count() as f64 / 4096.0;
    }
    coverage /= 1000.0;
    assert!((0.05..=0.6).contains(&coverage), "{coverage}");
}

fn tiny_model() -> CodecModel {
    CodecModel::new(CodecConfig {
        channels: 8,
        latent_channels: 16,
        hyper_channels: 8,
        tokens: 2,
        token_hidden: 4,
        block: NstbConfig { heads: 2, ..NstbConfig::default() },
        seed: 1,
    })
    .unwrap()
}

fn patches(n: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (a, b): (f32, f32) = (rng.gen_range(0.0..1.0), rng.gen_range(0.05..0.3));
            Tensor::from_fn([3, 64, 64], |i| ((i % 64) as f32 * b + a).sin() * 0.4 + 0.5)
        })
        .collect()
}

fn config(epochs: [usize; 3], batch_size: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size, alpha: 0.5, seed: 11, optimizer: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, phase_lr: None }
}

#[test]
fn phases_follow_their_policies_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = patches(4, 1);
    let mut trainer = Trainer::new(tiny_model(), config([1, 2, 1], 2)).unwrap();
    let mut log = csv::Writer::from_path(dir.path().join("train.csv")).unwrap();
    let history = trainer.run(&data, None, Some(dir.path()), Some(&mut log)).unwrap();
    drop(log);
    assert_eq!(history.len(), 8);
    assert_eq!(history.iter().map(|r| r.phase).collect::<Vec<_>>(), [1, 1, 2, 2, 2, 2, 3, 3]);
    assert!(history[..2].iter().all(|r| r.q == 1.0 && r.lambda == 0.0932));
    assert!(history[2..].iter().all(|r| r.q != 1.0));
    assert!(history.iter().all(|r| r.total.is_finite() && r.total >= 0.0 && r.rate_bpp >= 0.0));
    for k in 1..=3 {
        assert!(dir.path().join(format!("phase{k}.ngwt")).exists());
        assert!(dir.path().join(format!("phase{k}.ngwt.opt")).exists());
    }
    let csv = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,phase,q,lambda,distortion,rate_bpp,total");
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn phase_two_samples_the_whole_q_range() {
    let data = patches(200, 2);
    let mut trainer = Trainer::new(tiny_model(), config([0, 1, 0], 1)).unwrap();
    let history = trainer.run::<Vec<u8>>(&data, None, None, None).unwrap();
    assert_eq!(history.len(), 200);
    assert!(history.iter().all(|r| r.phase == 2));
    let lo = history.iter().map(|r| r.q).fold(1.0, f64::min);
    let hi = history.iter().map(|r| r.q).fold(0.0, f64::max);
    assert!(lo < 0.1 && hi > 0.9, "{lo} {hi}");
}

#[test]
fn resume_reproduces_the_next_step_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = patches(4, 3);
    let cfg = config([1, 1, 1], 2);
    let mut straight = Trainer::new(tiny_model(), cfg.clone()).unwrap();
    straight.run::<Vec<u8>>(&data, Some(3), None, None).unwrap();
    let ckpt = dir.path().join("mid.ngwt");
    straight.save(&ckpt).unwrap();
    let next = straight.train_step(&data).unwrap();

    let mut resumed = Trainer::resume(&ckpt, cfg).unwrap();
    assert_eq!(resumed.step(), 3);
    let again = resumed.train_step(&data).unwrap();
    assert_eq!(next, again);
    assert_eq!(straight.model.hash(), resumed.model.hash());
}

#[test]
fn divergence_aborts_and_keeps_the_last_good_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = patches(2, 4);
    data[1].data_mut()[5] = f32::NAN;
    let mut trainer = Trainer::new(tiny_model(), config([1, 0, 0], 1)).unwrap();
    let before = trainer.model.hash();
    let err = trainer.run::<Vec<u8>>(&data, None, Some(dir.path()), None).unwrap_err();
    let CodecError::Diverged { step } = err else { panic!("{err}") };
    let saved = CodecModel::load(&dir.path().join("last_good.ngwt")).unwrap();
    assert_eq!(saved.hash(), trainer.model.hash());
    assert_eq!(trainer.step(), step);
    assert!(step <= 1);
    if step == 0 {
        assert_eq!(saved.hash(), before);
    }
}

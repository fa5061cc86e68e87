#![allow(dead_code)]

use std::path::Path;

use ngsc::data::save_png;
use ngsc_codec::nstb::NstbConfig;
use ngsc_codec::{CodecConfig, CodecModel};
use ngsc_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Flat colour with a gradient, a few discs, a faint sinusoid and noise.
pub fn synthetic_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let grad: [f32; 2] = [rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01)];
    let discs: Vec<(f32, f32, f32, [f32; 3])> = (0..rng.gen_range(2..6))
        .map(|_| {
            let centre = (rng.gen_range(0.0..h as f32), rng.gen_range(0.0..w as f32));
            (centre.0, centre.1, rng.gen_range(6.0..30.0), [rng.gen(), rng.gen(), rng.gen()])
        })
        .collect();
    let freq: f32 = rng.gen_range(0.05..0.3);
    let amp: f32 = rng.gen_range(0.0..0.1);
    let noise: f32 = rng.gen_range(0.0..0.02);
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f32, x as f32);
            let mut px = base.map(|b| b + grad[0] * fy + grad[1] * fx);
            for (cy, cx, r, col) in &discs {
                if (fy - cy).powi(2) + (fx - cx).powi(2) < r * r {
                    px = *col;
                }
            }
            let tex = amp * (freq * fx + 0.7 * freq * fy).sin();
            for (c, v) in px.iter().enumerate() {
                data[(c * h + y) * w + x] = (v + tex + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).unwrap()
}

/// Writes `count` synthetic PNGs named `img_NNNN.png`.
pub fn write_image_dir(dir: &Path, count: usize, h: usize, w: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        save_png(&synthetic_image(i as u64, h, w), &dir.join(format!("img_{i:04}.png"))).unwrap();
    }
}

pub fn small_codec() -> CodecConfig {
    CodecConfig {
        channels: 8,
        latent_channels: 16,
        hyper_channels: 8,
        tokens: 2,
        token_hidden: 4,
        block: NstbConfig { heads: 2, ..NstbConfig::default() },
        seed: 5,
    }
}

/// An untrained small model saved to `path`.
pub fn save_small_model(path: &Path) -> CodecModel {
    let model = CodecModel::new(small_codec()).unwrap();
    model.save(path).unwrap();
    model
}

//! Image files in and out, and the training/validation split.

use std::path::{Path, PathBuf};

use ngsc_codec::rdo::PatchSource;
use ngsc_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, CliError, Result};

const EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

/// Reads an 8-bit RGB image as `(3, H, W)` in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| CliError::Image { path: path.into(), source })?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn([3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[3 * p + c] as f32 / 255.0
    }))
}

/// Reads a grayscale mask as `(1, 1, H, W)`, mapping 0..255 to `[0, 1]`.
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| CliError::Image { path: path.into(), source })?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::new(vec![1, 1, h, w], img.as_raw().iter().map(|&v| v as f32 / 255.0).collect())?)
}

/// Writes `(3, H, W)` or `(1, 3, H, W)` as an 8-bit PNG.
pub fn save_png(x: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if s.len() < 3 || s[s.len() - 3] != 3 || x.data().len() != 3 * h * w {
        return Err(CliError::Argument(format!("cannot write a {s:?} tensor as RGB")));
    }
    let d = x.data();
    let raw: Vec<u8> = (0..h * w * 3).map(|i| (d[(i % 3) * h * w + i / 3].clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer size")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| CliError::Image { path: path.into(), source })
}

/// Supported image files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Top-left corner of a random `crop × crop` window inside `h × w`.
pub fn random_crop(rng: &mut impl Rng, h: usize, w: usize, crop: usize) -> (usize, usize) {
    (rng.gen_range(0..=h - crop), rng.gen_range(0..=w - crop))
}

fn cut(img: &Tensor<f32>, oy: usize, ox: usize, crop: usize) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    Tensor::from_fn([3, crop, crop], |i| {
        let (c, y, x) = (i / (crop * crop), (i / crop) % crop, i % crop);
        d[(c * h + oy + y) * w + ox + x]
    })
}

/// Whole training images; every call draws a fresh random crop.
pub struct ImageSet {
    pub images: Vec<Tensor<f32>>,
    pub crop: usize,
}

impl PatchSource for ImageSet {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn patch(&self, index: usize, rng: &mut ChaCha8Rng) -> ngsc_codec::Result<Tensor<f32>> {
        let img = &self.images[index];
        let (oy, ox) = random_crop(rng, img.shape()[1], img.shape()[2], self.crop);
        Ok(cut(img, oy, ox, self.crop))
    }
}

pub struct Dataset {
    pub train: ImageSet,
    pub train_files: Vec<PathBuf>,
    /// Centre crops of the held-out images, `(1, 3, crop, crop)`.
    pub val: Vec<Tensor<f32>>,
    pub val_files: Vec<PathBuf>,
    pub skipped: usize,
}

/// Loads every image of `dir` at least `min_dim` on both sides and splits
/// them by a seeded shuffle; `val_count` images are held out, leaving at
/// least one for training.
pub fn ingest_dataset(dir: &Path, crop: usize, min_dim: usize, val_count: usize, seed: u64) -> Result<Dataset> {
    let min_dim = min_dim.max(crop);
    let mut kept = Vec::new();
    let mut skipped = 0;
    for path in list_images(dir)? {
        match load_image(&path) {
            Ok(img) if img.shape()[1] >= min_dim && img.shape()[2] >= min_dim => kept.push((path, img)),
            Ok(img) => {
                log::debug!("{}: {}x{} below {min_dim}", path.display(), img.shape()[2], img.shape()[1]);
                skipped += 1;
            }
            Err(e) => {
                log::warn!("skipping {e}");
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} images in {}", dir.display());
    }
    if kept.is_empty() {
        return Err(CliError::NoUsableImages { dir: dir.into(), skipped });
    }
    kept.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = val_count.min(kept.len() - 1);
    let train_part = kept.split_off(n_val);
    let (val_files, val) = kept
        .into_iter()
        .map(|(p, img)| {
            let (h, w) = (img.shape()[1], img.shape()[2]);
            let patch = cut(&img, (h - crop) / 2, (w - crop) / 2, crop).reshape(vec![1, 3, crop, crop]).expect("size");
            (p, patch)
        })
        .unzip();
    let (train_files, images) = train_part.into_iter().unzip();
    Ok(Dataset { train: ImageSet { images, crop }, train_files, val, val_files, skipped })
}

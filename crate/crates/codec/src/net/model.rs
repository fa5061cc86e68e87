use std::fs;
use std::path::{Path, PathBuf};

use ngsc_tensor::checkpoint::{checkpoint_bytes, read_checkpoint};
use ngsc_tensor::{Elem, ParamId, ParamStore, Scope, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{CodecConfig, HYPER_STRIDE, LATENT_STRIDE};
use super::pad::{crop, pad_to_multiple};
use super::quantize::add_uniform_noise;
use super::transforms::{downscale_map, mean_level, Analysis, HyperAnalysis, HyperSynthesis, Synthesis, TokenGenerator};
use crate::entropy::{gaussian_likelihood, logistic_likelihood};
use crate::error::{extent, CodecError, Result};
use crate::layers::Builder;

/// Parameter layout of the full codec. Values live in a separate store.
#[derive(Clone, Debug)]
pub struct Network {
    pub g_a: Analysis,
    pub h_a: HyperAnalysis,
    pub h_s: HyperSynthesis,
    pub g_s: Synthesis,
    pub lt_a: TokenGenerator,
    pub lt_s: TokenGenerator,
    /// Per-channel logistic prior of `ẑ`.
    pub prior_loc: ParamId,
    pub prior_log_scale: ParamId,
}

/// Everything derived from the QIndex map.
pub struct Condition<T> {
    /// Encoder-side tokens: three for `g_a`, two for `h_a`.
    pub lt_a: Vec<Var<T>>,
    /// Decoder-side tokens: two for `h_s`, three for `g_s`.
    pub lt_s: Vec<Var<T>>,
    /// `m` average-pooled to the latent grid.
    pub m_hat: Var<T>,
}

/// Training-mode forward pass results.
pub struct TrainOutput<T> {
    /// Reconstruction cropped to the input size.
    pub x_hat: Var<T>,
    pub y_likelihood: Var<T>,
    pub z_likelihood: Var<T>,
    /// Pixels of the unpadded input, summed over the batch.
    pub pixels: usize,
}

impl Network {
    pub fn new(cfg: &CodecConfig, store: &mut ParamStore<f32>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut b = Builder::new(store, &mut rng);
        let net = Self {
            g_a: Analysis::new(&mut b.sub("g_a"), cfg)?,
            h_a: HyperAnalysis::new(&mut b.sub("h_a"), cfg)?,
            h_s: HyperSynthesis::new(&mut b.sub("h_s"), cfg)?,
            g_s: Synthesis::new(&mut b.sub("g_s"), cfg)?,
            lt_a: TokenGenerator::new(&mut b.sub("lt_a"), cfg.token_hidden, cfg.tokens, &cfg.encoder_stage_widths())?,
            lt_s: TokenGenerator::new(&mut b.sub("lt_s"), cfg.token_hidden, cfg.tokens, &cfg.decoder_stage_widths())?,
            prior_loc: b.full("prior.loc", &[cfg.hyper_channels], 0.0)?,
            prior_log_scale: b.full("prior.log_scale", &[cfg.hyper_channels], 0.0)?,
        };
        Ok(net)
    }

    /// `m` is `(B, 1, H, W)` at the padded size.
    pub fn condition<T: Elem>(&self, s: &Scope<T>, m: &Tensor<T>) -> Result<Condition<T>> {
        let level = Var::constant(mean_level(m)?);
        Ok(Condition {
            lt_a: self.lt_a.forward(s, &level)?,
            lt_s: self.lt_s.forward(s, &level)?,
            m_hat: Var::constant(downscale_map(m, LATENT_STRIDE)?),
        })
    }

    pub fn analysis<T: Elem>(&self, s: &Scope<T>, x: &Var<T>, m: &Tensor<T>, r: &Tensor<T>, cond: &Condition<T>) -> Result<Var<T>> {
        self.g_a.forward(s, x, &Var::constant(m.clone()), &Var::constant(r.clone()), &cond.lt_a[..3])
    }

    pub fn hyper_analysis<T: Elem>(&self, s: &Scope<T>, y: &Var<T>, cond: &Condition<T>) -> Result<Var<T>> {
        self.h_a.forward(s, y, &cond.lt_a[3..])
    }

    pub fn hyper_synthesis<T: Elem>(&self, s: &Scope<T>, z_hat: &Var<T>, cond: &Condition<T>) -> Result<(Var<T>, Var<T>)> {
        self.h_s.forward(s, z_hat, &cond.lt_s[..2])
    }

    pub fn synthesis<T: Elem>(&self, s: &Scope<T>, y_hat: &Var<T>, cond: &Condition<T>) -> Result<Var<T>> {
        self.g_s.forward(s, y_hat, &cond.m_hat, &cond.lt_s[2..])
    }

    pub fn z_likelihood<T: Elem>(&self, s: &Scope<T>, z_hat: &Var<T>) -> Result<Var<T>> {
        logistic_likelihood(z_hat, &s.param(self.prior_loc), &s.param(self.prior_log_scale))
    }

    /// Noisy-quantization pass used for training. `x` is `(B, 3, H, W)` with
    /// `m`, `r` `(B, 1, H, W)`; inputs are reflect-padded to a multiple of 64
    /// internally and the reconstruction is cropped back.
    pub fn forward_train<T: Elem>(
        &self,
        s: &Scope<T>,
        x: &Var<T>,
        m: &Tensor<T>,
        r: &Tensor<T>,
        rng: &mut impl Rng,
    ) -> Result<TrainOutput<T>> {
        let (xp, size) = pad_to_multiple(x, HYPER_STRIDE)?;
        let mp = pad_to_multiple(&Var::constant(m.clone()), HYPER_STRIDE)?.0.value().clone();
        let rp = pad_to_multiple(&Var::constant(r.clone()), HYPER_STRIDE)?.0.value().clone();
        if mp.shape()[2..] != xp.shape()[2..] || rp.shape() != mp.shape() {
            return Err(extent("forward_train", format!("x {:?}, m {:?}, r {:?}", x.shape(), m.shape(), r.shape())));
        }
        let cond = self.condition(s, &mp)?;
        let y = self.analysis(s, &xp, &mp, &rp, &cond)?;
        let z = self.hyper_analysis(s, &y, &cond)?;
        let z_tilde = add_uniform_noise(&z, rng)?;
        let (mu, sigma) = self.hyper_synthesis(s, &z_tilde, &cond)?;
        let y_tilde = add_uniform_noise(&y, rng)?;
        let x_hat = crop(&self.synthesis(s, &y_tilde, &cond)?, size)?;
        Ok(TrainOutput {
            x_hat,
            y_likelihood: gaussian_likelihood(&y_tilde, &mu, &sigma)?,
            z_likelihood: self.z_likelihood(s, &z_tilde)?,
            pixels: x.shape()[0] * size.0 * size.1,
        })
    }
}

/// A network together with its parameter values and configuration.
pub struct CodecModel {
    pub config: CodecConfig,
    pub store: ParamStore<f32>,
    pub net: Network,
}

/// Sidecar path holding the model configuration of a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".toml");
    PathBuf::from(p)
}

impl CodecModel {
    pub fn new(config: CodecConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::new(&config, &mut store)?;
        Ok(Self { config, store, net })
    }

    /// First 8 bytes (little-endian) of SHA-256 over the config and weights.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.config.to_toml().as_bytes());
        h.update(checkpoint_bytes(&self.store));
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, checkpoint_bytes(&self.store))?;
        fs::write(config_path(path), self.config.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(config_path(path))
            .map_err(|e| CodecError::Config(format!("{}: {e}", config_path(path).display())))?;
        let config = CodecConfig::from_toml(&text)?;
        let saved = read_checkpoint(fs::File::open(path)?)?;
        let mut model = Self::new(config)?;
        model.store.load_from(&saved)?;
        Ok(model)
    }

    pub fn parameter_count(&self) -> usize {
        self.store.numel()
    }
}

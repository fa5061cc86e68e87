use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};
use crate::nstb::NstbConfig;

/// Shape of the whole network. Serialized as the `[model]` table of a run
/// config and as the sidecar of every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Base width `C` of the image-side transforms.
    pub channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    /// Learned tokens per stage.
    pub tokens: usize,
    /// Hidden width of the token generators.
    pub token_hidden: usize,
    pub block: NstbConfig,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            latent_channels: 192,
            hyper_channels: 64,
            tokens: 4,
            token_hidden: 32,
            block: NstbConfig::default(),
            seed: 0,
        }
    }
}

/// Analysis downsamples by 16, the hyper path by a further 4.
pub const LATENT_STRIDE: usize = 16;
pub const HYPER_STRIDE: usize = 64;

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        let heads = self.block.heads;
        for (name, width) in [
            ("channels", self.channels),
            ("latent_channels", self.latent_channels),
            ("hyper_channels", self.hyper_channels),
        ] {
            if width == 0 || width % 2 != 0 || width % heads != 0 {
                return Err(CodecError::Config(format!("{name} = {width} must be even and divisible by {heads} heads")));
            }
        }
        if self.tokens == 0 || self.token_hidden == 0 {
            return Err(CodecError::Config("tokens and token_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CodecError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Channel widths of the encoder-side stages (g_a, then h_a).
    pub fn encoder_stage_widths(&self) -> Vec<usize> {
        let c = self.channels;
        vec![c, c, c, self.latent_channels, self.hyper_channels]
    }

    /// Channel widths of the decoder-side stages (h_s, then g_s).
    pub fn decoder_stage_widths(&self) -> Vec<usize> {
        let (c, h) = (self.channels, self.hyper_channels);
        vec![h, h, c, c, c]
    }
}

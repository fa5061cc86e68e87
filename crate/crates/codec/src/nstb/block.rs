use ngsc_tensor::{Elem, Scope, Var};
use serde::{Deserialize, Serialize};

use super::attention::WindowAttention;
use super::mlp::TagMlp;
use super::ngram::{broadcast_context, NGramContext, UnigramEmbed};
use super::window::{effective_window, window_merge, window_partition};
use crate::error::{extent, CodecError, Result};
use crate::layers::{to_planes, to_tokens, Builder, LayerNorm};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NstbConfig {
    /// Largest window size `M`; smaller maps use the largest even divisor.
    pub window: usize,
    pub heads: usize,
    /// Context order `N`.
    pub ngram_order: usize,
    pub ngram_enabled: bool,
    pub tag_mlp_enabled: bool,
    pub mlp_expansion: usize,
}

impl Default for NstbConfig {
    fn default() -> Self {
        Self { window: 8, heads: 4, ngram_order: 2, ngram_enabled: true, tag_mlp_enabled: true, mlp_expansion: 2 }
    }
}

impl NstbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.window % 2 != 0 {
            return Err(CodecError::Config(format!("window size must be even and ≥ 2, got {}", self.window)));
        }
        if self.heads == 0 || self.ngram_order == 0 || self.mlp_expansion == 0 {
            return Err(CodecError::Config("heads, ngram_order and mlp_expansion must be positive".into()));
        }
        Ok(())
    }
}

/// One N-gram Swin Transformer Block at a fixed channel width.
#[derive(Clone, Debug)]
pub struct Nstb {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub context: Option<(UnigramEmbed, NGramContext)>,
    pub norm2: LayerNorm,
    pub mlp: TagMlp,
    pub window: usize,
    pub dim: usize,
}

impl Nstb {
    pub fn new(b: &mut Builder, dim: usize, cfg: &NstbConfig) -> Result<Self> {
        cfg.validate()?;
        let context = if cfg.ngram_enabled {
            Some((UnigramEmbed::new(&mut b.sub("unigram"), dim)?, NGramContext::new(&mut b.sub("ngram"), dim, cfg.ngram_order)?))
        } else {
            None
        };
        Ok(Self {
            norm1: LayerNorm::new(&mut b.sub("norm1"), dim)?,
            attn: WindowAttention::new(&mut b.sub("attn"), dim, cfg.heads, cfg.window)?,
            context,
            norm2: LayerNorm::new(&mut b.sub("norm2"), dim)?,
            mlp: TagMlp::new(&mut b.sub("mlp"), dim, cfg.mlp_expansion, cfg.tag_mlp_enabled)?,
            window: cfg.window,
            dim,
        })
    }

    /// Window size and cyclic shift used on an `h×w` map by block `block_index`.
    /// Blocks 1, 3, … (zero-based) are shifted by half a window; block 0 is not.
    pub fn layout(&self, h: usize, w: usize, block_index: usize) -> Result<(usize, usize)> {
        let m = effective_window(h, w, self.window)
            .ok_or_else(|| extent("nstb", format!("{h}x{w} has no even window ≤ {}", self.window)))?;
        Ok((m, if block_index % 2 == 1 { m / 2 } else { 0 }))
    }

    /// Per-window context `(B, H/M, W/M, D)` from pre-normalized tokens.
    pub fn context<T: Elem>(&self, s: &Scope<T>, normed: &Var<T>, m: usize) -> Result<Option<Var<T>>> {
        let Some((uni, ngram)) = &self.context else { return Ok(None) };
        let u = uni.forward(s, &to_planes(normed)?)?;
        let z = ngram.forward(s, &u, m / 2)?;
        Ok(Some(to_tokens(&z)?))
    }

    /// `x` is `(B, H, W, D)`; `tokens` is `(B, L, D)`.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>, tokens: Option<&Var<T>>, block_index: usize) -> Result<Var<T>> {
        let &[_, h, w, d] = x.shape() else {
            return Err(extent("nstb", format!("expected (B, H, W, D), got {:?}", x.shape())));
        };
        if d != self.dim {
            return Err(extent("nstb", format!("{d} channels into a block of width {}", self.dim)));
        }
        let (m, shift) = self.layout(h, w, block_index)?;
        let mut normed = self.norm1.forward(s, x)?;
        // The context is added on the unshifted map so each vector lands on
        // the window it summarizes, then travels with its pixels.
        if let Some(ctx) = self.context(s, &normed, m)? {
            normed = normed.add(&broadcast_context(&ctx, m)?)?;
        }
        let grid = window_partition(&normed, m, (shift, shift))?;
        let attended = window_merge(&self.attn.forward(s, &grid, tokens)?)?;
        let x = x.add(&attended)?;
        let y = self.mlp.forward(s, &self.norm2.forward(s, &x)?)?;
        Ok(x.add(&y)?)
    }
}

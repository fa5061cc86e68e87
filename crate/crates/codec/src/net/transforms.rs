//! Analysis, synthesis and hyper transforms, and the QIndex token paths.

use ngsc_tensor::{Conv2dSpec, Elem, Scope, Tensor, Var};

use super::config::CodecConfig;
use crate::error::{extent, Result};
use crate::layers::{to_planes, to_tokens, Builder, Conv, ConvUp, Linear};
use crate::nstb::Nstb;

/// Runs `block` on planes `(B, C, H, W)`.
fn nstb_planes<T: Elem>(s: &Scope<T>, block: &Nstb, x: &Var<T>, tokens: &Var<T>, index: usize) -> Result<Var<T>> {
    to_planes(&block.forward(s, &to_tokens(x)?, Some(tokens), index)?)
}

fn check_tokens<T>(op: &'static str, tokens: &[Var<T>], want: usize) -> Result<()> {
    if tokens.len() != want {
        return Err(extent(op, format!("{} token sets for {want} stages", tokens.len())));
    }
    Ok(())
}

/// Maps the mean QIndex of each image to `L` tokens per stage.
#[derive(Clone, Debug)]
pub struct TokenGenerator {
    pub embed: Linear,
    pub heads: Vec<Linear>,
    pub tokens: usize,
    pub widths: Vec<usize>,
}

impl TokenGenerator {
    pub fn new(b: &mut Builder, hidden: usize, tokens: usize, widths: &[usize]) -> Result<Self> {
        let embed = Linear::new(&mut b.sub("embed"), 1, hidden, true)?;
        let heads = widths
            .iter()
            .enumerate()
            .map(|(i, &d)| Linear::new(&mut b.sub(&format!("stage{i}")), hidden, tokens * d, true))
            .collect::<Result<_>>()?;
        Ok(Self { embed, heads, tokens, widths: widths.to_vec() })
    }

    /// `level` is `(B, 1)` in `[0, 1]`; returns one `(B, L, D_i)` per stage.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, level: &Var<T>) -> Result<Vec<Var<T>>> {
        let b = level.shape()[0];
        let h = self.embed.forward(s, &level.scale(2.0)?.add_scalar(-1.0)?)?.gelu_tanh()?;
        self.heads
            .iter()
            .zip(&self.widths)
            .map(|(head, &d)| Ok(head.forward(s, &h)?.reshape([b, self.tokens, d])?))
            .collect()
    }
}

/// Encoder side: stem convolution over `(x, m, r)`, then three ATMs.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub stem: Conv,
    pub blocks: Vec<Nstb>,
    pub downs: Vec<Conv>,
}

impl Analysis {
    pub fn new(b: &mut Builder, cfg: &CodecConfig) -> Result<Self> {
        let c = cfg.channels;
        let stem = Conv::new(&mut b.sub("stem"), 5, c, 3, Conv2dSpec::new(2, 1, 1), true)?;
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        for i in 0..3 {
            blocks.push(Nstb::new(&mut b.sub(&format!("atm{i}.nstb")), c, &cfg.block)?);
            let out = if i == 2 { cfg.latent_channels } else { c };
            downs.push(Conv::down(&mut b.sub(&format!("atm{i}.conv")), c, out)?);
        }
        Ok(Self { stem, blocks, downs })
    }

    /// `x (B, 3, H, W)`, `m` and `r` `(B, 1, H, W)` → `y (B, latent, H/16, W/16)`.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, x: &Var<T>, m: &Var<T>, r: &Var<T>, lt: &[Var<T>]) -> Result<Var<T>> {
        check_tokens("analysis", lt, self.blocks.len())?;
        let (xs, ms, rs) = (x.shape(), m.shape(), r.shape());
        if xs.len() != 4 || xs[1] != 3 || ms != [xs[0], 1, xs[2], xs[3]] || rs != ms {
            return Err(extent("analysis", format!("x {xs:?}, m {ms:?}, r {rs:?}")));
        }
        let mut h = self.stem.forward(s, &Var::concat(&[x.clone(), m.clone(), r.clone()], 1)?)?;
        for (i, (block, down)) in self.blocks.iter().zip(&self.downs).enumerate() {
            h = down.forward(s, &nstb_planes(s, block, &h, &lt[i], i)?)?;
        }
        Ok(h)
    }
}

/// `y` to `z`: two ATMs.
#[derive(Clone, Debug)]
pub struct HyperAnalysis {
    pub blocks: Vec<Nstb>,
    pub downs: Vec<Conv>,
}

impl HyperAnalysis {
    pub fn new(b: &mut Builder, cfg: &CodecConfig) -> Result<Self> {
        let (l, h) = (cfg.latent_channels, cfg.hyper_channels);
        Ok(Self {
            blocks: vec![
                Nstb::new(&mut b.sub("atm0.nstb"), l, &cfg.block)?,
                Nstb::new(&mut b.sub("atm1.nstb"), h, &cfg.block)?,
            ],
            downs: vec![Conv::down(&mut b.sub("atm0.conv"), l, h)?, Conv::down(&mut b.sub("atm1.conv"), h, h)?],
        })
    }

    pub fn forward<T: Elem>(&self, s: &Scope<T>, y: &Var<T>, lt: &[Var<T>]) -> Result<Var<T>> {
        check_tokens("hyper_analysis", lt, self.blocks.len())?;
        let mut h = y.clone();
        for (i, (block, down)) in self.blocks.iter().zip(&self.downs).enumerate() {
            h = down.forward(s, &nstb_planes(s, block, &h, &lt[i], i)?)?;
        }
        Ok(h)
    }
}

/// `ẑ` to `(μ, σ)`: two upsampling stages, each followed by an NSTB, and a
/// convolutional head.
#[derive(Clone, Debug)]
pub struct HyperSynthesis {
    pub ups: Vec<ConvUp>,
    pub blocks: Vec<Nstb>,
    pub head: Conv,
    pub latent: usize,
}

impl HyperSynthesis {
    pub fn new(b: &mut Builder, cfg: &CodecConfig) -> Result<Self> {
        let h = cfg.hyper_channels;
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..2 {
            ups.push(ConvUp::new(&mut b.sub(&format!("stage{i}.up")), h, h)?);
            blocks.push(Nstb::new(&mut b.sub(&format!("stage{i}.nstb")), h, &cfg.block)?);
        }
        let head = Conv::new(&mut b.sub("head"), h, 2 * cfg.latent_channels, 3, Conv2dSpec::new(1, 1, 1), true)?;
        Ok(Self { ups, blocks, head, latent: cfg.latent_channels })
    }

    /// Returns `(μ, σ)` with `σ = softplus(raw) + 0.04`.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, z_hat: &Var<T>, lt: &[Var<T>]) -> Result<(Var<T>, Var<T>)> {
        check_tokens("hyper_synthesis", lt, self.blocks.len())?;
        let mut h = z_hat.clone();
        for (i, (up, block)) in self.ups.iter().zip(&self.blocks).enumerate() {
            h = nstb_planes(s, block, &up.forward(s, &h)?, &lt[i], i)?;
        }
        let params = self.head.forward(s, &h)?;
        let mu = params.slice(1, 0, self.latent)?;
        let sigma = params
            .slice(1, self.latent, self.latent)?
            .softplus()?
            .add_scalar(crate::entropy::SIGMA_FLOOR)?;
        Ok((mu, sigma))
    }
}

/// Decoder side: `(ŷ, m̂)` through three upsampling ATMs and a final
/// upsampling to RGB.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub ups: Vec<ConvUp>,
    pub blocks: Vec<Nstb>,
    pub out: ConvUp,
}

impl Synthesis {
    pub fn new(b: &mut Builder, cfg: &CodecConfig) -> Result<Self> {
        let c = cfg.channels;
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..3 {
            let c_in = if i == 0 { cfg.latent_channels + 1 } else { c };
            ups.push(ConvUp::new(&mut b.sub(&format!("atm{i}.up")), c_in, c)?);
            blocks.push(Nstb::new(&mut b.sub(&format!("atm{i}.nstb")), c, &cfg.block)?);
        }
        Ok(Self { ups, blocks, out: ConvUp::head(&mut b.sub("out"), c, 3)? })
    }

    /// Returns `x̂` clamped to `[0, 1]` at the padded size.
    pub fn forward<T: Elem>(&self, s: &Scope<T>, y_hat: &Var<T>, m_hat: &Var<T>, lt: &[Var<T>]) -> Result<Var<T>> {
        check_tokens("synthesis", lt, self.blocks.len())?;
        let (ys, ms) = (y_hat.shape(), m_hat.shape());
        if ys.len() != 4 || ms != [ys[0], 1, ys[2], ys[3]] {
            return Err(extent("synthesis", format!("y_hat {ys:?} with m_hat {ms:?}")));
        }
        let mut h = Var::concat(&[y_hat.clone(), m_hat.clone()], 1)?;
        for (i, (up, block)) in self.ups.iter().zip(&self.blocks).enumerate() {
            h = nstb_planes(s, block, &up.forward(s, &h)?, &lt[i], i)?;
        }
        // Centre the untrained output in the pixel range.
        Ok(self.out.forward(s, &h)?.add_scalar(0.5)?.clamp(0.0, 1.0)?)
    }
}

/// Per-image mean of `m` as a `(B, 1)` tensor, accumulated in `f64` so a
/// constant map yields its value exactly.
pub fn mean_level<T: Elem>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let &[b, 1, h, w] = m.shape() else {
        return Err(extent("qindex", format!("expected (B, 1, H, W), got {:?}", m.shape())));
    };
    let plane = h * w;
    let means: Vec<T> = m
        .data()
        .chunks(plane)
        .map(|p| T::of(p.iter().map(|v| v.to_f64_lossless()).sum::<f64>() / plane as f64))
        .collect();
    Ok(Tensor::new(vec![b, 1], means)?)
}

/// `k×k` block means of `(B, 1, H, W)`, accumulated in `f64`.
pub fn downscale_map<T: Elem>(m: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let &[b, 1, h, w] = m.shape() else {
        return Err(extent("qindex", format!("expected (B, 1, H, W), got {:?}", m.shape())));
    };
    if h % k != 0 || w % k != 0 {
        return Err(extent("qindex", format!("{h}x{w} not divisible by {k}")));
    }
    let (oh, ow) = (h / k, w / k);
    let d = m.data();
    Ok(Tensor::from_fn([b, 1, oh, ow], |i| {
        let (bi, oy, ox) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let mut acc = 0.0;
        for y in oy * k..(oy + 1) * k {
            for x in ox * k..(ox + 1) * k {
                acc += d[(bi * h + y) * w + x].to_f64_lossless();
            }
        }
        T::of(acc / (k * k) as f64)
    }))
}

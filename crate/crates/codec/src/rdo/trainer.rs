use std::io::Write;
use std::path::{Path, PathBuf};

use ngsc_tensor::{backward, Scope, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::rd_loss;
use super::roi::sample_roi_mask;
use crate::error::{CodecError, Result};
use crate::net::CodecModel;

/// Full-scale epoch counts of the three phases.
pub const FULL_SCALE_EPOCHS: [usize; 3] = [400, 350, 100];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// `q = 1`, uniform mask.
    Fixed,
    /// `q ~ U[0, 1]` per batch, uniform mask.
    Sampled,
    /// `q ~ U[0, 1]` per batch, random ROI masks.
    Roi,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Fixed, Phase::Sampled, Phase::Roi];

    pub fn number(self) -> usize {
        match self {
            Phase::Fixed => 1,
            Phase::Sampled => 2,
            Phase::Roi => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs of phases 1, 2 and 3.
    pub epochs: [usize; 3],
    pub batch_size: usize,
    /// ROI emphasis of the distortion weighting.
    pub alpha: f64,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// Learning rate of each phase, replacing `optimizer.lr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_lr: Option<[f64; 3]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk_scale(50.0)
    }
}

impl TrainConfig {
    /// Full-scale epochs divided by `factor`, at least one per phase.
    pub fn desk_scale(factor: f64) -> Self {
        let epochs = FULL_SCALE_EPOCHS.map(|e| ((e as f64 / factor.max(1.0)).round() as usize).max(1));
        Self { epochs, batch_size: 4, alpha: 0.5, seed: 0, optimizer: AdamConfig::default(), phase_lr: None }
    }

    pub fn lr(&self, phase: Phase) -> f64 {
        self.phase_lr.map_or(self.optimizer.lr, |l| l[phase.number() - 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CodecError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(CodecError::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.optimizer.lr > 0.0) || self.phase_lr.is_some_and(|l| l.iter().any(|&v| !(v > 0.0))) {
            return Err(CodecError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A set of training images from which fixed-size patches are drawn.
pub trait PatchSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(3, P, P)` patch in `[0, 1]` from item `index`; random crops draw
    /// from `rng`.
    fn patch(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>>;
}

/// Pre-cut patches, returned as they are.
impl PatchSource for Vec<Tensor<f32>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn patch(&self, index: usize, _rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        Ok(self[index].clone())
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub phase: usize,
    pub q: f64,
    pub lambda: f64,
    pub distortion: f64,
    pub rate_bpp: f64,
    pub total: f64,
}

/// Trailing moving average with the given window.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut acc = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            acc += v;
            if i >= window {
                acc -= values[i - window];
            }
            acc / (i + 1).min(window) as f64
        })
        .collect()
}

/// Three-phase rate-distortion training. Every step draws its data order,
/// crops, QIndex, masks and quantization noise from `(seed, step)`, so a
/// resumed run continues exactly where a saved one stopped.
pub struct Trainer {
    pub model: CodecModel,
    pub optim: Adam,
    pub config: TrainConfig,
    step: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(model: CodecModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optim = Adam::new(config.optimizer.clone(), &model.store);
        Ok(Self { model, optim, config, step: 0 })
    }

    /// Steps completed so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self, items: usize) -> usize {
        items.div_ceil(self.config.batch_size)
    }

    /// Last step (exclusive) of each phase.
    pub fn phase_ends(&self, items: usize) -> [usize; 3] {
        let spe = self.steps_per_epoch(items);
        let e = self.config.epochs;
        [e[0] * spe, (e[0] + e[1]) * spe, (e[0] + e[1] + e[2]) * spe]
    }

    pub fn phase_at(&self, step: usize, items: usize) -> Phase {
        let ends = self.phase_ends(items);
        Phase::ALL[ends.iter().position(|&e| step < e).unwrap_or(2)]
    }

    /// Runs one optimization step.
    pub fn train_step(&mut self, data: &dyn PatchSource) -> Result<StepLog> {
        let items = data.len();
        if items == 0 {
            return Err(CodecError::Config("empty training set".into()));
        }
        let spe = self.steps_per_epoch(items);
        let (epoch, within) = (self.step / spe, self.step % spe);
        let mut order: Vec<usize> = (0..items).collect();
        order.shuffle(&mut rng_for(self.config.seed, 2 * epoch as u64));
        let chosen = &order[within * self.config.batch_size..((within + 1) * self.config.batch_size).min(items)];

        let mut rng = rng_for(self.config.seed, 2 * self.step as u64 + 1);
        let patches = chosen.iter().map(|&i| data.patch(i, &mut rng)).collect::<Result<Vec<_>>>()?;
        let &[3, ph, pw] = patches[0].shape() else {
            return Err(CodecError::Config(format!("patches must be (3, P, P), got {:?}", patches[0].shape())));
        };
        let b = patches.len();
        let mut pixels = Vec::with_capacity(b * 3 * ph * pw);
        for p in &patches {
            if p.shape() != [3, ph, pw] {
                return Err(CodecError::Config(format!("mixed patch shapes {:?} and {:?}", p.shape(), [3, ph, pw])));
            }
            pixels.extend_from_slice(p.data());
        }
        let x = Var::constant(Tensor::new(vec![b, 3, ph, pw], pixels)?);

        let phase = self.phase_at(self.step, items);
        let q = if phase == Phase::Fixed { 1.0 } else { rng.gen_range(0.0..=1.0) };
        let m = Tensor::full([b, 1, ph, pw], q as f32);
        let r = if phase == Phase::Roi {
            let masks: Vec<f32> = (0..b).flat_map(|_| sample_roi_mask(&mut rng, ph, pw).into_data()).collect();
            Tensor::new(vec![b, 1, ph, pw], masks)?
        } else {
            Tensor::ones([b, 1, ph, pw])
        };

        let step = self.step;
        let diverged = |e: CodecError| match e {
            CodecError::Tensor(TensorError::NonFinite { .. }) => CodecError::Diverged { step },
            e => e,
        };
        self.model.store.zero_grad();
        let (loss, terms) = {
            let s = Scope::tracked(&self.model.store);
            let out = self.model.net.forward_train(&s, &x, &m, &r, &mut rng).map_err(diverged)?;
            rd_loss(&x, &out, &r, q, self.config.alpha).map_err(diverged)?
        };
        if !terms.total.is_finite() {
            return Err(CodecError::Diverged { step });
        }
        backward(&loss, &mut self.model.store).map_err(|e| diverged(e.into()))?;
        drop(loss);
        self.optim.config.lr = self.config.lr(phase);
        self.optim.step(&mut self.model.store).map_err(|_| CodecError::Diverged { step: self.step })?;
        self.model.store.zero_grad();
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            phase: phase.number(),
            q,
            lambda: terms.lambda,
            distortion: terms.distortion,
            rate_bpp: terms.rate,
            total: terms.total,
        })
    }

    /// Trains up to `until` steps (default: the end of phase 3). Rows go to
    /// `log` as they are produced; with `out_dir` set a checkpoint is written
    /// at the end of every phase, and on divergence the last good state is
    /// saved as `last_good.ngwt` before the error is returned.
    pub fn run<W: Write>(
        &mut self,
        data: &dyn PatchSource,
        until: Option<usize>,
        out_dir: Option<&Path>,
        mut log: Option<&mut csv::Writer<W>>,
    ) -> Result<Vec<StepLog>> {
        let ends = self.phase_ends(data.len());
        let stop = until.unwrap_or(ends[2]).min(ends[2]);
        let mut history = Vec::new();
        while self.step < stop {
            let row = match self.train_step(data) {
                Ok(row) => row,
                Err(e @ CodecError::Diverged { .. }) => {
                    if let Some(dir) = out_dir {
                        self.save(&dir.join("last_good.ngwt"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if let Some(w) = log.as_deref_mut() {
                w.serialize(row)?;
                w.flush()?;
            }
            history.push(row);
            if let Some(k) = ends.iter().position(|&e| e == self.step) {
                log::info!("phase {} done at step {}: loss {:.4}", k + 1, self.step, row.total);
                if let Some(dir) = out_dir {
                    self.save(&dir.join(format!("phase{}.ngwt", k + 1)))?;
                }
            }
        }
        Ok(history)
    }

    /// Optimizer state path next to a model checkpoint.
    pub fn state_path(checkpoint: &Path) -> PathBuf {
        let mut p = checkpoint.as_os_str().to_owned();
        p.push(".opt");
        PathBuf::from(p)
    }

    /// Saves the model checkpoint and the optimizer state (which carries the
    /// step count).
    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.model.save(checkpoint)?;
        self.optim.save(&Self::state_path(checkpoint))
    }

    pub fn resume(checkpoint: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = CodecModel::load(checkpoint)?;
        let optim = Adam::load(config.optimizer.clone(), &Self::state_path(checkpoint), &model.store)?;
        let step = optim.steps() as usize;
        Ok(Self { model, optim, config, step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_keeps_phase_ratio() {
        assert_eq!(TrainConfig::desk_scale(50.0).epochs, [8, 7, 2]);
        assert_eq!(TrainConfig::desk_scale(1.0).epochs, [400, 350, 100]);
        assert_eq!(TrainConfig::desk_scale(1000.0).epochs, [1, 1, 1]);
    }

    #[test]
    fn moving_average() {
        let s = smoothed(&[1.0, 3.0, 5.0, 7.0], 2);
        assert_eq!(s, vec![1.0, 2.0, 4.0, 6.0]);
    }
}

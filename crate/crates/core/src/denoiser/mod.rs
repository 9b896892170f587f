//! The noise predictor `ε̂(x_t, conditions, t)`.
//!
//! Tokens are latent voxels. Mask features are concatenated to the noisy
//! latent along channels, appearance and motion latents are prepended along
//! the sequence, and every token receives timestep, condition-code, token-type
//! and fixed sinusoidal position embeddings. `K` pre-norm blocks of
//! single-head attention plus MLP run over the full sequence. The noisy
//! positions are projected to an output `F`, and the prediction is
//! `ε̂ = √(1−ᾱ_t)·x_t + √ᾱ_t·F`, so that `F` plays the role of a velocity
//! target. Latents are passed in model space (see `codec::to_model_space`).
//!
//! Low-rank adapters can be attached to every matrix. The backward pass is
//! hand-written and returns gradients either for all base tensors or for the
//! adapter tensors only.

mod lora;
mod net;
mod params;

use alloc::format;

use crate::codec::PatchFactors;
use crate::diffusion::{make_schedule, NoisePredictor, NoiseSchedule};
use crate::synthkit::{ConditionCode, CODE_SIZES};
use crate::{Error, Latent, MotionFeatures, Result};

pub use lora::{merge_lora, LoraAdapter, LoraPair};
pub use net::{loss_and_grad, GradSample, Gradients, SampleLoss, Trainable};
pub use params::{init_params, Block, DenoiserParams, MatrixId, Tensor};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchConfig {
    pub patch: PatchFactors,
    /// Latent channels `C'`; must equal `patch.channels()`.
    pub latent_channels: usize,
    pub width: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    /// Diffusion steps covered by the timestep table.
    pub steps: usize,
    /// Linear β range of the noise schedule the model is trained under.
    pub beta_min: f64,
    pub beta_max: f64,
    pub code_sizes: [usize; 3],
}

impl Default for ArchConfig {
    fn default() -> Self {
        let patch = PatchFactors::default();
        Self {
            patch,
            latent_channels: patch.channels(),
            width: 64,
            blocks: 2,
            mlp_hidden: 128,
            steps: crate::diffusion::DEFAULT_STEPS,
            beta_min: crate::diffusion::DEFAULT_BETA_MIN,
            beta_max: crate::diffusion::DEFAULT_BETA_MAX,
            code_sizes: CODE_SIZES,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels != self.patch.channels() {
            return Err(Error::InvalidArch(format!(
                "latent channels {} != 3*pt*ph*pw = {}",
                self.latent_channels,
                self.patch.channels()
            )));
        }
        if self.width < 6 || !self.width.is_multiple_of(2) {
            return Err(Error::InvalidArch(format!(
                "width must be even and >= 6, got {}",
                self.width
            )));
        }
        if self.blocks == 0 || self.mlp_hidden == 0 || self.steps == 0 {
            return Err(Error::InvalidArch(
                "blocks, mlp_hidden and steps must be positive".into(),
            ));
        }
        if self.code_sizes.contains(&0) {
            return Err(Error::InvalidArch("empty code vocabulary".into()));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }

    /// Fails unless `sched` is exactly the schedule this model was built for.
    pub fn check_schedule(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.schedule()? != *sched {
            return Err(Error::InvalidConfig(format!(
                "schedule ({} steps) differs from the model's ({} steps, β {}..{})",
                sched.steps(),
                self.steps,
                self.beta_min,
                self.beta_max
            )));
        }
        Ok(())
    }

    /// Every matrix an adapter attaches to, in a fixed order.
    pub fn adapted_matrices(&self) -> alloc::vec::Vec<MatrixId> {
        let mut ids = alloc::vec![MatrixId::InputProj];
        for b in 0..self.blocks {
            ids.extend([
                MatrixId::Query(b),
                MatrixId::Key(b),
                MatrixId::Value(b),
                MatrixId::AttnOut(b),
                MatrixId::MlpUp(b),
                MatrixId::MlpDown(b),
            ]);
        }
        ids.push(MatrixId::OutputProj);
        ids
    }

    /// `(out, in)` of a weight matrix.
    pub fn matrix_dims(&self, id: MatrixId) -> (usize, usize) {
        let (w, c, h) = (self.width, self.latent_channels, self.mlp_hidden);
        match id {
            MatrixId::InputProj => (w, 2 * c),
            MatrixId::Query(_) | MatrixId::Key(_) | MatrixId::Value(_) | MatrixId::AttnOut(_) => (w, w),
            MatrixId::MlpUp(_) => (h, w),
            MatrixId::MlpDown(_) => (w, h),
            MatrixId::OutputProj => (c, w),
        }
    }
}

/// Token type tags, indexing rows of the type embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TokenType {
    Noisy = 0,
    Appearance = 1,
    Motion = 2,
}

/// Everything the predictor conditions on besides `x_t`.
#[derive(Debug, Clone, Copy)]
pub struct ConditionBundle<'a> {
    /// Encoded mask sequence, same shape as `x_t`; `None` omits the mask
    /// channels entirely.
    pub mask_features: Option<&'a MotionFeatures>,
    /// Encoded final frame of the previous clip.
    pub appearance: Option<&'a Latent>,
    /// Encoded low-resolution trailing window of the previous clip.
    pub motion: Option<&'a Latent>,
    pub code: ConditionCode,
    pub t: usize,
}

impl<'a> ConditionBundle<'a> {
    pub fn text_only(code: ConditionCode, t: usize) -> Self {
        Self {
            mask_features: None,
            appearance: None,
            motion: None,
            code,
            t,
        }
    }

    pub fn at(self, t: usize) -> Self {
        Self { t, ..self }
    }
}

/// Base parameters with an optional adapter.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser<'a> {
    pub params: &'a DenoiserParams,
    pub adapter: Option<&'a LoraAdapter>,
}

impl<'a> Denoiser<'a> {
    pub fn new(params: &'a DenoiserParams, adapter: Option<&'a LoraAdapter>) -> Self {
        Self { params, adapter }
    }

    pub fn forward(&self, x_t: &Latent, conds: &ConditionBundle<'_>) -> Result<Latent> {
        net::forward(self.params, self.adapter, x_t, conds)
    }

    /// Binds conditions (everything but `t`) for use with the sampler.
    pub fn conditioned(self, conds: ConditionBundle<'a>) -> Conditioned<'a> {
        Conditioned { denoiser: self, conds }
    }
}

/// A denoiser with fixed conditions, usable as a [`NoisePredictor`].
#[derive(Debug, Clone, Copy)]
pub struct Conditioned<'a> {
    pub denoiser: Denoiser<'a>,
    pub conds: ConditionBundle<'a>,
}

impl NoisePredictor for Conditioned<'_> {
    fn predict(&mut self, x_t: &Latent, t: usize) -> Result<Latent> {
        self.denoiser.forward(x_t, &self.conds.at(t))
    }
}

/// Frequencies per axis in the position embedding.
const POSITION_FREQS: usize = 6;

/// Fixed sinusoidal embedding of a `(frame, row, col)` pixel-space position,
/// with octave wavelengths starting at 4 pixels.
pub(crate) fn position_embedding(width: usize, pos: [f64; 3], out: &mut [f64]) {
    let nf = (width / 6).min(POSITION_FREQS);
    for (axis, &p) in pos.iter().enumerate() {
        for k in 0..nf {
            let wavelength = 4.0 * (1u64 << k) as f64;
            let a = core::f64::consts::TAU * p / wavelength;
            let i = axis * 2 * nf + 2 * k;
            out[i] += 0.5 * libm::sin(a);
            out[i + 1] += 0.5 * libm::cos(a);
        }
    }
}

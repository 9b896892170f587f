//! Long videos from fixed-length clips generated one after another.
//!
//! Clip `k > 0` is conditioned on the last frame of clip `k − 1` (appearance)
//! and on a half-resolution copy of its trailing `motion_window` frames
//! (motion). Clips are concatenated without overlap.

use alloc::format;
use alloc::vec::Vec;

use crate::codec::{self, PatchFactors};
use crate::denoiser::{ConditionBundle, Denoiser};
use crate::diffusion::{sample, NoiseSchedule};
use crate::rng::{self, purpose};
use crate::synthkit::ConditionCode;
use crate::{Error, Latent, MaskSequence, Result, Video};

/// Spatial downsampling of the motion window.
pub const MOTION_DOWNSAMPLE: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LongGenPlan {
    pub total_clips: usize,
    pub clip_frames: usize,
    pub motion_window: usize,
    /// Mask sequence covering all clips.
    pub masks: MaskSequence,
    pub code: ConditionCode,
    pub seed: u64,
    /// When false, every clip is sampled from its mask slice alone.
    pub use_conditions: bool,
}

impl LongGenPlan {
    pub fn validate(&self, pf: PatchFactors) -> Result<()> {
        if self.total_clips == 0 || self.clip_frames == 0 {
            return Err(Error::InvalidPlan("clip count and clip length must be positive".into()));
        }
        let want = self.total_clips * self.clip_frames;
        if self.masks.frames != want {
            return Err(Error::InvalidPlan(format!(
                "mask sequence has {} frames, plan needs {} × {} = {want}",
                self.masks.frames, self.total_clips, self.clip_frames
            )));
        }
        if self.motion_window == 0 || self.motion_window > self.clip_frames {
            return Err(Error::InvalidPlan(format!(
                "motion window {} must be in 1..={}",
                self.motion_window, self.clip_frames
            )));
        }
        pf.check(self.clip_frames, self.masks.height, self.masks.width)?;
        for (dim, size) in [("height", self.masks.height), ("width", self.masks.width)] {
            if size % MOTION_DOWNSAMPLE != 0 {
                return Err(Error::Indivisible {
                    dim,
                    size,
                    factor: MOTION_DOWNSAMPLE,
                });
            }
        }
        pf.check(
            self.motion_window,
            self.masks.height / MOTION_DOWNSAMPLE,
            self.masks.width / MOTION_DOWNSAMPLE,
        )?;
        self.code.validate()
    }

    /// Sampling seed of clip `k`; clip 0 uses the plan seed itself.
    pub fn clip_seed(&self, k: usize) -> u64 {
        if k == 0 {
            self.seed
        } else {
            rng::derive(self.seed, purpose::CLIP, k as u64)
        }
    }
}

/// Appearance and motion latents derived from a finished clip, in model space.
pub fn clip_context(clip: &Video, motion_window: usize, pf: PatchFactors) -> Result<(Latent, Latent)> {
    let appearance = codec::to_model_space(&codec::encode_still(clip, clip.frames - 1, pf)?);
    let tail = clip.slice_frames(clip.frames - motion_window, clip.frames);
    let motion = codec::to_model_space(&codec::encode(&codec::downsample(&tail, MOTION_DOWNSAMPLE)?, pf)?);
    Ok((appearance, motion))
}

/// Generates `total_clips` clips and concatenates them.
pub fn generate_long(plan: &LongGenPlan, model: Denoiser<'_>, sched: &NoiseSchedule) -> Result<Video> {
    let pf = model.params.arch.patch;
    plan.validate(pf)?;
    model.params.arch.check_schedule(sched)?;
    let (_, h, w) = plan.masks.dims();
    let shape = pf.latent_dims(plan.clip_frames, h, w)?;
    let mut clips: Vec<Video> = Vec::with_capacity(plan.total_clips);
    for k in 0..plan.total_clips {
        let slice = plan
            .masks
            .slice_frames(k * plan.clip_frames, (k + 1) * plan.clip_frames);
        let features = codec::encode_mask(&slice, pf)?;
        let context = match clips.last() {
            Some(prev) if plan.use_conditions => Some(clip_context(prev, plan.motion_window, pf)?),
            _ => None,
        };
        let conds = ConditionBundle {
            mask_features: Some(&features),
            appearance: context.as_ref().map(|c| &c.0),
            motion: context.as_ref().map(|c| &c.1),
            code: plan.code,
            t: sched.steps(),
        };
        let latent = sample(&mut model.conditioned(conds), shape, sched, plan.clip_seed(k))?;
        clips.push(codec::decode(&codec::from_model_space(&latent), pf)?);
    }
    Video::concat(&clips)
}

/// Mean absolute pixel difference across each clip boundary.
pub fn boundary_consistency(video: &Video, clip_frames: usize) -> Result<Vec<f64>> {
    if clip_frames == 0 || !video.frames.is_multiple_of(clip_frames) {
        return Err(Error::Indivisible {
            dim: "frames",
            size: video.frames,
            factor: clip_frames,
        });
    }
    let clips = video.frames / clip_frames;
    Ok((1..clips)
        .map(|k| {
            let a = video.frame(k * clip_frames - 1);
            let b = video.frame(k * clip_frames);
            let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
            s / a.len() as f64
        })
        .collect())
}

//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file only lists what it changes. Lines
//! starting with `#` and blank lines are ignored. Unknown keys, duplicate
//! keys and unparsable values are rejected. [`RunConfig::effective`] prints
//! every key in a fixed order, and its SHA-256 is the config hash embedded in
//! all outputs.

use std::fmt::Write as _;
use std::path::Path;

use maskmotion_core::codec::PatchFactors;
use maskmotion_core::denoiser::ArchConfig;
use maskmotion_core::diffusion::NoiseSchedule;
use maskmotion_core::longgen::LongGenPlan;
use maskmotion_core::synthkit::{ComboFilter, ConditionCode, SceneSampling, CODE_SIZES};
use maskmotion_core::trainer::{LossWeighting, LrDecay, TrainConfig};
use maskmotion_core::MaskSequence;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene_frames: usize,
    pub scene_height: usize,
    pub scene_width: usize,
    pub scene_jitter: f64,
    pub data_count: usize,
    pub data_combos: ComboFilter,
    pub schedule_steps: usize,
    pub schedule_beta_min: f64,
    pub schedule_beta_max: f64,
    pub model_patch: PatchFactors,
    pub model_width: usize,
    pub model_blocks: usize,
    pub model_mlp_hidden: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub pretrain_steps: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_learning_rate: f64,
    pub pretrain_warmup: usize,
    pub pretrain_weighting: LossWeighting,
    pub train_steps: usize,
    pub train_batch_size: usize,
    pub train_learning_rate: f64,
    pub train_alpha: f64,
    pub train_beta1: f64,
    pub train_beta2: f64,
    pub train_eps: f64,
    pub train_checkpoint_interval: usize,
    pub train_weighting: LossWeighting,
    pub clip_frames: usize,
    pub clip_motion_window: usize,
    pub longgen_clips: usize,
    pub longgen_use_conditions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        let train = TrainConfig::default();
        let lora = maskmotion_core::denoiser::LoraAdapter::DEFAULT_RANK;
        Self {
            seed: 0,
            scene_frames: 16,
            scene_height: 32,
            scene_width: 48,
            scene_jitter: 0.0,
            data_count: 512,
            data_combos: ComboFilter::ExcludeHoldout,
            schedule_steps: arch.steps,
            schedule_beta_min: arch.beta_min,
            schedule_beta_max: arch.beta_max,
            model_patch: arch.patch,
            model_width: arch.width,
            model_blocks: arch.blocks,
            model_mlp_hidden: arch.mlp_hidden,
            lora_rank: lora,
            lora_scale: 1.0,
            pretrain_steps: 2000,
            pretrain_batch_size: 8,
            pretrain_learning_rate: 2e-3,
            pretrain_warmup: 100,
            pretrain_weighting: LossWeighting::Velocity,
            train_steps: train.steps,
            train_batch_size: train.batch_size,
            train_learning_rate: train.learning_rate,
            train_alpha: train.alpha,
            train_beta1: train.beta1,
            train_beta2: train.beta2,
            train_eps: train.eps,
            train_checkpoint_interval: train.checkpoint_interval,
            train_weighting: train.weighting,
            clip_frames: 16,
            clip_motion_window: 16,
            longgen_clips: 3,
            longgen_use_conditions: true,
        }
    }
}

trait Value: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn show(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn show(&self) -> String {
                format!("{self:?}")
            }
        }
    )*};
}
from_str_value!(usize, u64, f64, bool);

impl Value for ComboFilter {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "all" => Some(ComboFilter::All),
            "train" => Some(ComboFilter::ExcludeHoldout),
            "holdout" => Some(ComboFilter::HoldoutOnly),
            _ => None,
        }
    }
    fn show(&self) -> String {
        match self {
            ComboFilter::All => "all",
            ComboFilter::ExcludeHoldout => "train",
            ComboFilter::HoldoutOnly => "holdout",
        }
        .into()
    }
}

impl Value for LossWeighting {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "epsilon" => Some(LossWeighting::Epsilon),
            "velocity" => Some(LossWeighting::Velocity),
            _ => None,
        }
    }
    fn show(&self) -> String {
        match self {
            LossWeighting::Epsilon => "epsilon",
            LossWeighting::Velocity => "velocity",
        }
        .into()
    }
}

impl Value for PatchFactors {
    fn parse_value(s: &str) -> Option<Self> {
        let v: Vec<usize> = s.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
        match v[..] {
            [t, h, w] => Some(PatchFactors { t, h, w }),
            _ => None,
        }
    }
    fn show(&self) -> String {
        format!("{},{},{}", self.t, self.h, self.w)
    }
}

macro_rules! keys {
    ($($key:literal => $field:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = Value::parse_value(value).ok_or_else(|| {
                            CliError::Validation(format!("bad value {value:?} for key {key}"))
                        })?;
                    })*
                    _ => {
                        return Err(CliError::Validation(format!("unknown config key {key:?}")));
                    }
                }
                Ok(())
            }

            /// Every key with its current value, one `key = value` line each.
            pub fn effective(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{} = {}", $key, self.$field.show()).unwrap();)*
                out
            }
        }
    };
}

keys! {
    "seed" => seed,
    "scene.frames" => scene_frames,
    "scene.height" => scene_height,
    "scene.width" => scene_width,
    "scene.jitter" => scene_jitter,
    "data.count" => data_count,
    "data.combos" => data_combos,
    "schedule.steps" => schedule_steps,
    "schedule.beta_min" => schedule_beta_min,
    "schedule.beta_max" => schedule_beta_max,
    "model.patch" => model_patch,
    "model.width" => model_width,
    "model.blocks" => model_blocks,
    "model.mlp_hidden" => model_mlp_hidden,
    "lora.rank" => lora_rank,
    "lora.scale" => lora_scale,
    "pretrain.steps" => pretrain_steps,
    "pretrain.batch_size" => pretrain_batch_size,
    "pretrain.learning_rate" => pretrain_learning_rate,
    "pretrain.warmup" => pretrain_warmup,
    "pretrain.weighting" => pretrain_weighting,
    "train.steps" => train_steps,
    "train.batch_size" => train_batch_size,
    "train.learning_rate" => train_learning_rate,
    "train.alpha" => train_alpha,
    "train.beta1" => train_beta1,
    "train.beta2" => train_beta2,
    "train.eps" => train_eps,
    "train.checkpoint_interval" => train_checkpoint_interval,
    "train.weighting" => train_weighting,
    "clip.frames" => clip_frames,
    "clip.motion_window" => clip_motion_window,
    "longgen.clips" => longgen_clips,
    "longgen.use_conditions" => longgen_use_conditions,
}

impl RunConfig {
    /// Applies `key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Applies more lines (for example command-line overrides) and revalidates.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(CliError::Validation(format!("line {}: duplicate key {key}", n + 1)));
            }
            seen.push(key);
            self.set(key, value)
                .map_err(|e| CliError::Validation(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    /// Lowercase hex SHA-256 of [`effective`](Self::effective).
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.effective().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.hash())
    }

    pub fn validate(&self) -> Result<()> {
        self.arch()?.validate()?;
        self.train_config().validate()?;
        self.pretrain_config().validate()?;
        let pf = self.model_patch;
        pf.check(self.scene_frames, self.scene_height, self.scene_width)?;
        if self.data_count == 0 {
            return Err(CliError::Validation("data.count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.scene_jitter) {
            return Err(CliError::Validation("scene.jitter must be in [0, 1]".into()));
        }
        if self.lora_rank == 0 || !self.lora_scale.is_finite() {
            return Err(CliError::Validation(
                "lora.rank must be positive and lora.scale finite".into(),
            ));
        }
        if self.clip_frames == 0 || !self.scene_frames.is_multiple_of(self.clip_frames) {
            return Err(CliError::Validation(format!(
                "clip.frames {} must divide scene.frames {}",
                self.clip_frames, self.scene_frames
            )));
        }
        if self.longgen_clips == 0 {
            return Err(CliError::Validation("longgen.clips must be positive".into()));
        }
        // A dummy plan checks clip length, motion window and downsampling.
        self.plan(
            MaskSequence::zeros(
                self.clip_frames * self.longgen_clips,
                self.scene_height,
                self.scene_width,
            ),
            ConditionCode::default(),
            0,
        )
        .validate(pf)?;
        Ok(())
    }

    pub fn arch(&self) -> Result<ArchConfig> {
        let arch = ArchConfig {
            patch: self.model_patch,
            latent_channels: self.model_patch.channels(),
            width: self.model_width,
            blocks: self.model_blocks,
            mlp_hidden: self.model_mlp_hidden,
            steps: self.schedule_steps,
            beta_min: self.schedule_beta_min,
            beta_max: self.schedule_beta_max,
            code_sizes: CODE_SIZES,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(self.arch()?.schedule()?)
    }

    pub fn sampling(&self) -> SceneSampling {
        SceneSampling {
            frames: self.scene_frames,
            height: self.scene_height,
            width: self.scene_width,
            jitter: self.scene_jitter,
            combos: self.data_combos,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            batch_size: self.train_batch_size,
            learning_rate: self.train_learning_rate,
            alpha: self.train_alpha,
            beta1: self.train_beta1,
            beta2: self.train_beta2,
            eps: self.train_eps,
            seed: self.seed,
            checkpoint_interval: self.train_checkpoint_interval,
            weighting: self.train_weighting,
            ..TrainConfig::default()
        }
    }

    /// Pretraining config: linear warmup then cosine decay.
    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch_size,
            learning_rate: self.pretrain_learning_rate,
            warmup: self.pretrain_warmup,
            weighting: self.pretrain_weighting,
            decay: LrDecay::Cosine,
            alpha: 0.0,
            ..self.train_config()
        }
    }

    pub fn plan(&self, masks: MaskSequence, code: ConditionCode, seed: u64) -> LongGenPlan {
        LongGenPlan {
            total_clips: self.longgen_clips,
            clip_frames: self.clip_frames,
            motion_window: self.clip_motion_window,
            masks,
            code,
            seed,
            use_conditions: self.longgen_use_conditions,
        }
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn effective_reparses_to_same_config() {
        let mut cfg = RunConfig::default();
        cfg.apply("train.alpha = 0.25\nscene.jitter = 0.1\ndata.combos = holdout\nmodel.patch = 1,2,2")
            .unwrap();
        let again = RunConfig::parse(&cfg.effective()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn every_key_is_echoed() {
        let text = RunConfig::default().effective();
        assert_eq!(text.lines().count(), RunConfig::keys().len());
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nope = 1",
            "train.steps = many",
            "seed = 1\nseed = 2",
            "train.steps",
            "model.width = 7",
            "clip.frames = 5",
            "data.combos = some",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = RunConfig::parse("# note\n\n  train.steps = 10  \n").unwrap();
        assert_eq!(cfg.train_steps, 10);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig::parse("seed = 1").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash_hex().len(), 64);
    }
}

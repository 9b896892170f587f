//! Adapter fine-tuning with `L = L_d + α·L_c`, plus the base pretraining
//! stage that produces the frozen teacher.
//!
//! Per sample: draw `t` and `ε`, noise the clean latent, run the student with
//! mask features (and clip context when present) and the teacher on the same
//! `(x_t, code, t)` with neither. `L_d` compares the student to `ε`, `L_c`
//! compares it to the teacher. Only the adapter is updated.
//!
//! Every draw in a step comes from a stream keyed by `(seed, step)`, so a run
//! resumed from a saved adapter and optimizer state replays exactly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::codec::{self, PatchFactors};
use crate::denoiser::{
    loss_and_grad, ConditionBundle, Denoiser, DenoiserParams, GradSample, LoraAdapter, Tensor, Trainable,
};
use crate::diffusion::{q_sample, sample, NoiseSchedule};
use crate::longgen::clip_context;
use crate::rng::{self, purpose};
use crate::synthkit::{classify_video, is_holdout, ConditionCode, Triplet, NUM_BACKGROUNDS, NUM_COLORS, NUM_SHAPES};
use crate::{Error, Latent, MotionFeatures, Result, Video};

/// Training length and batch size of the original full-scale protocol.
pub const PAPER_STEPS: usize = 10_000;
pub const PAPER_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Consistency weight α.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub checkpoint_interval: usize,
    /// Updates over which the learning rate ramps linearly from zero.
    pub warmup: usize,
    pub decay: LrDecay,
    pub weighting: LossWeighting,
}

/// Per-sample weight on the denoising objective as a function of `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossWeighting {
    /// Plain noise-prediction error.
    #[default]
    Epsilon,
    /// Error in the velocity target, `1/ᾱ_t` times the noise error. Keeps
    /// high-noise steps from vanishing from the objective.
    Velocity,
}

impl LossWeighting {
    pub fn weight(self, sched: &NoiseSchedule, t: usize) -> f64 {
        match self {
            LossWeighting::Epsilon => 1.0,
            LossWeighting::Velocity => 1.0 / sched.alpha_bar(t),
        }
    }
}

/// Learning-rate shape after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrDecay {
    #[default]
    Constant,
    /// Half-cosine from the peak rate down to zero at `steps`.
    Cosine,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2_000,
            batch_size: 8,
            learning_rate: 2e-4,
            alpha: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_interval: 500,
            warmup: 0,
            decay: LrDecay::Constant,
            weighting: LossWeighting::Epsilon,
        }
    }
}

impl TrainConfig {
    /// Learning rate of the update with 0-based index `step`.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let step = step as f64;
        let warmup = self.warmup as f64;
        if step < warmup {
            return self.learning_rate * (step + 1.0) / warmup;
        }
        match self.decay {
            LrDecay::Constant => self.learning_rate,
            LrDecay::Cosine => {
                let span = (self.steps as f64 - warmup).max(1.0);
                let frac = ((step - warmup) / span).min(1.0);
                self.learning_rate * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * frac))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("adam eps must be positive");
        }
        Ok(())
    }
}

/// Adam moments, one pair per trainable tensor, in tensor-list order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    /// Completed updates.
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new<'a, I: IntoIterator<Item = &'a Tensor>>(tensors: I) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = tensors
            .into_iter()
            .map(|t| (vec![0.0; t.len()], vec![0.0; t.len()]))
            .unzip();
        Self { step: 0, m, v }
    }

    pub fn for_adapter(adapter: &LoraAdapter) -> Self {
        Self::new(adapter.tensors().into_iter().map(|(_, t)| t))
    }

    pub fn for_params(params: &DenoiserParams) -> Self {
        Self::new(params.tensors().into_iter().map(|(_, t)| t))
    }

    /// Checks that the moments mirror `tensors` and are finite.
    pub fn check<'a, I: IntoIterator<Item = &'a Tensor>>(&self, tensors: I) -> Result<()> {
        let lens: Vec<usize> = tensors.into_iter().map(|t| t.len()).collect();
        let got: Vec<usize> = self.m.iter().map(|m| m.len()).collect();
        let got_v: Vec<usize> = self.v.iter().map(|v| v.len()).collect();
        if lens != got || lens != got_v {
            return Err(Error::shape(lens, got));
        }
        if !self.m.iter().chain(&self.v).flatten().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("optimizer moments are not finite".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update; `step` is the 1-based update count.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = param.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(Error::shape(n, (grad.len(), m.len(), v.len())));
    }
    if step == 0 {
        return Err(Error::InvalidConfig("adam step count is 1-based".into()));
    }
    let lr = cfg.learning_rate_at(step - 1);
    let c1 = 1.0 - libm::pow(cfg.beta1, step as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, step as f64);
    for i in 0..n {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}

/// Batch-mean losses of one step. `loss` is always `loss_d + α·loss_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss_d: f64,
    pub loss_c: f64,
    pub loss: f64,
}

impl LossReport {
    pub fn new(loss_d: f64, loss_c: f64, alpha: f64) -> Self {
        Self {
            loss_d,
            loss_c,
            loss: loss_d + alpha * loss_c,
        }
    }
}

/// Conditions carried over from the preceding clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipContext {
    pub appearance: Latent,
    pub motion: Latent,
}

/// A clip prepared for training: clean latent, motion features, code and
/// optional preceding-clip context.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub latent: Latent,
    pub mask: MotionFeatures,
    pub code: ConditionCode,
    pub context: Option<ClipContext>,
}

impl TrainExample {
    pub fn conds(&self, t: usize) -> ConditionBundle<'_> {
        ConditionBundle {
            mask_features: Some(&self.mask),
            appearance: self.context.as_ref().map(|c| &c.appearance),
            motion: self.context.as_ref().map(|c| &c.motion),
            code: self.code,
            t,
        }
    }
}

/// Splits a triplet into `clip_frames`-long clips. Clip 0 has no context;
/// clip `k` carries the context of ground-truth clip `k − 1`.
pub fn examples_from_triplet(
    triplet: &Triplet,
    pf: PatchFactors,
    clip_frames: usize,
    motion_window: usize,
) -> Result<Vec<TrainExample>> {
    let f = triplet.video.frames;
    if clip_frames == 0 || !f.is_multiple_of(clip_frames) {
        return Err(Error::Indivisible {
            dim: "frames",
            size: f,
            factor: clip_frames,
        });
    }
    if motion_window == 0 || motion_window > clip_frames {
        return Err(Error::InvalidConfig(format!(
            "motion window {motion_window} must be in 1..={clip_frames}"
        )));
    }
    let mut out = Vec::with_capacity(f / clip_frames);
    let mut prev: Option<Video> = None;
    for k in 0..f / clip_frames {
        let (a, b) = (k * clip_frames, (k + 1) * clip_frames);
        let clip = triplet.video.slice_frames(a, b);
        let context = match &prev {
            Some(p) => {
                let (appearance, motion) = clip_context(p, motion_window, pf)?;
                Some(ClipContext { appearance, motion })
            }
            None => None,
        };
        out.push(TrainExample {
            latent: codec::to_model_space(&codec::encode(&clip, pf)?),
            mask: codec::encode_mask(&triplet.masks.slice_frames(a, b), pf)?,
            code: triplet.cond,
            context,
        });
        prev = Some(clip);
    }
    Ok(out)
}

/// Example indices of the batch for `step`, drawn with replacement.
pub fn draw_batch(n_examples: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut r = rng::stream(rng::derive(seed, purpose::BATCH, step));
    (0..batch_size).map(|_| r.random_range(0..n_examples)).collect()
}

struct Noised {
    t: usize,
    eps: Latent,
    x_t: Latent,
}

fn noise_batch(
    examples: &[TrainExample],
    batch: &[usize],
    sched: &NoiseSchedule,
    seed: u64,
    step: u64,
) -> Result<Vec<Noised>> {
    let mut r = rng::stream(rng::derive(seed, purpose::TRAIN_STEP, step));
    batch
        .iter()
        .map(|&i| {
            let ex = examples.get(i).ok_or_else(|| Error::shape(examples.len(), i))?;
            let t = r.random_range(1..=sched.steps());
            let mut eps = Latent::zeros_like(&ex.latent);
            rng::fill_normal(&mut r, &mut eps.data, 1.0);
            let x_t = q_sample(&ex.latent, t, &eps, sched)?;
            Ok(Noised { t, eps, x_t })
        })
        .collect()
}

fn batch_report(losses: &[crate::denoiser::SampleLoss], batch: &[usize], alpha: f64, step: u64) -> Result<LossReport> {
    for (s, &i) in losses.iter().zip(batch) {
        if !(s.loss_d.is_finite() && s.loss_c.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                sample: i,
                loss_d: s.loss_d,
                loss_c: s.loss_c,
            });
        }
    }
    let n = losses.len() as f64;
    let ld = losses.iter().map(|s| s.loss_d).sum::<f64>() / n;
    let lc = losses.iter().map(|s| s.loss_c).sum::<f64>() / n;
    Ok(LossReport::new(ld, lc, alpha))
}

/// One adapter update on `batch` (indices into `examples`). `student` is the
/// base the adapter sits on; `teacher` is the frozen reference.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    student: &DenoiserParams,
    adapter: &mut LoraAdapter,
    teacher: &DenoiserParams,
    examples: &[TrainExample],
    batch: &[usize],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    opt: &mut OptState,
) -> Result<LossReport> {
    cfg.validate()?;
    student.arch.check_schedule(sched)?;
    teacher.arch.check_schedule(sched)?;
    opt.check(adapter.tensors().into_iter().map(|(_, t)| t))?;
    let step = opt.step;
    let noised = noise_batch(examples, batch, sched, cfg.seed, step)?;
    let teacher_preds = batch
        .iter()
        .zip(&noised)
        .map(|(&i, n)| Denoiser::new(teacher, None).forward(&n.x_t, &ConditionBundle::text_only(examples[i].code, n.t)))
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<GradSample<'_>> = batch
        .iter()
        .zip(&noised)
        .zip(&teacher_preds)
        .map(|((&i, n), tp)| GradSample {
            x_t: &n.x_t,
            conds: examples[i].conds(n.t),
            eps: &n.eps,
            teacher: Some(tp),
            weight: cfg.weighting.weight(sched, n.t),
        })
        .collect();
    let (losses, grads) = loss_and_grad(student, Some(adapter), &samples, cfg.alpha, Trainable::Adapter)?;
    let report = batch_report(&losses, batch, cfg.alpha, step)?;
    let grads = grads.adapter.expect("adapter gradients");

    opt.step += 1;
    for (((_, p), (_, g)), (m, v)) in adapter
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(opt.m.iter_mut().zip(opt.v.iter_mut()))
    {
        adam_update(&mut p.data, &g.data, m, v, opt.step, cfg)?;
    }
    Ok(report)
}

/// One full-parameter update of the base on the text-only objective. Clip
/// context and mask features are ignored; `loss_c` is reported as zero.
pub fn pretrain_step(
    params: &mut DenoiserParams,
    examples: &[TrainExample],
    batch: &[usize],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    opt: &mut OptState,
) -> Result<LossReport> {
    cfg.validate()?;
    params.arch.check_schedule(sched)?;
    opt.check(params.tensors().into_iter().map(|(_, t)| t))?;
    let step = opt.step;
    let noised = noise_batch(examples, batch, sched, cfg.seed, step)?;
    let samples: Vec<GradSample<'_>> = batch
        .iter()
        .zip(&noised)
        .map(|(&i, n)| GradSample {
            x_t: &n.x_t,
            conds: ConditionBundle::text_only(examples[i].code, n.t),
            eps: &n.eps,
            teacher: None,
            weight: cfg.weighting.weight(sched, n.t),
        })
        .collect();
    let (losses, grads) = loss_and_grad(params, None, &samples, 0.0, Trainable::Base)?;
    let report = batch_report(&losses, batch, 0.0, step)?;
    let grads = grads.base.expect("base gradients");

    opt.step += 1;
    for (((_, p), (_, g)), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(opt.m.iter_mut().zip(opt.v.iter_mut()))
    {
        adam_update(&mut p.data, &g.data, m, v, opt.step, cfg)?;
    }
    Ok(report)
}

/// Runs [`train_step`] until `opt.step == cfg.steps`, calling `on_step` after
/// each update with the index of the step just taken.
#[allow(clippy::too_many_arguments)]
pub fn finetune<F>(
    student: &DenoiserParams,
    adapter: &mut LoraAdapter,
    teacher: &DenoiserParams,
    examples: &[TrainExample],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    opt: &mut OptState,
    mut on_step: F,
) -> Result<()>
where
    F: FnMut(u64, &LossReport, &LoraAdapter, &OptState) -> Result<()>,
{
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    while opt.step < cfg.steps as u64 {
        let step = opt.step;
        let batch = draw_batch(examples.len(), cfg.batch_size, cfg.seed, step);
        let report = train_step(student, adapter, teacher, examples, &batch, sched, cfg, opt)?;
        on_step(step, &report, adapter, opt)?;
    }
    Ok(())
}

/// Runs [`pretrain_step`] until `opt.step == cfg.steps`.
pub fn pretrain<F>(
    params: &mut DenoiserParams,
    examples: &[TrainExample],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    opt: &mut OptState,
    mut on_step: F,
) -> Result<()>
where
    F: FnMut(u64, &LossReport, &DenoiserParams, &OptState) -> Result<()>,
{
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    while opt.step < cfg.steps as u64 {
        let step = opt.step;
        let batch = draw_batch(examples.len(), cfg.batch_size, cfg.seed, step);
        let report = pretrain_step(params, examples, &batch, sched, cfg, opt)?;
        on_step(step, &report, params, opt)?;
    }
    Ok(())
}

/// Per-field accuracy of the text-alignment probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    pub shape: f64,
    pub color: f64,
    pub background: f64,
    pub samples: usize,
}

impl AlignmentReport {
    pub fn mean(&self) -> f64 {
        (self.shape + self.color + self.background) / 3.0
    }

    /// Accuracy of a generator that ignores its code.
    pub const CHANCE: [f64; 3] = [
        1.0 / NUM_SHAPES as f64,
        1.0 / NUM_COLORS as f64,
        1.0 / NUM_BACKGROUNDS as f64,
    ];
}

/// Every code whose shape/color pairing is held out of fine-tuning.
pub fn holdout_probe() -> Vec<ConditionCode> {
    ConditionCode::all()
        .into_iter()
        .filter(|c| is_holdout(c.shape, c.color))
        .collect()
}

/// Generates `samples_per_code` videos per probe code and scores the
/// classifier's reading of each against the code that produced it.
pub fn evaluate_text_alignment<G>(
    probe: &[ConditionCode],
    samples_per_code: usize,
    seed: u64,
    mut generate: G,
) -> Result<AlignmentReport>
where
    G: FnMut(ConditionCode, u64) -> Result<Video>,
{
    let mut hits = [0usize; 3];
    let mut n = 0usize;
    for (ci, &code) in probe.iter().enumerate() {
        for s in 0..samples_per_code {
            let sample_seed = rng::derive(seed, purpose::PROBE, (ci * samples_per_code + s) as u64);
            let guess = classify_video(&generate(code, sample_seed)?);
            hits[0] += (guess.shape == Some(code.shape)) as usize;
            hits[1] += (guess.color == Some(code.color)) as usize;
            hits[2] += (guess.background == code.background) as usize;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidConfig("empty probe set".into()));
    }
    let acc = |h: usize| h as f64 / n as f64;
    Ok(AlignmentReport {
        shape: acc(hits[0]),
        color: acc(hits[1]),
        background: acc(hits[2]),
        samples: n,
    })
}

/// Text-only generator for the probe: samples without mask features or
/// context and decodes a `frames × height × width` clip.
pub fn text_generator<'a>(
    model: Denoiser<'a>,
    sched: &'a NoiseSchedule,
    dims: (usize, usize, usize),
) -> impl FnMut(ConditionCode, u64) -> Result<Video> + 'a {
    move |code, seed| {
        let pf = model.params.arch.patch;
        model.params.arch.check_schedule(sched)?;
        let shape = pf.latent_dims(dims.0, dims.1, dims.2)?;
        let conds = ConditionBundle::text_only(code, sched.steps());
        let lat = sample(&mut model.conditioned(conds), shape, sched, seed)?;
        codec::decode(&codec::from_model_space(&lat), pf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{init_params, ArchConfig};
    use crate::diffusion::make_schedule;
    use crate::synthkit::{gen_triplet, sample_scene, ComboFilter, SceneSampling, CODE_SIZES};

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            learning_rate: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    /// Scalar reference: plain bias-corrected Adam written independently.
    fn scalar_adam(p0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        let (mut b1t, mut b2t) = (1.0, 1.0);
        for &g in grads {
            b1t *= b1;
            b2t *= b2;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1t)) / ((v / (1.0 - b2t)).sqrt() + eps);
        }
        p
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let c = TrainConfig::default();
        let mut r = rng::stream(1);
        let grads: Vec<f64> = (0..100).map(|_| r.random_range(-2.0..2.0)).collect();
        let (mut p, mut m, mut v) = ([0.7], [0.0], [0.0]);
        for (k, &g) in grads.iter().enumerate() {
            adam_update(&mut p, &[g], &mut m, &mut v, k as u64 + 1, &c).unwrap();
        }
        let want = scalar_adam(0.7, &grads, c.learning_rate, c.beta1, c.beta2, c.eps);
        assert!((p[0] - want).abs() <= 1e-12, "{} vs {want}", p[0]);
    }

    #[test]
    fn adam_zero_gradient() {
        let c = TrainConfig::default();
        let (mut p, mut m, mut v) = ([1.5, -2.0], [0.4, -0.2], [0.3, 0.1]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 5, &c).unwrap();
        assert!((m[0] - 0.36).abs() < 1e-15 && (v[1] - 0.0999).abs() < 1e-15);
        // Decayed moments still move the parameter; with zero moments it stays.
        let (mut q, mut m0, mut v0) = ([1.5], [0.0], [0.0]);
        adam_update(&mut q, &[0.0], &mut m0, &mut v0, 1, &c).unwrap();
        assert_eq!(q, [1.5]);
        assert!(adam_update(&mut q, &[0.0, 1.0], &mut m0, &mut v0, 2, &c).is_err());
    }

    #[test]
    fn adam_constant_gradient_step_is_learning_rate() {
        let c = TrainConfig::default();
        for g in [1e-3, 0.5, -40.0] {
            let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
            let mut last = 0.0;
            for k in 1..=500u64 {
                let before = p[0];
                adam_update(&mut p, &[g], &mut m, &mut v, k, &c).unwrap();
                last = (p[0] - before).abs();
            }
            let want = c.learning_rate * g.abs() / (g.abs() + c.eps);
            assert!((last - want).abs() <= 1e-9 * want, "g={g}: {last} vs {want}");
        }
    }

    #[test]
    fn learning_rate_warmup_and_cosine() {
        let c = TrainConfig {
            steps: 110,
            learning_rate: 1.0,
            warmup: 10,
            decay: LrDecay::Cosine,
            ..TrainConfig::default()
        };
        assert!((c.learning_rate_at(0) - 0.1).abs() < 1e-12);
        assert!((c.learning_rate_at(9) - 1.0).abs() < 1e-12);
        assert!((c.learning_rate_at(10) - 1.0).abs() < 1e-12);
        assert!((c.learning_rate_at(60) - 0.5).abs() < 1e-12);
        assert!(c.learning_rate_at(109) > 0.0 && c.learning_rate_at(109) < 1e-3);
        assert_eq!(c.learning_rate_at(500), 0.0);
        let flat = TrainConfig::default();
        assert!((0..50).all(|s| flat.learning_rate_at(s) == flat.learning_rate));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                alpha: -0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                beta2: 1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    struct Setup {
        params: DenoiserParams,
        adapter: LoraAdapter,
        sched: NoiseSchedule,
        examples: Vec<TrainExample>,
    }

    fn setup() -> Setup {
        let patch = PatchFactors::default();
        let arch = ArchConfig {
            patch,
            latent_channels: patch.channels(),
            width: 12,
            blocks: 1,
            mlp_hidden: 12,
            steps: 10,
            beta_min: 0.01,
            beta_max: 0.5,
            code_sizes: CODE_SIZES,
        };
        let sampling = SceneSampling {
            frames: 8,
            height: 8,
            width: 8,
            jitter: 0.05,
            combos: ComboFilter::ExcludeHoldout,
        };
        let mut examples = Vec::new();
        for seed in 0..3 {
            let t = gen_triplet(&sample_scene(&sampling, seed).unwrap(), seed).unwrap();
            examples.extend(examples_from_triplet(&t, patch, 4, 4).unwrap());
        }
        Setup {
            params: init_params(&arch, 1).unwrap(),
            adapter: LoraAdapter::new(&arch, 2, 1.0, 2).unwrap(),
            sched: make_schedule(10, 0.01, 0.5).unwrap(),
            examples,
        }
    }

    #[test]
    fn examples_carry_previous_clip_context() {
        let s = setup();
        assert_eq!(s.examples.len(), 6);
        assert!(s.examples[0].context.is_none());
        let ctx = s.examples[1].context.as_ref().unwrap();
        assert_eq!(ctx.appearance.dims(), (1, 4, 4, 24));
        assert_eq!(ctx.motion.dims(), (2, 2, 2, 24));
        assert_eq!(s.examples[1].latent.dims(), (2, 4, 4, 24));
    }

    #[test]
    fn first_step_has_zero_consistency_loss() {
        let mut s = setup();
        let c = cfg();
        let mut opt = OptState::for_adapter(&s.adapter);
        // Clip-0 examples only: the teacher never sees context tokens.
        let report = train_step(
            &s.params,
            &mut s.adapter,
            &s.params,
            &s.examples,
            &[0, 2],
            &s.sched,
            &c,
            &mut opt,
        )
        .unwrap();
        assert_eq!(report.loss_c, 0.0);
        assert_eq!(report.loss, report.loss_d);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_alpha_reports_diffusion_loss() {
        let mut s = setup();
        let c = TrainConfig { alpha: 0.0, ..cfg() };
        let mut opt = OptState::for_adapter(&s.adapter);
        for _ in 0..3 {
            let r = train_step(
                &s.params,
                &mut s.adapter,
                &s.params,
                &s.examples,
                &[1, 3],
                &s.sched,
                &c,
                &mut opt,
            )
            .unwrap();
            assert_eq!(r.loss, r.loss_d);
        }
    }

    #[test]
    fn loss_identity_holds_every_step() {
        let mut s = setup();
        let c = TrainConfig {
            alpha: 0.7,
            steps: 6,
            ..cfg()
        };
        let mut opt = OptState::for_adapter(&s.adapter);
        let base = s.params.clone();
        finetune(
            &base,
            &mut s.adapter,
            &base,
            &s.examples,
            &s.sched,
            &c,
            &mut opt,
            |_, r, _, _| {
                assert_eq!(r.loss, r.loss_d + 0.7 * r.loss_c);
                assert!(r.loss_d >= 0.0 && r.loss_c >= 0.0);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(base, s.params);
    }

    #[test]
    fn fixed_batch_overfits() {
        let mut s = setup();
        let c = TrainConfig {
            learning_rate: 2e-2,
            ..cfg()
        };
        let mut opt = OptState::for_adapter(&s.adapter);
        let mut curve = Vec::new();
        for _ in 0..200 {
            let r = train_step(
                &s.params,
                &mut s.adapter,
                &s.params,
                &s.examples,
                &[0, 1],
                &s.sched,
                &c,
                &mut opt,
            )
            .unwrap();
            curve.push(r.loss_d);
        }
        let head: f64 = curve[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = curve[180..].iter().sum::<f64>() / 20.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn resume_is_bit_exact() {
        let s = setup();
        let c = TrainConfig { steps: 6, ..cfg() };
        let mut straight = s.adapter.clone();
        let mut opt = OptState::for_adapter(&straight);
        finetune(
            &s.params,
            &mut straight,
            &s.params,
            &s.examples,
            &s.sched,
            &c,
            &mut opt,
            |_, _, _, _| Ok(()),
        )
        .unwrap();

        let mut half = s.adapter.clone();
        let mut opt_half = OptState::for_adapter(&half);
        let c3 = TrainConfig { steps: 3, ..c };
        finetune(
            &s.params,
            &mut half,
            &s.params,
            &s.examples,
            &s.sched,
            &c3,
            &mut opt_half,
            |_, _, _, _| Ok(()),
        )
        .unwrap();
        let (mut resumed, mut opt_resumed) = (half.clone(), opt_half.clone());
        finetune(
            &s.params,
            &mut resumed,
            &s.params,
            &s.examples,
            &s.sched,
            &c,
            &mut opt_resumed,
            |_, _, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(resumed, straight);
        assert_eq!(opt_resumed, opt);
    }

    #[test]
    fn pretraining_keeps_mask_columns_zero_and_learns() {
        let mut s = setup();
        let c = TrainConfig {
            steps: 60,
            learning_rate: 1e-2,
            ..cfg()
        };
        let mut opt = OptState::for_params(&s.params);
        let mut curve = Vec::new();
        pretrain(&mut s.params, &s.examples, &s.sched, &c, &mut opt, |_, r, _, _| {
            assert_eq!(r.loss_c, 0.0);
            curve.push(r.loss_d);
            Ok(())
        })
        .unwrap();
        assert!(s.params.mask_columns_zero());
        let head: f64 = curve[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = curve[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn mismatched_schedule_rejected() {
        let mut s = setup();
        let sched = make_schedule(20, 0.01, 0.5).unwrap();
        let mut opt = OptState::for_adapter(&s.adapter);
        let err = train_step(
            &s.params,
            &mut s.adapter,
            &s.params,
            &s.examples,
            &[0],
            &sched,
            &cfg(),
            &mut opt,
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
        let same_length = make_schedule(10, 0.02, 0.5).unwrap();
        let err = train_step(
            &s.params,
            &mut s.adapter,
            &s.params,
            &s.examples,
            &[0],
            &same_length,
            &cfg(),
            &mut opt,
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn probe_scores_generators() {
        let probe = holdout_probe();
        assert_eq!(probe.len(), 12);
        let sampling = |code: ConditionCode| crate::synthkit::SceneSpec {
            shape: crate::synthkit::ShapeKind::from_index(code.shape).unwrap(),
            color_id: code.color,
            background_id: code.background,
            size: 3.5,
            trajectory: crate::synthkit::Trajectory::stationary(10.0, 8.0),
            frames: 4,
            height: 16,
            width: 24,
            jitter: 0.0,
        };
        let perfect =
            evaluate_text_alignment(&probe, 2, 1, |code, seed| Ok(gen_triplet(&sampling(code), seed)?.video)).unwrap();
        assert_eq!((perfect.shape, perfect.color, perfect.background), (1.0, 1.0, 1.0));
        assert_eq!(perfect.samples, 24);

        let fixed = ConditionCode {
            shape: 1,
            color: 1,
            background: 1,
        };
        let ignoring = evaluate_text_alignment(&ConditionCode::all(), 1, 1, |_, seed| {
            Ok(gen_triplet(&sampling(fixed), seed)?.video)
        })
        .unwrap();
        let chance = AlignmentReport::CHANCE;
        assert!((ignoring.shape - chance[0]).abs() < 1e-12);
        assert!((ignoring.color - chance[1]).abs() < 1e-12);
        assert!((ignoring.background - chance[2]).abs() < 1e-12);
    }
}

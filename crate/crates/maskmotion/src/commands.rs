//! The pipelines behind each subcommand, callable in-process.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use maskmotion_core::denoiser::{init_params, Denoiser, LoraAdapter};
use maskmotion_core::longgen::generate_long;
use maskmotion_core::maskeval::{mask_miou, MiouReport};
use maskmotion_core::rng::{self, purpose};
use maskmotion_core::synthkit::{
    combine_masks, edit_mask_affine, gen_triplet, sample_scene, Affine, ConditionCode, Triplet,
};
use maskmotion_core::trainer::{
    draw_batch, examples_from_triplet, pretrain_step, train_step, LossReport, OptState, TrainExample,
};
use maskmotion_core::{MaskSequence, Video};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{self, TrainState};
use crate::report;

/// Renders `data.count` triplets; triplet `i` uses seed `derive(seed, SCENE, i)`.
pub fn generate_triplets(cfg: &RunConfig) -> Result<Vec<Triplet>> {
    let sampling = cfg.sampling();
    (0..cfg.data_count as u64)
        .map(|i| {
            let s = rng::derive(cfg.seed, purpose::SCENE, i);
            Ok(gen_triplet(&sample_scene(&sampling, s)?, s)?)
        })
        .collect()
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<Triplet>> {
    let triplets = generate_triplets(cfg)?;
    formats::save_dataset(out, &triplets)?;
    formats::write_sidecar(out, "gen-data", Some(cfg), &[("samples", triplets.len().to_string())])?;
    Ok(triplets)
}

pub fn training_examples(cfg: &RunConfig, data: &[Triplet]) -> Result<Vec<TrainExample>> {
    if data.is_empty() {
        return Err(CliError::Validation("dataset is empty".into()));
    }
    let pf = cfg.model_patch;
    let mut out = Vec::new();
    for t in data {
        out.extend(examples_from_triplet(t, pf, cfg.clip_frames, cfg.clip_motion_window)?);
    }
    Ok(out)
}

/// Appends metric lines to a log, writing the header when the file is new.
struct MetricsLog {
    file: std::fs::File,
    path: PathBuf,
}

impl MetricsLog {
    fn open(path: &Path, fresh: bool) -> Result<Self> {
        let exists = !fresh && path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(exists)
            .truncate(!exists)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        if !exists {
            writeln!(file, "{}", report::METRICS_HEADER).map_err(|e| CliError::io(path, e))?;
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn line(&mut self, step: u64, r: &LossReport) -> Result<()> {
        writeln!(self.file, "{}", report::metrics_line(step, r)).map_err(|e| CliError::io(&self.path, e))
    }
}

/// Default metrics log next to a checkpoint.
pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".metrics.tsv");
    PathBuf::from(p)
}

/// Intermediate checkpoint written after `step` updates.
pub fn snapshot_path(checkpoint: &Path, step: u64) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(format!(".step{step}"));
    PathBuf::from(p)
}

fn save_state(path: &Path, state: &TrainState, cfg: &RunConfig, command: &str) -> Result<()> {
    formats::save_checkpoint(path, state)?;
    formats::write_sidecar(path, command, Some(cfg), &[("step", state.step().to_string())])
}

/// Full-parameter text-only training of the base model.
pub fn cmd_pretrain(cfg: &RunConfig, data: &[Triplet], out: &Path, resume: Option<TrainState>) -> Result<TrainState> {
    let examples = training_examples(cfg, data)?;
    let sched = cfg.schedule()?;
    let mut state = match resume {
        Some(s) => {
            if s.adapter.is_some() {
                return Err(CliError::Validation(
                    "cannot resume pretraining from an adapter checkpoint".into(),
                ));
            }
            check_arch(cfg, &s)?;
            s
        }
        None => {
            let base = init_params(&cfg.arch()?, cfg.seed)?;
            let opt = OptState::for_params(&base);
            TrainState {
                config_hash: cfg.hash(),
                base,
                adapter: None,
                opt,
            }
        }
    };
    state.config_hash = cfg.hash();
    let tc = cfg.pretrain_config();
    let mut log = MetricsLog::open(&metrics_path(out), state.step() == 0)?;
    while state.opt.step < tc.steps as u64 {
        let step = state.opt.step;
        let batch = draw_batch(examples.len(), tc.batch_size, tc.seed, step);
        let r = pretrain_step(&mut state.base, &examples, &batch, &sched, &tc, &mut state.opt)?;
        log.line(step, &r)?;
        if tc.checkpoint_interval > 0
            && state.step() % tc.checkpoint_interval as u64 == 0
            && state.step() < tc.steps as u64
        {
            save_state(&snapshot_path(out, state.step()), &state, cfg, "pretrain")?;
        }
    }
    save_state(out, &state, cfg, "pretrain")?;
    Ok(state)
}

fn check_arch(cfg: &RunConfig, state: &TrainState) -> Result<()> {
    if state.base.arch != cfg.arch()? {
        return Err(CliError::Validation(format!(
            "checkpoint architecture {:?} does not match config {:?}",
            state.base.arch,
            cfg.arch()?
        )));
    }
    Ok(())
}

/// Adapter fine-tuning over a frozen base, which is also the teacher.
/// `start` is either a base-only checkpoint (fresh run) or an adapter
/// checkpoint to resume from.
pub fn cmd_train(cfg: &RunConfig, data: &[Triplet], start: TrainState, out: &Path) -> Result<TrainState> {
    check_arch(cfg, &start)?;
    let examples = training_examples(cfg, data)?;
    let sched = cfg.schedule()?;
    let mut state = match start.adapter {
        Some(ref ad) => {
            if ad.rank != cfg.lora_rank || ad.scale != cfg.lora_scale {
                return Err(CliError::Validation(format!(
                    "checkpoint adapter (rank {}, scale {}) does not match config (rank {}, scale {})",
                    ad.rank, ad.scale, cfg.lora_rank, cfg.lora_scale
                )));
            }
            start
        }
        None => {
            let adapter = LoraAdapter::new(&start.base.arch, cfg.lora_rank, cfg.lora_scale, cfg.seed)?;
            let opt = OptState::for_adapter(&adapter);
            TrainState {
                config_hash: cfg.hash(),
                base: start.base,
                adapter: Some(adapter),
                opt,
            }
        }
    };
    state.config_hash = cfg.hash();
    let tc = cfg.train_config();
    let mut log = MetricsLog::open(&metrics_path(out), state.step() == 0)?;
    let base = state.base.clone();
    while state.opt.step < tc.steps as u64 {
        let step = state.opt.step;
        let batch = draw_batch(examples.len(), tc.batch_size, tc.seed, step);
        let adapter = state.adapter.as_mut().expect("adapter state");
        let r = train_step(&base, adapter, &base, &examples, &batch, &sched, &tc, &mut state.opt)?;
        log.line(step, &r)?;
        if tc.checkpoint_interval > 0
            && state.step() % tc.checkpoint_interval as u64 == 0
            && state.step() < tc.steps as u64
        {
            save_state(&snapshot_path(out, state.step()), &state, cfg, "train")?;
        }
    }
    save_state(out, &state, cfg, "train")?;
    Ok(state)
}

/// Generates `longgen.clips` clips following `masks`.
pub fn long_video(
    cfg: &RunConfig,
    state: &TrainState,
    masks: MaskSequence,
    code: ConditionCode,
    seed: u64,
) -> Result<Video> {
    check_arch(cfg, state)?;
    let plan = cfg.plan(masks, code, seed);
    let model = Denoiser::new(&state.base, state.adapter.as_ref());
    Ok(generate_long(&plan, model, &cfg.schedule()?)?)
}

pub fn cmd_longgen(
    cfg: &RunConfig,
    state: &TrainState,
    masks: MaskSequence,
    code: ConditionCode,
    out: &Path,
    gif: Option<&Path>,
) -> Result<Video> {
    let video = long_video(cfg, state, masks, code, cfg.seed)?;
    formats::save_video(out, &video)?;
    let code_text = format!("{},{},{}", code.shape, code.color, code.background);
    formats::write_sidecar(
        out,
        "longgen",
        Some(cfg),
        &[
            ("checkpoint_config_hash", crate::config::hex(&state.config_hash)),
            ("checkpoint_step", state.step().to_string()),
            ("code", code_text),
        ],
    )?;
    if let Some(g) = gif {
        crate::gif_export::export_gif(&video, g, 4)?;
    }
    Ok(video)
}

pub fn cmd_eval(videos: &[Video], gt: &[MaskSequence], out: &Path, cfg: Option<&RunConfig>) -> Result<MiouReport> {
    let r = mask_miou(videos, gt)?;
    formats::atomic_write(out, report::eval_report(&r).as_bytes())?;
    formats::write_sidecar(out, "eval", cfg, &[("videos", videos.len().to_string())])?;
    Ok(r)
}

/// Parses `sx,sy,tx,ty` transforms separated by `;`. A single transform is
/// applied to every frame.
pub fn parse_transforms(spec: &str, frames: usize) -> Result<Vec<Affine>> {
    let parsed: Vec<Affine> = spec
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let v: Vec<f64> = item
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CliError::Validation(format!("bad transform {item:?}")))?;
            match v[..] {
                [sx, sy, tx, ty] if v.iter().all(|x| x.is_finite()) => Ok(Affine { sx, sy, tx, ty }),
                _ => Err(CliError::Validation(format!(
                    "transform {item:?} needs four finite numbers sx,sy,tx,ty"
                ))),
            }
        })
        .collect::<Result<_>>()?;
    match parsed.len() {
        1 => Ok(vec![parsed[0]; frames]),
        n if n == frames => Ok(parsed),
        n => Err(CliError::Validation(format!("{n} transforms for {frames} frames"))),
    }
}

fn show_transforms(t: &[Affine]) -> String {
    t.iter()
        .map(|a| format!("{:?},{:?},{:?},{:?}", a.sx, a.sy, a.tx, a.ty))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn cmd_edit_mask(input: &Path, spec: &str, out: &Path) -> Result<MaskSequence> {
    let masks = formats::load_mask(input)?;
    let transforms = parse_transforms(spec, masks.frames)?;
    let edited = edit_mask_affine(&masks, &transforms)?;
    formats::save_mask(out, &edited)?;
    formats::write_sidecar(
        out,
        "edit-mask",
        None,
        &[
            ("input", input.display().to_string()),
            ("transforms", show_transforms(&transforms)),
        ],
    )?;
    Ok(edited)
}

pub fn cmd_combine_mask(inputs: &[PathBuf], out: &Path) -> Result<MaskSequence> {
    let (first, rest) = inputs
        .split_first()
        .ok_or_else(|| CliError::Validation("combine-mask needs at least one input".into()))?;
    let mut acc = formats::load_mask(first)?;
    for p in rest {
        acc = combine_masks(&acc, &formats::load_mask(p)?)?;
    }
    formats::save_mask(out, &acc)?;
    let names = inputs
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",");
    formats::write_sidecar(out, "combine-mask", None, &[("inputs", names)])?;
    Ok(acc)
}

/// Writes the mask sequence of dataset sample `index`, recording its code.
pub fn cmd_export_mask(data: &[Triplet], index: usize, out: &Path) -> Result<Triplet> {
    let t = data
        .get(index)
        .ok_or_else(|| CliError::Validation(format!("sample {index} out of range (dataset has {})", data.len())))?;
    formats::save_mask(out, &t.masks)?;
    let c = t.cond;
    formats::write_sidecar(
        out,
        "export-mask",
        None,
        &[
            ("index", index.to_string()),
            ("code", format!("{},{},{}", c.shape, c.color, c.background)),
        ],
    )?;
    Ok(t.clone())
}

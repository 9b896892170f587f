use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maskmotion::commands;
use maskmotion::config::RunConfig;
use maskmotion::error::{CliError, Result};
use maskmotion::formats;
use maskmotion_core::synthkit::ConditionCode;

#[derive(Parser)]
#[command(name = "maskmotion", version, about = "Mask-guided synthetic video diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut extra = self.set.join("\n");
        if let Some(s) = self.seed {
            extra.push_str(&format!("\nseed = {s}"));
        }
        cfg.apply(&extra)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset of synthetic triplets.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base model on the text-only objective.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a low-rank adapter with mask conditioning.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained base checkpoint.
        #[arg(long, required_unless_present = "resume")]
        base: Option<PathBuf>,
        /// Continue from an adapter checkpoint instead.
        #[arg(long, conflicts_with = "base")]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a multi-clip video following a mask sequence.
    Longgen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mask file covering every clip.
        #[arg(long)]
        masks: PathBuf,
        /// Condition code as shape,color,background.
        #[arg(long)]
        code: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write an animated GIF preview.
        #[arg(long)]
        gif: Option<PathBuf>,
    },
    /// Score generated videos against ground-truth masks.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Generated video, once per sample.
        #[arg(long = "video", required = true)]
        videos: Vec<PathBuf>,
        /// Ground-truth mask, paired in order with --video.
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply per-frame scale and translation to a mask sequence.
    EditMask {
        #[arg(long)]
        input: PathBuf,
        /// `sx,sy,tx,ty` for all frames, or one per frame separated by `;`.
        #[arg(long)]
        transform: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Union of two or more mask sequences.
    CombineMask {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the mask sequence of one dataset sample.
    ExportMask {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_code(s: &str) -> Result<ConditionCode> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Validation(format!("bad code {s:?}")))?;
    let code = match v[..] {
        [shape, color, background] => ConditionCode {
            shape,
            color,
            background,
        },
        _ => return Err(CliError::Validation(format!("code {s:?} needs shape,color,background"))),
    };
    code.validate()?;
    Ok(code)
}

fn load_state(p: &Path) -> Result<formats::TrainState> {
    formats::load_checkpoint(p)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = common.load()?;
            let t = commands::cmd_gen_data(&cfg, &out)?;
            eprintln!("wrote {} triplets to {}", t.len(), out.display());
        }
        Command::Pretrain {
            common,
            data,
            out,
            resume,
        } => {
            let cfg = common.load()?;
            let data = formats::load_dataset(&data)?;
            let resume = resume.as_deref().map(load_state).transpose()?;
            let s = commands::cmd_pretrain(&cfg, &data, &out, resume)?;
            eprintln!("pretrained to step {} -> {}", s.step(), out.display());
        }
        Command::Train {
            common,
            data,
            base,
            resume,
            out,
        } => {
            let cfg = common.load()?;
            let data = formats::load_dataset(&data)?;
            let start = match (base, resume) {
                (_, Some(r)) => {
                    let s = load_state(&r)?;
                    if s.adapter.is_none() {
                        return Err(CliError::Validation(format!(
                            "{} holds no adapter to resume",
                            r.display()
                        )));
                    }
                    s
                }
                (Some(b), None) => {
                    let mut s = load_state(&b)?;
                    s.adapter = None;
                    s
                }
                (None, None) => unreachable!("clap requires --base or --resume"),
            };
            let s = commands::cmd_train(&cfg, &data, start, &out)?;
            eprintln!("trained to step {} -> {}", s.step(), out.display());
        }
        Command::Longgen {
            common,
            checkpoint,
            masks,
            code,
            out,
            gif,
        } => {
            let cfg = common.load()?;
            let state = load_state(&checkpoint)?;
            let masks = formats::load_mask(&masks)?;
            let v = commands::cmd_longgen(&cfg, &state, masks, parse_code(&code)?, &out, gif.as_deref())?;
            eprintln!("wrote {} frames to {}", v.frames, out.display());
        }
        Command::Eval {
            common,
            videos,
            masks,
            out,
        } => {
            let cfg = common.load()?;
            if videos.len() != masks.len() {
                return Err(CliError::Validation(format!(
                    "{} videos but {} mask files",
                    videos.len(),
                    masks.len()
                )));
            }
            let v = videos
                .iter()
                .map(|p| formats::load_video(p))
                .collect::<Result<Vec<_>>>()?;
            let m = masks
                .iter()
                .map(|p| formats::load_mask(p))
                .collect::<Result<Vec<_>>>()?;
            let r = commands::cmd_eval(&v, &m, &out, Some(&cfg))?;
            println!("S_m={:.6}", r.s_m);
        }
        Command::EditMask { input, transform, out } => {
            commands::cmd_edit_mask(&input, &transform, &out)?;
        }
        Command::CombineMask { inputs, out } => {
            commands::cmd_combine_mask(&inputs, &out)?;
        }
        Command::ExportMask { data, index, out } => {
            let t = commands::cmd_export_mask(&formats::load_dataset(&data)?, index, &out)?;
            println!("{},{},{}", t.cond.shape, t.cond.color, t.cond.background);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maskmotion::formats;
use maskmotion::report::{parse_eval_report, parse_metrics, EVAL_HEADER};
use maskmotion_core::MaskSequence;

const CONFIG: &str = "\
# small end-to-end setup
scene.frames = 12
scene.height = 16
scene.width = 16
data.count = 4
clip.frames = 4
clip.motion_window = 4
longgen.clips = 3
model.width = 12
model.blocks = 1
model.mlp_hidden = 16
schedule.steps = 6
schedule.beta_min = 0.05
schedule.beta_max = 0.5
lora.rank = 2
pretrain.steps = 6
pretrain.batch_size = 2
pretrain.warmup = 2
train.steps = 6
train.batch_size = 2
train.checkpoint_interval = 3
";

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(w.path("run.cfg"), CONFIG).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cfg(&self) -> String {
        self.path("run.cfg").display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_maskmotion"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    }

    fn code(&self, args: &[&str]) -> (i32, String) {
        let o = self.run(args);
        (
            o.status.code().unwrap(),
            String::from_utf8_lossy(&o.stderr).into_owned(),
        )
    }

    fn gen_data(&self, name: &str, seed: &str) -> PathBuf {
        let cfg = self.cfg();
        self.ok(&["gen-data", "--config", &cfg, "--seed", seed, "--out", name]);
        self.path(name)
    }

    fn pretrained(&self) -> PathBuf {
        let cfg = self.cfg();
        self.gen_data("data.mvtr", "1");
        self.ok(&[
            "pretrain",
            "--config",
            &cfg,
            "--data",
            "data.mvtr",
            "--out",
            "base.mvck",
        ]);
        self.path("base.mvck")
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

fn sidecar(p: &Path) -> String {
    fs::read_to_string(formats::sidecar_path(p)).unwrap()
}

#[test]
fn gen_data_is_reproducible_per_seed() {
    let w = Work::new();
    let a = w.gen_data("a.mvtr", "1");
    let b = w.gen_data("b.mvtr", "1");
    let c = w.gen_data("c.mvtr", "2");
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(formats::load_dataset(&a).unwrap().len(), 4);
    assert!(sidecar(&a).contains("config_hash = "));
    assert_ne!(sidecar(&a), sidecar(&c), "seed must change the config hash");
}

#[test]
fn validation_errors_exit_with_two() {
    let w = Work::new();
    let cfg = w.cfg();
    for args in [
        vec!["gen-data", "--config", &cfg, "--set", "nope=1", "--out", "x"],
        vec!["gen-data", "--config", &cfg, "--set", "model.width=7", "--out", "x"],
        vec!["gen-data", "--out"],
        vec!["frobnicate"],
    ] {
        let (code, err) = w.code(&args);
        assert_eq!(code, 2, "{args:?}: {err}");
    }
    assert!(!w.path("x").exists());
}

#[test]
fn runtime_errors_exit_with_one_and_name_the_offset() {
    let w = Work::new();
    let cfg = w.cfg();
    let (code, _) = w.code(&["pretrain", "--config", &cfg, "--data", "missing.mvtr", "--out", "m"]);
    assert_eq!(code, 1);
    let data = w.gen_data("data.mvtr", "1");
    let bytes = read(&data);
    fs::write(w.path("cut.mvtr"), &bytes[..bytes.len() / 2]).unwrap();
    let (code, err) = w.code(&["export-mask", "--data", "cut.mvtr", "--index", "0", "--out", "m"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("offset"), "{err}");
}

#[test]
fn training_resumes_to_identical_checkpoints() {
    let w = Work::new();
    let cfg = w.cfg();
    let base = w.pretrained();
    let metrics = fs::read_to_string(w.path("base.mvck.metrics.tsv")).unwrap();
    assert_eq!(parse_metrics(&metrics).unwrap().len(), 6);
    assert!(sidecar(&base).contains("step = 6"));

    // Pretraining: snapshot at step 3, then resume to the end.
    assert!(w.path("base.mvck.step3").exists());
    w.ok(&[
        "pretrain",
        "--config",
        &cfg,
        "--data",
        "data.mvtr",
        "--resume",
        "base.mvck.step3",
        "--out",
        "base2.mvck",
    ]);
    assert_eq!(read(&base), read(&w.path("base2.mvck")));

    w.ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        "data.mvtr",
        "--base",
        "base.mvck",
        "--out",
        "ad.mvck",
    ]);
    w.ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        "data.mvtr",
        "--resume",
        "ad.mvck.step3",
        "--out",
        "ad2.mvck",
    ]);
    assert_eq!(read(&w.path("ad.mvck")), read(&w.path("ad2.mvck")));
    let state = formats::load_checkpoint(&w.path("ad.mvck")).unwrap();
    assert!(state.adapter.is_some());
    assert_eq!(state.step(), 6);

    // An adapter checkpoint cannot seed pretraining, and a base cannot be resumed as an adapter.
    let (code, _) = w.code(&[
        "pretrain",
        "--config",
        &cfg,
        "--data",
        "data.mvtr",
        "--resume",
        "ad.mvck",
        "--out",
        "z",
    ]);
    assert_eq!(code, 2);
    let (code, _) = w.code(&[
        "train",
        "--config",
        &cfg,
        "--data",
        "data.mvtr",
        "--resume",
        "base.mvck",
        "--out",
        "z",
    ]);
    assert_eq!(code, 2);
    // Architecture mismatch against the checkpoint.
    let (code, _) = w.code(&[
        "train",
        "--config",
        &cfg,
        "--set",
        "model.width=18",
        "--data",
        "data.mvtr",
        "--base",
        "base.mvck",
        "--out",
        "z",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn longgen_eval_and_mask_tools() {
    let w = Work::new();
    let cfg = w.cfg();
    w.pretrained();
    let out = w.ok(&["export-mask", "--data", "data.mvtr", "--index", "0", "--out", "m.mvmk"]);
    let code = String::from_utf8(out.stdout).unwrap().trim().to_string();
    let masks = formats::load_mask(&w.path("m.mvmk")).unwrap();
    assert_eq!(masks.frames, 12);

    w.ok(&[
        "longgen",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--checkpoint",
        "base.mvck",
        "--masks",
        "m.mvmk",
        "--code",
        &code,
        "--out",
        "v.mvrv",
        "--gif",
        "v.gif",
    ]);
    let video = formats::load_video(&w.path("v.mvrv")).unwrap();
    assert_eq!(video.dims(), (12, 16, 16));
    assert!(read(&w.path("v.gif")).starts_with(b"GIF89a"));
    let meta = sidecar(&w.path("v.mvrv"));
    assert!(meta.contains(&format!("code = {code}")), "{meta}");
    assert!(meta.contains("checkpoint_step = 6"), "{meta}");
    w.ok(&[
        "longgen",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--checkpoint",
        "base.mvck",
        "--masks",
        "m.mvmk",
        "--code",
        &code,
        "--out",
        "v2.mvrv",
    ]);
    assert_eq!(read(&w.path("v.mvrv")), read(&w.path("v2.mvrv")));

    // Too few mask frames for three clips.
    formats::save_mask(&w.path("short.mvmk"), &MaskSequence::zeros(8, 16, 16)).unwrap();
    let (c, err) = w.code(&[
        "longgen",
        "--config",
        &cfg,
        "--checkpoint",
        "base.mvck",
        "--masks",
        "short.mvmk",
        "--code",
        &code,
        "--out",
        "s",
    ]);
    assert_eq!(c, 2, "{err}");
    let (c, _) = w.code(&[
        "longgen",
        "--config",
        &cfg,
        "--checkpoint",
        "base.mvck",
        "--masks",
        "m.mvmk",
        "--code",
        "99,0,0",
        "--out",
        "s",
    ]);
    assert_eq!(c, 2);

    // Eval: per-frame rows re-aggregate to the footer.
    let out = w.ok(&[
        "eval", "--config", &cfg, "--video", "v.mvrv", "--mask", "m.mvmk", "--video", "v.mvrv", "--mask", "m.mvmk",
        "--out", "r.tsv",
    ]);
    let text = fs::read_to_string(w.path("r.tsv")).unwrap();
    assert_eq!(text.lines().next(), Some(EVAL_HEADER));
    let (rows, s_m) = parse_eval_report(&text).unwrap();
    assert_eq!(rows.len(), 24);
    let mean = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    assert!((mean - s_m).abs() < 1e-6, "{mean} vs {s_m}");
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("S_m="));
    let (c, _) = w.code(&[
        "eval", "--video", "v.mvrv", "--mask", "m.mvmk", "--mask", "m.mvmk", "--out", "r2",
    ]);
    assert_eq!(c, 2);

    // Identity edit keeps the payload; the sidecar echoes the transform.
    w.ok(&[
        "edit-mask",
        "--input",
        "m.mvmk",
        "--transform",
        "1,1,0,0",
        "--out",
        "id.mvmk",
    ]);
    assert_eq!(read(&w.path("m.mvmk")), read(&w.path("id.mvmk")));
    assert!(sidecar(&w.path("id.mvmk")).contains("transforms = 1.0,1.0,0.0,0.0"));
    let mut square = MaskSequence::zeros(12, 16, 16);
    for f in 0..12 {
        for y in 6..10 {
            for x in 6..10 {
                square.set(f, y, x, 1);
            }
        }
    }
    formats::save_mask(&w.path("sq.mvmk"), &square).unwrap();
    w.ok(&[
        "edit-mask",
        "--input",
        "sq.mvmk",
        "--transform",
        "1,1,3,-2",
        "--out",
        "moved.mvmk",
    ]);
    let moved = formats::load_mask(&w.path("moved.mvmk")).unwrap();
    assert_eq!(moved.get(0, 4, 9), 1);
    assert_eq!(moved.get(0, 6, 6), 0);
    let (c, _) = w.code(&[
        "edit-mask",
        "--input",
        "sq.mvmk",
        "--transform",
        "1,1,30,0",
        "--out",
        "bad",
    ]);
    assert_ne!(c, 0);
    let (c, _) = w.code(&[
        "edit-mask",
        "--input",
        "m.mvmk",
        "--transform",
        "1,1,0;2,2",
        "--out",
        "bad",
    ]);
    assert_eq!(c, 2);

    // Union with an empty mask leaves the input unchanged.
    formats::save_mask(&w.path("empty.mvmk"), &MaskSequence::zeros(12, 16, 16)).unwrap();
    w.ok(&[
        "combine-mask",
        "--input",
        "m.mvmk",
        "--input",
        "empty.mvmk",
        "--out",
        "u.mvmk",
    ]);
    assert_eq!(read(&w.path("m.mvmk")), read(&w.path("u.mvmk")));
    w.ok(&[
        "combine-mask",
        "--input",
        "sq.mvmk",
        "--input",
        "moved.mvmk",
        "--out",
        "u2.mvmk",
    ]);
    let u = formats::load_mask(&w.path("u2.mvmk")).unwrap();
    let ones = |m: &MaskSequence| m.data.iter().filter(|&&v| v == 1).count();
    assert_eq!(ones(&u), 12 * (16 + 16 - 2));
    let (c, _) = w.code(&[
        "combine-mask",
        "--input",
        "m.mvmk",
        "--input",
        "short.mvmk",
        "--out",
        "bad",
    ]);
    assert_eq!(c, 2);
}

//! Little-endian binary containers and text sidecars.
//!
//! | magic  | contents                                                        |
//! |--------|-----------------------------------------------------------------|
//! | `MVTR` | dataset of triplets: dims, condition code, f32 video, u8 mask   |
//! | `MVCK` | checkpoint: table of named f64 tensors                          |
//! | `MVMK` | one mask sequence                                               |
//! | `MVRV` | one raw f32 video                                               |
//!
//! Every file carries a `u32` version after the magic. Writes go to a
//! temporary sibling first and are renamed into place.

use std::path::{Path, PathBuf};

use maskmotion_core::denoiser::{ArchConfig, DenoiserParams, LoraAdapter, Tensor};
use maskmotion_core::synthkit::{ConditionCode, Triplet};
use maskmotion_core::trainer::OptState;
use maskmotion_core::{MaskSequence, Video};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const VERSION: u32 = 1;
pub const DATASET_MAGIC: &[u8; 4] = b"MVTR";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MVCK";
pub const MASK_MAGIC: &[u8; 4] = b"MVMK";
pub const VIDEO_MAGIC: &[u8; 4] = b"MVRV";

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Path of the provenance sidecar of `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

/// Writes `command`, the config hash, `extra` lines and the effective config
/// next to `path`.
pub fn write_sidecar(path: &Path, command: &str, cfg: Option<&RunConfig>, extra: &[(&str, String)]) -> Result<()> {
    let mut text = format!("command = {command}\n");
    if let Some(cfg) = cfg {
        text.push_str(&format!("config_hash = {}\n", cfg.hash_hex()));
    }
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    if let Some(cfg) = cfg {
        text.push_str("\n[config]\n");
        text.push_str(&cfg.effective());
    }
    atomic_write(&sidecar_path(path), text.as_bytes())
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(VERSION);
        w
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: usize, what: &str) -> Result<()> {
        let v = u16::try_from(v).map_err(|_| CliError::Validation(format!("{what} = {v} does not fit in 16 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.0.extend(v.iter().flat_map(|x| x.to_le_bytes()));
    }
    fn f64s(&mut self, v: &[f64]) {
        self.0.extend(v.iter().flat_map(|x| x.to_le_bytes()));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path, magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0, path };
        if r.take(4, "magic")? != magic {
            return Err(r.fail(0, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(4, format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn fail(&self, offset: usize, msg: String) -> CliError {
        CliError::Format {
            path: self.path.to_path_buf(),
            offset,
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            )),
        }
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()) as usize)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(self.pos, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
    fn dims3(&mut self) -> Result<(usize, usize, usize)> {
        Ok((self.u16("frames")?, self.u16("height")?, self.u16("width")?))
    }
    fn video(&mut self, dims: (usize, usize, usize)) -> Result<Video> {
        let at = self.pos;
        let data = self.f32s(dims.0 * dims.1 * dims.2 * 3, "video payload")?;
        let video = Video::from_data(dims.0, dims.1, dims.2, data).map_err(|e| self.fail(at, e.to_string()))?;
        if !video.is_valid() {
            return Err(self.fail(at, "video values outside [0, 1]".into()));
        }
        Ok(video)
    }
    fn mask(&mut self, dims: (usize, usize, usize)) -> Result<MaskSequence> {
        let at = self.pos;
        let data = self.take(dims.0 * dims.1 * dims.2, "mask payload")?.to_vec();
        MaskSequence::from_data(dims.0, dims.1, dims.2, data).map_err(|e| self.fail(at, e.to_string()))
    }
}

impl Writer {
    fn dims3(&mut self, (f, h, w): (usize, usize, usize)) -> Result<()> {
        self.u16(f, "frames")?;
        self.u16(h, "height")?;
        self.u16(w, "width")
    }
}

// ---------------------------------------------------------------- dataset

pub fn encode_dataset(triplets: &[Triplet]) -> Result<Vec<u8>> {
    let mut w = Writer::header(DATASET_MAGIC);
    let n = u32::try_from(triplets.len()).map_err(|_| CliError::Validation("too many samples".into()))?;
    w.u32(n);
    for t in triplets {
        if t.video.dims() != t.masks.dims() {
            return Err(CliError::Validation(format!(
                "video {:?} and masks {:?} differ in shape",
                t.video.dims(),
                t.masks.dims()
            )));
        }
        w.dims3(t.video.dims())?;
        for (v, what) in t.cond.fields().into_iter().zip(["shape", "color", "background"]) {
            w.u16(v, what)?;
        }
        w.f32s(&t.video.data);
        w.0.extend_from_slice(&t.masks.data);
    }
    Ok(w.0)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Vec<Triplet>> {
    let mut r = Reader::new(bytes, path, DATASET_MAGIC)?;
    let n = r.u32("sample count")? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let dims = r.dims3()?;
        let at = r.pos;
        let cond = ConditionCode {
            shape: r.u16("shape")?,
            color: r.u16("color")?,
            background: r.u16("background")?,
        };
        cond.validate().map_err(|e| r.fail(at, e.to_string()))?;
        let video = r.video(dims)?;
        let masks = r.mask(dims)?;
        out.push(Triplet { video, cond, masks });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_dataset(path: &Path, triplets: &[Triplet]) -> Result<()> {
    atomic_write(path, &encode_dataset(triplets)?)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Triplet>> {
    decode_dataset(&read(path)?, path)
}

// ---------------------------------------------------------------- masks and videos

pub fn encode_mask(masks: &MaskSequence) -> Result<Vec<u8>> {
    let mut w = Writer::header(MASK_MAGIC);
    w.dims3(masks.dims())?;
    w.0.extend_from_slice(&masks.data);
    Ok(w.0)
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<MaskSequence> {
    let mut r = Reader::new(bytes, path, MASK_MAGIC)?;
    let dims = r.dims3()?;
    let m = r.mask(dims)?;
    r.finish()?;
    Ok(m)
}

pub fn save_mask(path: &Path, masks: &MaskSequence) -> Result<()> {
    atomic_write(path, &encode_mask(masks)?)
}

pub fn load_mask(path: &Path) -> Result<MaskSequence> {
    decode_mask(&read(path)?, path)
}

pub fn encode_video(video: &Video) -> Result<Vec<u8>> {
    let mut w = Writer::header(VIDEO_MAGIC);
    w.dims3(video.dims())?;
    w.f32s(&video.data);
    Ok(w.0)
}

pub fn decode_video(bytes: &[u8], path: &Path) -> Result<Video> {
    let mut r = Reader::new(bytes, path, VIDEO_MAGIC)?;
    let dims = r.dims3()?;
    let v = r.video(dims)?;
    r.finish()?;
    Ok(v)
}

pub fn save_video(path: &Path, video: &Video) -> Result<()> {
    atomic_write(path, &encode_video(video)?)
}

pub fn load_video(path: &Path) -> Result<Video> {
    decode_video(&read(path)?, path)
}

// ---------------------------------------------------------------- checkpoints

/// Ordered table of named tensors; the on-disk checkpoint layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorTable {
    pub entries: Vec<(String, Tensor)>,
}

impl TensorTable {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::header(CHECKPOINT_MAGIC);
        let n = u32::try_from(self.entries.len()).map_err(|_| CliError::Validation("too many tensors".into()))?;
        w.u32(n);
        for (name, t) in &self.entries {
            w.u16(name.len(), "tensor name length")?;
            w.0.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.dims.len()).map_err(|_| CliError::Validation(format!("rank of {name}")))?;
            w.u8(rank);
            for &d in &t.dims {
                let d = u32::try_from(d).map_err(|_| CliError::Validation(format!("dimension of {name}")))?;
                w.u32(d);
            }
            w.f64s(&t.data);
        }
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path, CHECKPOINT_MAGIC)?;
        let n = r.u32("tensor count")?;
        let mut table = TensorTable::default();
        for _ in 0..n {
            let at = r.pos;
            let len = r.u16("tensor name length")?;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| r.fail(at, "tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8("rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let count = count.ok_or_else(|| r.fail(at, format!("{name}: element count overflows")))?;
            let data = r.f64s(count, &name)?;
            table.push(name, Tensor { dims, data });
        }
        r.finish()?;
        Ok(table)
    }
}

/// Everything needed to resume or deploy a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config_hash: [u8; 32],
    pub base: DenoiserParams,
    /// Present for fine-tuning runs; the optimizer then tracks the adapter.
    pub adapter: Option<LoraAdapter>,
    pub opt: OptState,
}

fn scalar(v: f64) -> Tensor {
    Tensor {
        dims: vec![],
        data: vec![v],
    }
}

fn vector(v: Vec<f64>) -> Tensor {
    Tensor {
        dims: vec![v.len()],
        data: v,
    }
}

impl TrainState {
    pub fn step(&self) -> u64 {
        self.opt.step
    }

    pub fn to_table(&self) -> TensorTable {
        let a = &self.base.arch;
        let mut t = TensorTable::default();
        t.push(
            "meta.config_hash",
            vector(self.config_hash.iter().map(|&b| b as f64).collect()),
        );
        t.push("meta.step", scalar(self.opt.step as f64));
        let mut arch = vec![
            a.patch.t,
            a.patch.h,
            a.patch.w,
            a.width,
            a.blocks,
            a.mlp_hidden,
            a.steps,
        ]
        .into_iter()
        .map(|v| v as f64)
        .collect::<Vec<_>>();
        arch.extend([a.beta_min, a.beta_max]);
        arch.extend(a.code_sizes.iter().map(|&v| v as f64));
        t.push("meta.arch", vector(arch));
        for (name, p) in self.base.tensors() {
            t.push(format!("base.{name}"), p.clone());
        }
        let trainable: Vec<(String, &Tensor)> = match &self.adapter {
            Some(ad) => {
                t.push("meta.lora", vector(vec![ad.rank as f64, ad.scale]));
                for (name, p) in ad.tensors() {
                    t.push(format!("adapter.{name}"), p.clone());
                }
                ad.tensors()
            }
            None => self.base.tensors(),
        };
        for (((name, p), m), v) in trainable.iter().zip(&self.opt.m).zip(&self.opt.v) {
            t.push(
                format!("opt.m.{name}"),
                Tensor {
                    dims: p.dims.clone(),
                    data: m.clone(),
                },
            );
            t.push(
                format!("opt.v.{name}"),
                Tensor {
                    dims: p.dims.clone(),
                    data: v.clone(),
                },
            );
        }
        t
    }

    pub fn from_table(table: &TensorTable, path: &Path) -> Result<Self> {
        let bad = |msg: String| CliError::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg,
        };
        let get = |name: &str| table.get(name).ok_or_else(|| bad(format!("missing tensor {name}")));
        let int = |v: f64, what: &str| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(bad(format!("{what} = {v} is not a count")))
            }
        };

        let hash = get("meta.config_hash")?;
        if hash.data.len() != 32 {
            return Err(bad("config hash must have 32 bytes".into()));
        }
        let mut config_hash = [0u8; 32];
        for (o, &v) in config_hash.iter_mut().zip(&hash.data) {
            *o = int(v, "hash byte")?
                .try_into()
                .map_err(|_| bad("hash byte > 255".into()))?;
        }
        let step = int(get("meta.step")?.data[0], "step")? as u64;
        let a = &get("meta.arch")?.data;
        if a.len() != 12 {
            return Err(bad(format!("meta.arch has {} entries, expected 12", a.len())));
        }
        let patch = maskmotion_core::codec::PatchFactors {
            t: int(a[0], "patch")?,
            h: int(a[1], "patch")?,
            w: int(a[2], "patch")?,
        };
        let arch = ArchConfig {
            patch,
            latent_channels: patch.channels(),
            width: int(a[3], "width")?,
            blocks: int(a[4], "blocks")?,
            mlp_hidden: int(a[5], "mlp_hidden")?,
            steps: int(a[6], "steps")?,
            beta_min: a[7],
            beta_max: a[8],
            code_sizes: [
                int(a[9], "code size")?,
                int(a[10], "code size")?,
                int(a[11], "code size")?,
            ],
        };
        arch.validate()?;

        let fill = |dst: Vec<(String, &mut Tensor)>, prefix: &str| -> Result<()> {
            for (name, p) in dst {
                let key = format!("{prefix}{name}");
                let src = get(&key)?;
                if src.dims != p.dims {
                    return Err(bad(format!("{key}: dims {:?}, expected {:?}", src.dims, p.dims)));
                }
                p.data.clone_from(&src.data);
            }
            Ok(())
        };
        let mut base = DenoiserParams::zeros(&arch);
        fill(base.tensors_mut(), "base.")?;
        let adapter = match table.get("meta.lora") {
            Some(l) if l.data.len() == 2 => {
                let mut ad = LoraAdapter::new(&arch, int(l.data[0], "lora rank")?, l.data[1], 0)?;
                fill(ad.tensors_mut(), "adapter.")?;
                Some(ad)
            }
            Some(_) => return Err(bad("meta.lora must hold rank and scale".into())),
            None => None,
        };
        let names: Vec<String> = match &adapter {
            Some(ad) => ad.tensors().into_iter().map(|(n, _)| n).collect(),
            None => base.tensors().into_iter().map(|(n, _)| n).collect(),
        };
        let mut opt = match &adapter {
            Some(ad) => OptState::for_adapter(ad),
            None => OptState::for_params(&base),
        };
        opt.step = step;
        for ((name, m), v) in names.iter().zip(opt.m.iter_mut()).zip(opt.v.iter_mut()) {
            for (slot, kind) in [(m, "m"), (v, "v")] {
                let key = format!("opt.{kind}.{name}");
                let src = get(&key)?;
                if src.data.len() != slot.len() {
                    return Err(bad(format!(
                        "{key}: {} values, expected {}",
                        src.data.len(),
                        slot.len()
                    )));
                }
                slot.clone_from(&src.data);
            }
        }
        let known =
            3 + base.tensors().len() + adapter.as_ref().map_or(0, |ad| 1 + ad.tensors().len()) + 2 * names.len();
        if table.entries.len() != known {
            return Err(bad(format!("{} tensors, expected {known}", table.entries.len())));
        }
        Ok(TrainState {
            config_hash,
            base,
            adapter,
            opt,
        })
    }
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    atomic_write(path, &state.to_table().encode()?)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let table = TensorTable::decode(&read(path)?, path)?;
    TrainState::from_table(&table, path)
}

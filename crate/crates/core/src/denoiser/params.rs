use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ArchConfig;
use crate::rng::{self, purpose};
use crate::Result;

/// Dense parameter tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.dims)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn rc(&self) -> (usize, usize) {
        (self.dims[0], self.dims[1])
    }

    fn normal(dims: &[usize], std: f64, seed: u64) -> Self {
        let mut t = Self::zeros(dims);
        rng::fill_normal(&mut rng::stream(seed), &mut t.data, std);
        t
    }
}

/// One of the weight matrices that low-rank adapters attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatrixId {
    InputProj,
    Query(usize),
    Key(usize),
    Value(usize),
    AttnOut(usize),
    MlpUp(usize),
    MlpDown(usize),
    OutputProj,
}

impl MatrixId {
    pub fn name(&self) -> String {
        match *self {
            MatrixId::InputProj => "w_in".into(),
            MatrixId::Query(b) => format!("blocks.{b}.wq"),
            MatrixId::Key(b) => format!("blocks.{b}.wk"),
            MatrixId::Value(b) => format!("blocks.{b}.wv"),
            MatrixId::AttnOut(b) => format!("blocks.{b}.wo"),
            MatrixId::MlpUp(b) => format!("blocks.{b}.w1"),
            MatrixId::MlpDown(b) => format!("blocks.{b}.w2"),
            MatrixId::OutputProj => "w_out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Base weights of the noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub arch: ArchConfig,
    /// `width × 2C'`; columns `C'..2C'` read the mask features.
    pub w_in: Tensor,
    pub b_in: Tensor,
    /// Rows: noisy, appearance, motion.
    pub type_emb: Tensor,
    /// One row per diffusion step `t = 1..=T`.
    pub time_emb: Tensor,
    /// Shape, color and background tables.
    pub code_emb: [Tensor; 3],
    pub blocks: Vec<Block>,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

pub(crate) const CODE_FIELDS: [&str; 3] = ["shape", "color", "background"];

impl DenoiserParams {
    /// All-zero parameters of the given architecture.
    pub fn zeros(arch: &ArchConfig) -> Self {
        let (w, c, hid) = (arch.width, arch.latent_channels, arch.mlp_hidden);
        let block = Block {
            wq: Tensor::zeros(&[w, w]),
            wk: Tensor::zeros(&[w, w]),
            wv: Tensor::zeros(&[w, w]),
            wo: Tensor::zeros(&[w, w]),
            w1: Tensor::zeros(&[hid, w]),
            b1: Tensor::zeros(&[hid]),
            w2: Tensor::zeros(&[w, hid]),
            b2: Tensor::zeros(&[w]),
        };
        Self {
            arch: *arch,
            w_in: Tensor::zeros(&[w, 2 * c]),
            b_in: Tensor::zeros(&[w]),
            type_emb: Tensor::zeros(&[3, w]),
            time_emb: Tensor::zeros(&[arch.steps, w]),
            code_emb: [
                Tensor::zeros(&[arch.code_sizes[0], w]),
                Tensor::zeros(&[arch.code_sizes[1], w]),
                Tensor::zeros(&[arch.code_sizes[2], w]),
            ],
            blocks: vec![block; arch.blocks],
            w_out: Tensor::zeros(&[c, w]),
            b_out: Tensor::zeros(&[c]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch)
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("w_in".into(), &self.w_in),
            ("b_in".into(), &self.b_in),
            ("type_emb".into(), &self.type_emb),
            ("time_emb".into(), &self.time_emb),
        ];
        for (name, t) in CODE_FIELDS.iter().zip(&self.code_emb) {
            out.push((format!("code_emb.{name}"), t));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, t) in [
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("w_in".into(), &mut self.w_in),
            ("b_in".into(), &mut self.b_in),
            ("type_emb".into(), &mut self.type_emb),
            ("time_emb".into(), &mut self.time_emb),
        ];
        for (name, t) in CODE_FIELDS.iter().zip(self.code_emb.iter_mut()) {
            out.push((format!("code_emb.{name}"), t));
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (n, t) in [
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("wo", &mut b.wo),
                ("w1", &mut b.w1),
                ("b1", &mut b.b1),
                ("w2", &mut b.w2),
                ("b2", &mut b.b2),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("w_out".into(), &mut self.w_out));
        out.push(("b_out".into(), &mut self.b_out));
        out
    }

    pub fn matrix(&self, id: MatrixId) -> &Tensor {
        match id {
            MatrixId::InputProj => &self.w_in,
            MatrixId::Query(b) => &self.blocks[b].wq,
            MatrixId::Key(b) => &self.blocks[b].wk,
            MatrixId::Value(b) => &self.blocks[b].wv,
            MatrixId::AttnOut(b) => &self.blocks[b].wo,
            MatrixId::MlpUp(b) => &self.blocks[b].w1,
            MatrixId::MlpDown(b) => &self.blocks[b].w2,
            MatrixId::OutputProj => &self.w_out,
        }
    }

    pub fn matrix_mut(&mut self, id: MatrixId) -> &mut Tensor {
        match id {
            MatrixId::InputProj => &mut self.w_in,
            MatrixId::Query(b) => &mut self.blocks[b].wq,
            MatrixId::Key(b) => &mut self.blocks[b].wk,
            MatrixId::Value(b) => &mut self.blocks[b].wv,
            MatrixId::AttnOut(b) => &mut self.blocks[b].wo,
            MatrixId::MlpUp(b) => &mut self.blocks[b].w1,
            MatrixId::MlpDown(b) => &mut self.blocks[b].w2,
            MatrixId::OutputProj => &mut self.w_out,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// Whether the mask-reading columns of the input projection are all zero.
    pub fn mask_columns_zero(&self) -> bool {
        let c = self.arch.latent_channels;
        self.w_in
            .data
            .chunks(2 * c)
            .all(|row| row[c..].iter().all(|&v| v == 0.0))
    }
}

/// Seeded initialization. Matrices are scaled normals (`1/√fan_in`, with the
/// residual-branch outputs further scaled by `1/√(2K)`), the timestep table
/// starts from sinusoids, and the mask columns of the input projection are
/// exactly zero.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<DenoiserParams> {
    arch.validate()?;
    let mut p = DenoiserParams::zeros(arch);
    let (w, c, hid) = (arch.width, arch.latent_channels, arch.mlp_hidden);
    let mut k = 0u64;
    let mut next = || {
        k += 1;
        rng::derive(seed, purpose::INIT, k)
    };
    let inv = |n: usize| 1.0 / libm::sqrt(n as f64);
    let resid = inv(2 * arch.blocks);

    let w_data = Tensor::normal(&[w, c], inv(c), next());
    for r in 0..w {
        p.w_in.data[r * 2 * c..r * 2 * c + c].copy_from_slice(&w_data.data[r * c..(r + 1) * c]);
    }
    p.type_emb = Tensor::normal(&[3, w], 0.5, next());
    for f in 0..3 {
        p.code_emb[f] = Tensor::normal(&[arch.code_sizes[f], w], 0.5, next());
    }
    for t in 0..arch.steps {
        for d in 0..w / 2 {
            let freq = libm::pow(arch.steps as f64 * 4.0, -(d as f64) / (w / 2) as f64);
            let a = (t + 1) as f64 * freq;
            p.time_emb.data[t * w + 2 * d] = 0.5 * libm::sin(a);
            p.time_emb.data[t * w + 2 * d + 1] = 0.5 * libm::cos(a);
        }
    }
    for b in p.blocks.iter_mut() {
        b.wq = Tensor::normal(&[w, w], inv(w), next());
        b.wk = Tensor::normal(&[w, w], inv(w), next());
        b.wv = Tensor::normal(&[w, w], inv(w), next());
        b.wo = Tensor::normal(&[w, w], inv(w) * resid, next());
        b.w1 = Tensor::normal(&[hid, w], inv(w), next());
        b.w2 = Tensor::normal(&[w, hid], inv(hid) * resid, next());
    }
    p.w_out = Tensor::normal(&[c, w], inv(w), next());
    Ok(p)
}

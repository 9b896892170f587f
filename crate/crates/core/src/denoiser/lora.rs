//! Low-rank adapters: `W_eff = W + s·B·A` with `A: r×in`, `B: out×r`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::{DenoiserParams, MatrixId, Tensor};
use super::ArchConfig;
use crate::linalg;
use crate::rng::{self, purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub id: MatrixId,
    /// Down projection, `rank × in`.
    pub a: Tensor,
    /// Up projection, `out × rank`; zero at initialization.
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub scale: f64,
    pub pairs: Vec<LoraPair>,
}

impl LoraAdapter {
    pub const DEFAULT_RANK: usize = 4;

    /// Adapter over every projection and block matrix. `A` is a scaled
    /// normal, `B` is zero, so the adapted model starts equal to the base.
    pub fn new(arch: &ArchConfig, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArch("lora rank must be positive".into()));
        }
        let pairs = arch
            .adapted_matrices()
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                let (out, inp) = arch.matrix_dims(id);
                let mut a = Tensor::zeros(&[rank, inp]);
                rng::fill_normal(
                    &mut rng::stream(rng::derive(seed, purpose::LORA_INIT, i as u64)),
                    &mut a.data,
                    1.0 / libm::sqrt(inp as f64),
                );
                LoraPair {
                    id,
                    a,
                    b: Tensor::zeros(&[out, rank]),
                }
            })
            .collect();
        Ok(Self { rank, scale, pairs })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            rank: self.rank,
            scale: self.scale,
            pairs: self
                .pairs
                .iter()
                .map(|p| LoraPair {
                    id: p.id,
                    a: Tensor::zeros_like(&p.a),
                    b: Tensor::zeros_like(&p.b),
                })
                .collect(),
        }
    }

    pub fn get(&self, id: MatrixId) -> Option<&LoraPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn get_mut(&mut self, id: MatrixId) -> Option<&mut LoraPair> {
        self.pairs.iter_mut().find(|p| p.id == id)
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.pairs.len());
        for p in &self.pairs {
            let n = p.id.name();
            out.push((format!("lora.{n}.a"), &p.a));
            out.push((format!("lora.{n}.b"), &p.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(2 * self.pairs.len());
        for p in &mut self.pairs {
            let n = p.id.name();
            out.push((format!("lora.{n}.a"), &mut p.a));
            out.push((format!("lora.{n}.b"), &mut p.b));
        }
        out
    }

    /// Checks every pair against the base matrix it adapts.
    pub fn check(&self, params: &DenoiserParams) -> Result<()> {
        for p in &self.pairs {
            let (out, inp) = params.matrix(p.id).rc();
            if p.a.dims[..] != [self.rank, inp] || p.b.dims[..] != [out, self.rank] {
                return Err(Error::shape(
                    ((out, self.rank), (self.rank, inp)),
                    (&p.b.dims, &p.a.dims),
                ));
            }
        }
        Ok(())
    }

    /// `s·B·A` for one pair.
    pub fn delta(&self, pair: &LoraPair) -> Vec<f64> {
        let (out, r) = pair.b.rc();
        let inp = pair.a.dims[1];
        let mut d = linalg::matmul(&pair.b.data, &pair.a.data, out, r, inp);
        d.iter_mut().for_each(|v| *v *= self.scale);
        d
    }
}

/// Folds the adapter into the base: `W ← W + s·B·A` for every adapted matrix.
pub fn merge_lora(params: &DenoiserParams, adapter: &LoraAdapter) -> Result<DenoiserParams> {
    adapter.check(params)?;
    let mut out = params.clone();
    for p in &adapter.pairs {
        let delta = adapter.delta(p);
        for (w, d) in out.matrix_mut(p.id).data.iter_mut().zip(delta) {
            *w += d;
        }
    }
    Ok(out)
}

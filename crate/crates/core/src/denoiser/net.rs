//! Forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

use super::lora::{LoraAdapter, LoraPair};
use super::params::{DenoiserParams, MatrixId, CODE_FIELDS};
use super::{position_embedding, ConditionBundle, TokenType};
use crate::diffusion::mse;
use crate::linalg::{gemm, Op};
use crate::{Error, Latent, Result};

const RMS_EPS: f64 = 1e-6;

/// Which tensors receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    /// Every base tensor; adapters, if present, only pass gradients through.
    Base,
    /// Adapter tensors only; the base is frozen.
    Adapter,
}

/// Accumulated gradients. Exactly one side is populated, matching the
/// [`Trainable`] mode they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub base: Option<DenoiserParams>,
    pub adapter: Option<LoraAdapter>,
}

/// One training example for [`loss_and_grad`].
#[derive(Debug, Clone, Copy)]
pub struct GradSample<'a> {
    pub x_t: &'a Latent,
    pub conds: ConditionBundle<'a>,
    /// Noise that produced `x_t`.
    pub eps: &'a Latent,
    /// Teacher prediction for the consistency term; `None` drops it.
    pub teacher: Option<&'a Latent>,
    /// Multiplier on this sample's share of the objective.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoss {
    pub loss_d: f64,
    pub loss_c: f64,
}

/// A linear map `y = x·Wᵀ (+ b) + s·(x·Aᵀ)·Bᵀ`, possibly restricted to the
/// first `inp` input columns.
struct Linear<'a> {
    w: &'a [f64],
    bias: Option<&'a [f64]>,
    out: usize,
    inp: usize,
    lora: Option<(&'a [f64], &'a [f64], usize, f64)>,
}

impl<'a> Linear<'a> {
    fn new(
        params: &'a DenoiserParams,
        adapter: Option<&'a LoraAdapter>,
        id: MatrixId,
        bias: Option<&'a [f64]>,
    ) -> Self {
        let t = params.matrix(id);
        let (out, inp) = t.rc();
        let lora = adapter.and_then(|ad| {
            ad.get(id)
                .map(|p: &LoraPair| (&p.a.data[..], &p.b.data[..], ad.rank, ad.scale))
        });
        Self {
            w: &t.data,
            bias,
            out,
            inp,
            lora,
        }
    }

    /// Returns `y` and the cached `x·Aᵀ`.
    fn forward(&self, x: &[f64], n: usize) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut y = vec![0.0; n * self.out];
        gemm(Op::N, Op::T, n, self.out, self.inp, 1.0, x, self.w, 0.0, &mut y);
        if let Some(b) = self.bias {
            for row in y.chunks_mut(self.out) {
                row.iter_mut().zip(b).for_each(|(v, b)| *v += b);
            }
        }
        let xa = self.lora.map(|(a, b, r, s)| {
            let mut xa = vec![0.0; n * r];
            gemm(Op::N, Op::T, n, r, self.inp, 1.0, x, a, 0.0, &mut xa);
            gemm(Op::N, Op::T, n, self.out, r, s, &xa, b, 1.0, &mut y);
            xa
        });
        (y, xa)
    }

    /// Accumulates `dx` (if requested) and parameter gradients.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        dy: &[f64],
        x: &[f64],
        xa: Option<&[f64]>,
        n: usize,
        dx: Option<&mut [f64]>,
        gw: Option<&mut [f64]>,
        gbias: Option<&mut [f64]>,
        glora: Option<(&mut [f64], &mut [f64])>,
    ) {
        let (out, inp) = (self.out, self.inp);
        let dyb = self.lora.map(|(_, b, r, _)| {
            let mut dyb = vec![0.0; n * r];
            gemm(Op::N, Op::N, n, r, out, 1.0, dy, b, 0.0, &mut dyb);
            dyb
        });
        if let Some(dx) = dx {
            gemm(Op::N, Op::N, n, inp, out, 1.0, dy, self.w, 1.0, dx);
            if let (Some((a, _, r, s)), Some(dyb)) = (self.lora, &dyb) {
                gemm(Op::N, Op::N, n, inp, r, s, dyb, a, 1.0, dx);
            }
        }
        if let Some(gw) = gw {
            gemm(Op::T, Op::N, out, inp, n, 1.0, dy, x, 1.0, gw);
        }
        if let Some(gb) = gbias {
            for row in dy.chunks(out) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
        }
        if let (Some((ga, gb)), Some((_, _, r, s)), Some(dyb), Some(xa)) = (glora, self.lora, &dyb, xa) {
            gemm(Op::T, Op::N, out, r, n, s, dy, xa, 1.0, gb);
            gemm(Op::T, Op::N, r, inp, n, s, dyb, x, 1.0, ga);
        }
    }
}

/// Row-wise RMS normalization without gain; returns normalized rows and
/// per-row scale `r = sqrt(mean(x²) + eps)`.
fn rmsnorm(x: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut rs = Vec::with_capacity(x.len() / width);
    for (xr, yr) in x.chunks(width).zip(y.chunks_mut(width)) {
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / width as f64;
        let r = libm::sqrt(ms + RMS_EPS);
        xr.iter().zip(yr.iter_mut()).for_each(|(a, b)| *b = a / r);
        rs.push(r);
    }
    (y, rs)
}

/// Adds the input gradient of [`rmsnorm`] to `dx`.
fn rmsnorm_backward(dy: &[f64], y: &[f64], rs: &[f64], width: usize, dx: &mut [f64]) {
    for (((dyr, yr), &r), dxr) in dy.chunks(width).zip(y.chunks(width)).zip(rs).zip(dx.chunks_mut(width)) {
        let m = dyr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / width as f64;
        for ((d, &g), &v) in dxr.iter_mut().zip(dyr).zip(yr) {
            *d += (g - v * m) / r;
        }
    }
}

fn softmax_rows(s: &mut [f64], n: usize) {
    for row in s.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-u))
}

struct BlockTrace {
    a: Vec<f64>,
    r_a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    o: Vec<f64>,
    xa_q: Option<Vec<f64>>,
    xa_k: Option<Vec<f64>>,
    xa_v: Option<Vec<f64>>,
    xa_o: Option<Vec<f64>>,
    b: Vec<f64>,
    r_b: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    xa_1: Option<Vec<f64>>,
    xa_2: Option<Vec<f64>>,
}

struct Trace {
    n: usize,
    noisy_start: usize,
    cin: usize,
    feats: Vec<f64>,
    xa_in: Option<Vec<f64>>,
    types: Vec<TokenType>,
    blocks: Vec<BlockTrace>,
    z: Vec<f64>,
    out_gain: f64,
    xa_out: Option<Vec<f64>>,
}

fn check_inputs(params: &DenoiserParams, x_t: &Latent, conds: &ConditionBundle<'_>) -> Result<()> {
    let arch = &params.arch;
    let c = arch.latent_channels;
    if x_t.channels != c {
        return Err(Error::shape(c, x_t.channels));
    }
    if let Some(m) = conds.mask_features {
        if !m.same_shape(x_t) {
            return Err(Error::shape(x_t.dims(), m.dims()));
        }
    }
    for l in [conds.appearance, conds.motion].into_iter().flatten() {
        if l.channels != c {
            return Err(Error::shape(c, l.channels));
        }
        if l.height == 0 || l.width == 0 || l.frames == 0 {
            return Err(Error::shape("non-empty latent", l.dims()));
        }
    }
    if conds.t == 0 || conds.t > arch.steps {
        return Err(Error::StepOutOfRange {
            t: conds.t,
            steps: arch.steps,
        });
    }
    for (f, &idx) in conds.code.fields().iter().enumerate() {
        if idx >= arch.code_sizes[f] {
            return Err(Error::UnknownCode {
                field: CODE_FIELDS[f],
                index: idx,
                size: arch.code_sizes[f],
            });
        }
    }
    Ok(())
}

/// Pixel-space coordinates of every token, in sequence order.
fn token_positions(params: &DenoiserParams, x_t: &Latent, conds: &ConditionBundle<'_>) -> Vec<[f64; 3]> {
    let pf = params.arch.patch;
    let (ph, pw) = (x_t.height * pf.h, x_t.width * pf.w);
    let centre = |i: usize, f: usize| (i * f) as f64 + (f as f64 - 1.0) / 2.0;
    let mut out = Vec::new();
    if let Some(a) = conds.appearance {
        let (sy, sx) = (ph as f64 / a.height as f64, pw as f64 / a.width as f64);
        for _ in 0..a.frames {
            for y in 0..a.height {
                for x in 0..a.width {
                    out.push([-1.0, (y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5]);
                }
            }
        }
    }
    if let Some(m) = conds.motion {
        let (sy, sx) = (ph as f64 / m.height as f64, pw as f64 / m.width as f64);
        let shift = (m.frames * pf.t) as f64;
        for t in 0..m.frames {
            for y in 0..m.height {
                for x in 0..m.width {
                    out.push([
                        centre(t, pf.t) - shift,
                        (y as f64 + 0.5) * sy - 0.5,
                        (x as f64 + 0.5) * sx - 0.5,
                    ]);
                }
            }
        }
    }
    for t in 0..x_t.frames {
        for y in 0..x_t.height {
            for x in 0..x_t.width {
                out.push([centre(t, pf.t), centre(y, pf.h), centre(x, pf.w)]);
            }
        }
    }
    out
}

/// First `cols` columns of a row-major `rows × stride` matrix.
fn leading_columns(m: &[f64], rows: usize, stride: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        out.extend_from_slice(&m[r * stride..r * stride + cols]);
    }
    out
}

fn run(
    params: &DenoiserParams,
    adapter: Option<&LoraAdapter>,
    x_t: &Latent,
    conds: &ConditionBundle<'_>,
    keep: bool,
) -> Result<(Latent, Option<Trace>)> {
    check_inputs(params, x_t, conds)?;
    if let Some(ad) = adapter {
        ad.check(params)?;
    }
    let arch = &params.arch;
    let (w, c, hid) = (arch.width, arch.latent_channels, arch.mlp_hidden);
    let n_app = conds.appearance.map_or(0, |l| l.tokens());
    let n_mot = conds.motion.map_or(0, |l| l.tokens());
    let noisy_start = n_app + n_mot;
    let n_noisy = x_t.tokens();
    let n = noisy_start + n_noisy;

    let with_mask = conds.mask_features.is_some();
    let cin = if with_mask { 2 * c } else { c };
    let mut feats = vec![0.0; n * cin];
    let mut types = Vec::with_capacity(n);
    let mut row = 0;
    for (lat, ty) in [
        (conds.appearance, TokenType::Appearance),
        (conds.motion, TokenType::Motion),
        (Some(x_t), TokenType::Noisy),
    ] {
        if let Some(lat) = lat {
            for tok in lat.data.chunks(c) {
                feats[row * cin..row * cin + c].copy_from_slice(tok);
                types.push(ty);
                row += 1;
            }
        }
    }
    if let Some(m) = conds.mask_features {
        for (i, tok) in m.data.chunks(c).enumerate() {
            let r = noisy_start + i;
            feats[r * cin + c..(r + 1) * cin].copy_from_slice(tok);
        }
    }

    // Input projection, restricted to the latent columns when the mask is omitted.
    let w_in_cols;
    let a_in_cols;
    let mut lin_in = Linear::new(params, adapter, MatrixId::InputProj, Some(&params.b_in.data));
    if !with_mask {
        w_in_cols = leading_columns(&params.w_in.data, w, 2 * c, c);
        lin_in.w = &w_in_cols;
        lin_in.inp = c;
        if let Some((a, b, r, s)) = lin_in.lora {
            a_in_cols = leading_columns(a, r, 2 * c, c);
            lin_in.lora = Some((&a_in_cols, b, r, s));
        }
    }
    let (mut h, xa_in) = lin_in.forward(&feats, n);

    let mut shared = params.time_emb.data[(conds.t - 1) * w..conds.t * w].to_vec();
    for (f, &idx) in conds.code.fields().iter().enumerate() {
        let e = &params.code_emb[f].data[idx * w..(idx + 1) * w];
        shared.iter_mut().zip(e).for_each(|(s, v)| *s += v);
    }
    for ((hr, ty), pos) in h.chunks_mut(w).zip(&types).zip(token_positions(params, x_t, conds)) {
        let te = &params.type_emb.data[*ty as usize * w..(*ty as usize + 1) * w];
        for ((v, s), e) in hr.iter_mut().zip(&shared).zip(te) {
            *v += s + e;
        }
        position_embedding(w, pos, hr);
    }

    let inv_sqrt_w = 1.0 / libm::sqrt(w as f64);
    let mut traces = Vec::new();
    for (bi, blk) in params.blocks.iter().enumerate() {
        let (a, r_a) = rmsnorm(&h, w);
        let (q, xa_q) = Linear::new(params, adapter, MatrixId::Query(bi), None).forward(&a, n);
        let (k, xa_k) = Linear::new(params, adapter, MatrixId::Key(bi), None).forward(&a, n);
        let (v, xa_v) = Linear::new(params, adapter, MatrixId::Value(bi), None).forward(&a, n);
        let mut p = vec![0.0; n * n];
        gemm(Op::N, Op::T, n, n, w, inv_sqrt_w, &q, &k, 0.0, &mut p);
        softmax_rows(&mut p, n);
        let mut o = vec![0.0; n * w];
        gemm(Op::N, Op::N, n, w, n, 1.0, &p, &v, 0.0, &mut o);
        let (ao, xa_o) = Linear::new(params, adapter, MatrixId::AttnOut(bi), None).forward(&o, n);
        h.iter_mut().zip(&ao).for_each(|(x, d)| *x += d);

        let (b, r_b) = rmsnorm(&h, w);
        let (u, xa_1) = Linear::new(params, adapter, MatrixId::MlpUp(bi), Some(&blk.b1.data)).forward(&b, n);
        let g: Vec<f64> = u.iter().map(|&x| x * sigmoid(x)).collect();
        let (m, xa_2) = Linear::new(params, adapter, MatrixId::MlpDown(bi), Some(&blk.b2.data)).forward(&g, n);
        h.iter_mut().zip(&m).for_each(|(x, d)| *x += d);
        debug_assert_eq!(u.len(), n * hid);

        if keep {
            traces.push(BlockTrace {
                a,
                r_a,
                q,
                k,
                v,
                p,
                o,
                xa_q,
                xa_k,
                xa_v,
                xa_o,
                b,
                r_b,
                u,
                g,
                xa_1,
                xa_2,
            });
        }
    }

    let z = h[noisy_start * w..].to_vec();
    let (mut y, xa_out) =
        Linear::new(params, adapter, MatrixId::OutputProj, Some(&params.b_out.data)).forward(&z, n_noisy);
    // ε̂ = √(1−ᾱ)·x_t + √ᾱ·F: the readout F only carries what x_t alone does not.
    let alpha_bar = arch.schedule()?.alpha_bar(conds.t);
    let (skip, out_gain) = (libm::sqrt(1.0 - alpha_bar), libm::sqrt(alpha_bar));
    for (o, &x) in y.iter_mut().zip(&x_t.data) {
        *o = skip * x + out_gain * *o;
    }
    let out = Latent {
        frames: x_t.frames,
        height: x_t.height,
        width: x_t.width,
        channels: c,
        data: y,
    };
    let trace = keep.then_some(Trace {
        n,
        noisy_start,
        cin,
        feats,
        xa_in,
        types,
        blocks: traces,
        z,
        xa_out,
        out_gain,
    });
    Ok((out, trace))
}

pub(crate) fn forward(
    params: &DenoiserParams,
    adapter: Option<&LoraAdapter>,
    x_t: &Latent,
    conds: &ConditionBundle<'_>,
) -> Result<Latent> {
    run(params, adapter, x_t, conds, false).map(|(y, _)| y)
}

fn lora_slots(grads: &mut Option<LoraAdapter>, id: MatrixId) -> Option<(&mut [f64], &mut [f64])> {
    grads
        .as_mut()
        .and_then(|g| g.get_mut(id))
        .map(|p| (&mut p.a.data[..], &mut p.b.data[..]))
}

/// Accumulates gradients of `Σ d_out · ε̂` into `grads`.
fn backward(
    params: &DenoiserParams,
    adapter: Option<&LoraAdapter>,
    conds: &ConditionBundle<'_>,
    tr: &Trace,
    d_out: &[f64],
    base: &mut Option<DenoiserParams>,
    lora: &mut Option<LoraAdapter>,
) {
    let arch = &params.arch;
    let (w, c, hid) = (arch.width, arch.latent_channels, arch.mlp_hidden);
    let n = tr.n;
    let n_noisy = n - tr.noisy_start;

    let d_out: Vec<f64> = d_out.iter().map(|&d| d * tr.out_gain).collect();
    let d_out = &d_out[..];
    let mut dz = vec![0.0; n_noisy * w];
    {
        let lin = Linear::new(params, adapter, MatrixId::OutputProj, Some(&params.b_out.data));
        let (gw, gb) = match base.as_mut() {
            Some(g) => (Some(&mut g.w_out.data[..]), Some(&mut g.b_out.data[..])),
            None => (None, None),
        };
        lin.backward(
            d_out,
            &tr.z,
            tr.xa_out.as_deref(),
            n_noisy,
            Some(&mut dz),
            gw,
            gb,
            lora_slots(lora, MatrixId::OutputProj),
        );
    }
    let mut dh = vec![0.0; n * w];
    dh[tr.noisy_start * w..].copy_from_slice(&dz);

    let inv_sqrt_w = 1.0 / libm::sqrt(w as f64);
    for (bi, bt) in tr.blocks.iter().enumerate().rev() {
        let blk = &params.blocks[bi];
        // MLP branch.
        let mut dg = vec![0.0; n * hid];
        {
            let lin = Linear::new(params, adapter, MatrixId::MlpDown(bi), Some(&blk.b2.data));
            let (gw, gb) = match base.as_mut() {
                Some(g) => {
                    let blk = &mut g.blocks[bi];
                    (Some(&mut blk.w2.data[..]), Some(&mut blk.b2.data[..]))
                }
                None => (None, None),
            };
            lin.backward(
                &dh,
                &bt.g,
                bt.xa_2.as_deref(),
                n,
                Some(&mut dg),
                gw,
                gb,
                lora_slots(lora, MatrixId::MlpDown(bi)),
            );
        }
        let du: Vec<f64> = dg
            .iter()
            .zip(&bt.u)
            .map(|(&d, &u)| {
                let s = sigmoid(u);
                d * s * (1.0 + u * (1.0 - s))
            })
            .collect();
        let mut db = vec![0.0; n * w];
        {
            let lin = Linear::new(params, adapter, MatrixId::MlpUp(bi), Some(&blk.b1.data));
            let (gw, gb) = match base.as_mut() {
                Some(g) => {
                    let blk = &mut g.blocks[bi];
                    (Some(&mut blk.w1.data[..]), Some(&mut blk.b1.data[..]))
                }
                None => (None, None),
            };
            lin.backward(
                &du,
                &bt.b,
                bt.xa_1.as_deref(),
                n,
                Some(&mut db),
                gw,
                gb,
                lora_slots(lora, MatrixId::MlpUp(bi)),
            );
        }
        rmsnorm_backward(&db, &bt.b, &bt.r_b, w, &mut dh);

        // Attention branch.
        let mut d_o = vec![0.0; n * w];
        {
            let lin = Linear::new(params, adapter, MatrixId::AttnOut(bi), None);
            let gw = base.as_mut().map(|g| &mut g.blocks[bi].wo.data[..]);
            lin.backward(
                &dh,
                &bt.o,
                bt.xa_o.as_deref(),
                n,
                Some(&mut d_o),
                gw,
                None,
                lora_slots(lora, MatrixId::AttnOut(bi)),
            );
        }
        let mut ds = vec![0.0; n * n];
        gemm(Op::N, Op::T, n, n, w, 1.0, &d_o, &bt.v, 0.0, &mut ds);
        let mut dv = vec![0.0; n * w];
        gemm(Op::T, Op::N, n, w, n, 1.0, &bt.p, &d_o, 0.0, &mut dv);
        for (dsr, pr) in ds.chunks_mut(n).zip(bt.p.chunks(n)) {
            let dot = dsr.iter().zip(pr).map(|(a, b)| a * b).sum::<f64>();
            for (d, &p) in dsr.iter_mut().zip(pr) {
                *d = p * (*d - dot) * inv_sqrt_w;
            }
        }
        let mut dq = vec![0.0; n * w];
        gemm(Op::N, Op::N, n, w, n, 1.0, &ds, &bt.k, 0.0, &mut dq);
        let mut dk = vec![0.0; n * w];
        gemm(Op::T, Op::N, n, w, n, 1.0, &ds, &bt.q, 0.0, &mut dk);

        let mut da = vec![0.0; n * w];
        for (id, dy, x_a) in [
            (MatrixId::Query(bi), &dq, &bt.xa_q),
            (MatrixId::Key(bi), &dk, &bt.xa_k),
            (MatrixId::Value(bi), &dv, &bt.xa_v),
        ] {
            let lin = Linear::new(params, adapter, id, None);
            let gw = base.as_mut().map(|g| &mut g.matrix_mut(id).data[..]);
            lin.backward(
                dy,
                &bt.a,
                x_a.as_deref(),
                n,
                Some(&mut da),
                gw,
                None,
                lora_slots(lora, id),
            );
        }
        rmsnorm_backward(&da, &bt.a, &bt.r_a, w, &mut dh);
    }

    // Embeddings and input projection.
    if let Some(g) = base.as_mut() {
        let mut col = vec![0.0; w];
        for (row, ty) in dh.chunks(w).zip(&tr.types) {
            let te = &mut g.type_emb.data[*ty as usize * w..(*ty as usize + 1) * w];
            for ((c, t), d) in col.iter_mut().zip(te.iter_mut()).zip(row) {
                *c += d;
                *t += d;
            }
        }
        let t = conds.t - 1;
        g.time_emb.data[t * w..(t + 1) * w]
            .iter_mut()
            .zip(&col)
            .for_each(|(g, d)| *g += d);
        for (f, &idx) in conds.code.fields().iter().enumerate() {
            g.code_emb[f].data[idx * w..(idx + 1) * w]
                .iter_mut()
                .zip(&col)
                .for_each(|(g, d)| *g += d);
        }
    }
    let full = 2 * c;
    let mut lin = Linear::new(params, adapter, MatrixId::InputProj, Some(&params.b_in.data));
    let w_cols;
    let a_cols;
    if tr.cin != full {
        w_cols = leading_columns(&params.w_in.data, w, full, tr.cin);
        lin.w = &w_cols;
        lin.inp = tr.cin;
        if let Some((a, b, r, s)) = lin.lora {
            a_cols = leading_columns(a, r, full, tr.cin);
            lin.lora = Some((&a_cols, b, r, s));
        }
    }
    let mut gw = base.as_ref().map(|_| vec![0.0; w * tr.cin]);
    let mut ga = lora
        .as_ref()
        .and_then(|g| g.get(MatrixId::InputProj))
        .map(|p| vec![0.0; p.a.dims[0] * tr.cin]);
    {
        let gb = base.as_mut().map(|g| &mut g.b_in.data[..]);
        let glora = match (&mut ga, lora.as_mut().and_then(|g| g.get_mut(MatrixId::InputProj))) {
            (Some(ga), Some(p)) => Some((&mut ga[..], &mut p.b.data[..])),
            _ => None,
        };
        lin.backward(
            &dh,
            &tr.feats,
            tr.xa_in.as_deref(),
            n,
            None,
            gw.as_deref_mut(),
            gb,
            glora,
        );
    }
    let scatter = |dst: &mut [f64], src: &[f64], rows: usize| {
        for r in 0..rows {
            dst[r * full..r * full + tr.cin]
                .iter_mut()
                .zip(&src[r * tr.cin..(r + 1) * tr.cin])
                .for_each(|(d, s)| *d += s);
        }
    };
    if let (Some(g), Some(gw)) = (base.as_mut(), gw) {
        scatter(&mut g.w_in.data, &gw, w);
    }
    if let (Some(p), Some(ga)) = (lora.as_mut().and_then(|g| g.get_mut(MatrixId::InputProj)), ga) {
        let rows = p.a.dims[0];
        scatter(&mut p.a.data, &ga, rows);
    }
}

/// Batch objective `mean_i [ L_d,i + α·L_c,i ]` and its gradient, where
/// `L_d = MSE(ε, ε̂)` and `L_c = MSE(ε̂, ε̂_teacher)` over noisy tokens.
pub fn loss_and_grad(
    params: &DenoiserParams,
    adapter: Option<&LoraAdapter>,
    samples: &[GradSample<'_>],
    alpha: f64,
    mode: Trainable,
) -> Result<(Vec<SampleLoss>, Gradients)> {
    let mut base = match mode {
        Trainable::Base => Some(params.zeros_like()),
        Trainable::Adapter => None,
    };
    let mut lora = match (mode, adapter) {
        (Trainable::Adapter, Some(ad)) => Some(ad.zeros_like()),
        (Trainable::Adapter, None) => return Err(Error::InvalidArch("adapter training requires an adapter".into())),
        _ => None,
    };
    let nb = samples.len().max(1) as f64;
    let mut losses = Vec::with_capacity(samples.len());
    for s in samples {
        if !s.eps.same_shape(s.x_t) {
            return Err(Error::shape(s.x_t.dims(), s.eps.dims()));
        }
        if let Some(tch) = s.teacher {
            if !tch.same_shape(s.x_t) {
                return Err(Error::shape(s.x_t.dims(), tch.dims()));
            }
        }
        let (pred, trace) = run(params, adapter, s.x_t, &s.conds, true)?;
        let trace = trace.expect("trace kept");
        let loss_d = mse(&pred.data, &s.eps.data);
        let loss_c = s.teacher.map_or(0.0, |t| mse(&pred.data, &t.data));
        losses.push(SampleLoss { loss_d, loss_c });

        let k = 2.0 * s.weight / (pred.data.len() as f64 * nb);
        let mut d_out: Vec<f64> = pred.data.iter().zip(&s.eps.data).map(|(p, e)| k * (p - e)).collect();
        if let Some(t) = s.teacher {
            for ((d, p), t) in d_out.iter_mut().zip(&pred.data).zip(&t.data) {
                *d += alpha * k * (p - t);
            }
        }
        backward(params, adapter, &s.conds, &trace, &d_out, &mut base, &mut lora);
    }
    Ok((losses, Gradients { base, adapter: lora }))
}

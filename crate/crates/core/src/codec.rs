//! Invertible latent codec.
//!
//! Videos are mapped to latents by a parameter-free space-time-to-depth
//! rearrangement: each `pt × ph × pw` block of RGB pixels becomes one latent
//! voxel with `3·pt·ph·pw` channels. Channel `c` of a voxel holds pixel
//! `(dt, dy, dx)` and color `ch` where `c = ((dt·ph + dy)·pw + dx)·3 + ch`.

use alloc::vec;

use crate::{Error, Latent, MaskSequence, MotionFeatures, Result, Video};

/// Temporal, vertical and horizontal patch factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchFactors {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Default for PatchFactors {
    fn default() -> Self {
        Self { t: 2, h: 2, w: 2 }
    }
}

impl PatchFactors {
    pub fn channels(&self) -> usize {
        Video::CHANNELS * self.t * self.h * self.w
    }

    pub fn check(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        for (dim, size, factor) in [
            ("frames", frames, self.t),
            ("height", height, self.h),
            ("width", width, self.w),
        ] {
            if factor == 0 || size % factor != 0 {
                return Err(Error::Indivisible { dim, size, factor });
            }
        }
        Ok(())
    }

    /// Latent dims `(T', H', W', C')` of a `frames × height × width` video.
    pub fn latent_dims(&self, frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        self.check(frames, height, width)?;
        Ok((frames / self.t, height / self.h, width / self.w, self.channels()))
    }
}

fn rearrange<F: FnMut(usize, usize)>(pf: PatchFactors, frames: usize, height: usize, width: usize, mut visit: F) {
    let (lt, lh, lw) = (frames / pf.t, height / pf.h, width / pf.w);
    let c = pf.channels();
    for ti in 0..lt {
        for yi in 0..lh {
            for xi in 0..lw {
                let base = ((ti * lh + yi) * lw + xi) * c;
                for dt in 0..pf.t {
                    for dy in 0..pf.h {
                        for dx in 0..pf.w {
                            let (f, y, x) = (ti * pf.t + dt, yi * pf.h + dy, xi * pf.w + dx);
                            let pix = ((f * height + y) * width + x) * 3;
                            let ch = ((dt * pf.h + dy) * pf.w + dx) * 3;
                            for k in 0..3 {
                                visit(pix + k, base + ch + k);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn encode(video: &Video, pf: PatchFactors) -> Result<Latent> {
    let (lt, lh, lw, c) = pf.latent_dims(video.frames, video.height, video.width)?;
    let mut out = Latent::zeros(lt, lh, lw, c);
    rearrange(pf, video.frames, video.height, video.width, |pix, lat| {
        out.data[lat] = video.data[pix] as f64;
    });
    Ok(out)
}

/// Inverse of [`encode`]. Values are clamped to `[0, 1]`, which is a no-op
/// for any latent produced by `encode`.
pub fn decode(latent: &Latent, pf: PatchFactors) -> Result<Video> {
    if latent.channels != pf.channels() {
        return Err(Error::shape(pf.channels(), latent.channels));
    }
    let (f, h, w) = (latent.frames * pf.t, latent.height * pf.h, latent.width * pf.w);
    let mut out = Video::zeros(f, h, w);
    rearrange(pf, f, h, w, |pix, lat| {
        out.data[pix] = (latent.data[lat] as f32).clamp(0.0, 1.0);
    });
    Ok(out)
}

/// Affine map from pixel-range latents to the zero-centred space the
/// diffusion model works in.
pub fn to_model_space(latent: &Latent) -> Latent {
    let mut out = latent.clone();
    for v in &mut out.data {
        *v = 2.0 * *v - 1.0;
    }
    out
}

/// Inverse of [`to_model_space`].
pub fn from_model_space(latent: &Latent) -> Latent {
    let mut out = latent.clone();
    for v in &mut out.data {
        *v = 0.5 * (*v + 1.0);
    }
    out
}

/// Spatial average pooling over `factor × factor` blocks.
pub fn downsample(video: &Video, factor: usize) -> Result<Video> {
    let (f, h, w) = video.dims();
    for (dim, size) in [("height", h), ("width", w)] {
        if factor == 0 || size % factor != 0 {
            return Err(Error::Indivisible { dim, size, factor });
        }
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Video::zeros(f, oh, ow);
    let norm = (factor * factor) as f64;
    for t in 0..f {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = [0.0f64; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = video.pixel(t, y * factor + dy, x * factor + dx);
                        for k in 0..3 {
                            acc[k] += p[k] as f64;
                        }
                    }
                }
                out.set_pixel(
                    t,
                    y,
                    x,
                    [(acc[0] / norm) as f32, (acc[1] / norm) as f32, (acc[2] / norm) as f32],
                );
            }
        }
    }
    Ok(out)
}

/// Replicates the mask into three channels and encodes it. No parameters.
pub fn encode_mask(masks: &MaskSequence, pf: PatchFactors) -> Result<MotionFeatures> {
    let (f, h, w) = masks.dims();
    let mut rgb = vec![0.0f32; f * h * w * 3];
    for (i, &m) in masks.data.iter().enumerate() {
        let v = m as f32;
        rgb[3 * i..3 * i + 3].copy_from_slice(&[v, v, v]);
    }
    encode(&Video::from_data(f, h, w, rgb)?, pf)
}

/// Latent of a single frame repeated `pf.t` times along time.
pub fn encode_still(video: &Video, frame: usize, pf: PatchFactors) -> Result<Latent> {
    let one = video.frame(frame);
    let mut data = vec![0.0f32; one.len() * pf.t];
    for chunk in data.chunks_mut(one.len()) {
        chunk.copy_from_slice(one);
    }
    encode(&Video::from_data(pf.t, video.height, video.width, data)?, pf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec::Vec;

    #[test]
    fn model_space_round_trip() {
        let mut l = Latent::zeros(1, 1, 3, 1);
        l.data.copy_from_slice(&[0.0, 0.5, 1.0]);
        let m = to_model_space(&l);
        assert_eq!(m.data, [-1.0, 0.0, 1.0]);
        assert_eq!(from_model_space(&m), l);
    }
    use proptest::prelude::*;
    use rand::Rng;

    fn random_video(seed: u64, f: usize, h: usize, w: usize) -> Video {
        let mut r = rng::stream(seed);
        let data: Vec<f32> = (0..f * h * w * 3).map(|_| r.random::<f32>()).collect();
        Video::from_data(f, h, w, data).unwrap()
    }

    #[test]
    fn default_latent_shape() {
        let v = Video::zeros(16, 32, 48);
        let l = encode(&v, PatchFactors::default()).unwrap();
        assert_eq!(l.dims(), (8, 16, 24, 24));
    }

    #[test]
    fn constant_video_constant_latent() {
        let mut v = Video::zeros(4, 4, 6);
        v.data.iter_mut().for_each(|x| *x = 0.5);
        let l = encode(&v, PatchFactors::default()).unwrap();
        assert!(l.data.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn indivisible_dims_rejected() {
        let v = Video::zeros(3, 4, 4);
        assert!(matches!(
            encode(&v, PatchFactors::default()),
            Err(Error::Indivisible { dim: "frames", .. })
        ));
        let l = Latent::zeros(1, 1, 1, 12);
        assert!(decode(&l, PatchFactors::default()).is_err());
    }

    #[test]
    fn zero_latent_decodes_to_zero_video() {
        let l = Latent::zeros(2, 3, 4, 24);
        let v = decode(&l, PatchFactors::default()).unwrap();
        assert_eq!(v.dims(), (4, 6, 8));
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn each_latent_entry_maps_to_one_pixel_value() {
        let pf = PatchFactors::default();
        let base = random_video(3, 4, 4, 6);
        let lat = encode(&base, pf).unwrap();
        for i in 0..lat.data.len() {
            let mut p = lat.clone();
            p.data[i] = if p.data[i] > 0.5 { 0.0 } else { 1.0 };
            let v = decode(&p, pf).unwrap();
            let changed = v.data.iter().zip(&base.data).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 1, "latent index {i}");
        }
    }

    #[test]
    fn downsample_shapes_and_values() {
        let v = Video::zeros(16, 32, 48);
        assert_eq!(downsample(&v, 2).unwrap().dims(), (16, 16, 24));
        let mut checker = Video::zeros(2, 4, 4);
        for t in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let c = ((x + y) % 2) as f32;
                    checker.set_pixel(t, y, x, [c, c, c]);
                }
            }
        }
        let d = downsample(&checker, 2).unwrap();
        assert!(d.data.iter().all(|&x| x == 0.5));
        assert!(downsample(&Video::zeros(1, 5, 4), 2).is_err());
    }

    #[test]
    fn mask_encoding() {
        let pf = PatchFactors::default();
        let mut m = MaskSequence::zeros(4, 4, 4);
        assert!(encode_mask(&m, pf).unwrap().data.iter().all(|&x| x == 0.0));
        m.data.iter_mut().for_each(|x| *x = 1);
        assert!(encode_mask(&m, pf).unwrap().data.iter().all(|&x| x == 1.0));
        m.set(1, 2, 3, 0);
        let v = decode(&encode_mask(&m, pf).unwrap(), pf).unwrap();
        for (i, &b) in m.data.iter().enumerate() {
            assert_eq!(v.data[3 * i..3 * i + 3], [b as f32; 3]);
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(seed in any::<u64>(), ft in 1usize..3, fh in 1usize..4, fw in 1usize..4) {
            let pf = PatchFactors::default();
            let v = random_video(seed, 2 * ft, 2 * fh, 2 * fw);
            let back = decode(&encode(&v, pf).unwrap(), pf).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn encode_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let pf = PatchFactors { t: 1, h: 2, w: 2 };
            let u = random_video(seed, 2, 4, 4);
            let v = random_video(seed ^ 1, 2, 4, 4);
            // Linear combination built without the [0, 1] invariant; encode
            // only rearranges so it applies unchanged.
            let mix: Vec<f32> = u.data.iter().zip(&v.data).map(|(x, y)| a * x + b * y).collect();
            let w = Video { data: mix, ..u.clone() };
            let (eu, ev, ew) = (encode(&u, pf).unwrap(), encode(&v, pf).unwrap(), encode(&w, pf).unwrap());
            for i in 0..ew.data.len() {
                let lin = a as f64 * eu.data[i] + b as f64 * ev.data[i];
                prop_assert!((ew.data[i] - lin).abs() <= 1e-6 * (1.0 + lin.abs()));
            }
        }

        #[test]
        fn downsample_preserves_mean(seed in any::<u64>()) {
            let v = random_video(seed, 2, 4, 6);
            let d = downsample(&v, 2).unwrap();
            let mean = |x: &Video| x.data.iter().map(|&p| p as f64).sum::<f64>() / x.data.len() as f64;
            prop_assert!((mean(&v) - mean(&d)).abs() < 1e-7);
        }
    }
}

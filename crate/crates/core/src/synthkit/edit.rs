//! Mask sequence editing (per-frame scale + translate) and union.

use alloc::vec::Vec;

use crate::{Error, MaskSequence, Result};

/// Per-frame affine edit about the frame center: a point `p` moves to
/// `center + scale * (p - center) + translate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub sx: f64,
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        sx: 1.0,
        sy: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn scale(s: f64) -> Self {
        Affine {
            sx: s,
            sy: s,
            ..Self::IDENTITY
        }
    }

    pub fn translate(tx: f64, ty: f64) -> Self {
        Affine {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }
}

/// Nearest-neighbor resampling of each frame under its transform. Output
/// stays binary. Fails if any support pixel center would map outside the
/// frame, listing every offending frame.
pub fn edit_mask_affine(masks: &MaskSequence, per_frame: &[Affine]) -> Result<MaskSequence> {
    let (f, h, w) = masks.dims();
    if per_frame.len() != f {
        return Err(Error::shape(f, per_frame.len()));
    }
    for a in per_frame {
        if !(a.sx > 0.0 && a.sy > 0.0 && a.tx.is_finite() && a.ty.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "affine scales must be positive and offsets finite: {a:?}"
            )));
        }
    }
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);

    let mut offending = Vec::new();
    for (t, a) in per_frame.iter().enumerate() {
        let out_of_bounds = (0..h).any(|y| {
            (0..w).any(|x| {
                if masks.get(t, y, x) == 0 {
                    return false;
                }
                let px = cx + a.sx * (x as f64 + 0.5 - cx) + a.tx;
                let py = cy + a.sy * (y as f64 + 0.5 - cy) + a.ty;
                !(px >= 0.0 && px < w as f64 && py >= 0.0 && py < h as f64)
            })
        });
        if out_of_bounds {
            offending.push(t);
        }
    }
    if !offending.is_empty() {
        return Err(Error::EditOutOfBounds { frames: offending });
    }

    let mut out = MaskSequence::zeros(f, h, w);
    for (t, a) in per_frame.iter().enumerate() {
        for y in 0..h {
            let sy = libm::floor(cy + (y as f64 + 0.5 - cy - a.ty) / a.sy);
            if sy < 0.0 || sy >= h as f64 {
                continue;
            }
            for x in 0..w {
                let sx = libm::floor(cx + (x as f64 + 0.5 - cx - a.tx) / a.sx);
                if sx < 0.0 || sx >= w as f64 {
                    continue;
                }
                out.set(t, y, x, masks.get(t, sy as usize, sx as usize));
            }
        }
    }
    Ok(out)
}

/// Elementwise union of two mask sequences.
pub fn combine_masks(a: &MaskSequence, b: &MaskSequence) -> Result<MaskSequence> {
    if a.dims() != b.dims() {
        return Err(Error::shape(a.dims(), b.dims()));
    }
    Ok(MaskSequence {
        frames: a.frames,
        height: a.height,
        width: a.width,
        data: a.data.iter().zip(&b.data).map(|(&p, &q)| p | q).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn square(frames: usize, h: usize, w: usize, y0: usize, x0: usize, side: usize) -> MaskSequence {
        let mut m = MaskSequence::zeros(frames, h, w);
        for t in 0..frames {
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    m.set(t, y, x, 1);
                }
            }
        }
        m
    }

    fn centroid(m: &MaskSequence, t: usize) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..m.height {
            for x in 0..m.width {
                if m.get(t, y, x) == 1 {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        (sx / n, sy / n)
    }

    /// Geometric oracle: a destination pixel is set when the preimage of its
    /// center falls inside the continuous source square.
    fn preimage_popcount(h: usize, w: usize, y0: usize, x0: usize, side: usize, s: f64) -> usize {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let inside = |p: f64, lo: usize| p >= lo as f64 && p < (lo + side) as f64;
        let mut n = 0;
        for y in 0..h {
            for x in 0..w {
                let sx = cx + (x as f64 + 0.5 - cx) / s;
                let sy = cy + (y as f64 + 0.5 - cy) / s;
                n += (inside(sx, x0) && inside(sy, y0)) as usize;
            }
        }
        n
    }

    #[test]
    fn identity_is_identity() {
        let m = square(3, 16, 16, 2, 5, 6);
        let out = edit_mask_affine(&m, &[Affine::IDENTITY; 3]).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn half_scale_of_centered_square() {
        let m = square(1, 32, 48, 11, 19, 10);
        let out = edit_mask_affine(&m, &[Affine::scale(0.5)]).unwrap();
        assert_eq!(out.popcount(0), preimage_popcount(32, 48, 11, 19, 10, 0.5));
        assert_eq!(out.popcount(0), 25);
        let (a, b) = (centroid(&m, 0), centroid(&out, 0));
        assert!((a.0 - b.0).abs() <= 1.0 && (a.1 - b.1).abs() <= 1.0);
    }

    #[test]
    fn growing_scale_grows_popcount() {
        let frames = 8;
        let m = square(frames, 32, 48, 12, 20, 8);
        let per: Vec<Affine> = (0..frames)
            .map(|t| Affine::scale(1.0 + 0.5 * t as f64 / (frames - 1) as f64))
            .collect();
        let out = edit_mask_affine(&m, &per).unwrap();
        for t in 1..frames {
            assert!(out.popcount(t) >= out.popcount(t - 1));
        }
        assert!(out.popcount(frames - 1) > out.popcount(0));
    }

    #[test]
    fn out_of_bounds_lists_frames() {
        let m = square(4, 16, 16, 4, 4, 4);
        let per = [
            Affine::IDENTITY,
            Affine::translate(9.0, 0.0),
            Affine::IDENTITY,
            Affine::translate(0.0, -5.0),
        ];
        assert_eq!(
            edit_mask_affine(&m, &per),
            Err(Error::EditOutOfBounds { frames: vec![1, 3] })
        );
    }

    #[test]
    fn combine_counts_disjoint_blobs() {
        let a = square(2, 8, 8, 0, 0, 2);
        let mut b = MaskSequence::zeros(2, 8, 8);
        for t in 0..2 {
            for x in 2..8 {
                b.set(t, 5, x, 1);
            }
        }
        let u = combine_masks(&a, &b).unwrap();
        assert_eq!(u.popcount(0), 10);
        assert_eq!(u.popcount(1), 10);
        assert!(combine_masks(&a, &MaskSequence::zeros(2, 8, 7)).is_err());
    }

    proptest! {
        #[test]
        fn integer_translations_compose(
            y0 in 8usize..12, x0 in 8usize..12,
            a in (-3i32..=3, -3i32..=3), b in (-3i32..=3, -3i32..=3),
        ) {
            let m = square(1, 24, 24, y0, x0, 4);
            let ta = Affine::translate(a.0 as f64, a.1 as f64);
            let tb = Affine::translate(b.0 as f64, b.1 as f64);
            let tab = Affine::translate((a.0 + b.0) as f64, (a.1 + b.1) as f64);
            let two = edit_mask_affine(&edit_mask_affine(&m, &[ta]).unwrap(), &[tb]).unwrap();
            let one = edit_mask_affine(&m, &[tab]).unwrap();
            prop_assert_eq!(two, one);
        }

        #[test]
        fn union_is_commutative_associative_idempotent(
            a in proptest::collection::vec(0u8..=1, 18),
            b in proptest::collection::vec(0u8..=1, 18),
            c in proptest::collection::vec(0u8..=1, 18),
        ) {
            let m = |d: Vec<u8>| MaskSequence::from_data(2, 3, 3, d).unwrap();
            let (a, b, c) = (m(a), m(b), m(c));
            prop_assert_eq!(combine_masks(&a, &b).unwrap(), combine_masks(&b, &a).unwrap());
            prop_assert_eq!(
                combine_masks(&combine_masks(&a, &b).unwrap(), &c).unwrap(),
                combine_masks(&a, &combine_masks(&b, &c).unwrap()).unwrap()
            );
            prop_assert_eq!(combine_masks(&a, &a).unwrap(), a.clone());
            prop_assert_eq!(combine_masks(&a, &MaskSequence::zeros(2, 3, 3)).unwrap(), a);
        }
    }
}

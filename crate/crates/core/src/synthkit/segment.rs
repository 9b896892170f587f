//! Color thresholding, connected components and boxes on single frames.

use alloc::vec;
use alloc::vec::Vec;

pub fn color_distance(a: [f32; 3], b: [f32; 3]) -> f32 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    libm::sqrtf(d0 * d0 + d1 * d1 + d2 * d2)
}

/// Axis-aligned box, rows `y0..y1`, columns `x0..x1` (half-open).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BBox {
    pub fn full(height: usize, width: usize) -> Self {
        BBox {
            y0: 0,
            x0: 0,
            y1: height,
            x1: width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.y0 >= self.y1 || self.x0 >= self.x1
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.y1 - self.y0) * (self.x1 - self.x0)
        }
    }

    /// Grows by `margin` pixels on every side, clipped to the frame.
    pub fn dilate(&self, margin: usize, height: usize, width: usize) -> Self {
        BBox {
            y0: self.y0.saturating_sub(margin),
            x0: self.x0.saturating_sub(margin),
            y1: (self.y1 + margin).min(height),
            x1: (self.x1 + margin).min(width),
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }

    /// Tight box around the set pixels of a `height × width` mask.
    pub fn of_mask(mask: &[u8], height: usize, width: usize) -> Option<Self> {
        let mut b = BBox {
            y0: usize::MAX,
            x0: usize::MAX,
            y1: 0,
            x1: 0,
        };
        for y in 0..height {
            for x in 0..width {
                if mask[y * width + x] != 0 {
                    b.y0 = b.y0.min(y);
                    b.x0 = b.x0.min(x);
                    b.y1 = b.y1.max(y + 1);
                    b.x1 = b.x1.max(x + 1);
                }
            }
        }
        (b.y1 > 0).then_some(b)
    }
}

/// Pixels of an RGB frame within `tol` of `color`, restricted to `region`.
pub fn threshold(frame: &[f32], height: usize, width: usize, color: [f32; 3], tol: f32, region: BBox) -> Vec<u8> {
    let mut out = vec![0u8; height * width];
    for y in region.y0..region.y1.min(height) {
        for x in region.x0..region.x1.min(width) {
            let i = (y * width + x) * 3;
            let px = [frame[i], frame[i + 1], frame[i + 2]];
            if color_distance(px, color) <= tol {
                out[y * width + x] = 1;
            }
        }
    }
    out
}

/// Largest 4-connected component of a binary mask. Ties go to the component
/// whose first pixel comes first in raster order.
pub fn largest_component(mask: &[u8], height: usize, width: usize) -> Vec<u8> {
    let n = height * width;
    let mut label = vec![0u32; n];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..n {
        if mask[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0usize;
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = (p / width, p % width);
            let mut visit = |q: usize| {
                if mask[q] != 0 && label[q] == 0 {
                    label[q] = next;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    label.iter().map(|&l| (best.1 != 0 && l == best.1) as u8).collect()
}

pub fn popcount(mask: &[u8]) -> usize {
    mask.iter().map(|&v| v as usize).sum()
}

/// Intersection-over-union of two same-length binary masks, 1.0 when both
/// are empty.
pub fn mask_iou(a: &[u8], b: &[u8]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.iter().zip(b) {
        inter += (p & q) as usize;
        union += (p | q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_component_picks_bigger_blob() {
        #[rustfmt::skip]
        let m = [
            1, 1, 0, 0, 0,
            1, 0, 0, 1, 1,
            0, 0, 0, 1, 1,
            0, 0, 0, 1, 0,
        ];
        let out = largest_component(&m, 4, 5);
        assert_eq!(popcount(&out), 5);
        assert_eq!(out[0], 0);
        assert_eq!(out[8], 1);
    }

    #[test]
    fn diagonal_pixels_are_not_connected() {
        let m = [1, 0, 0, 1];
        assert_eq!(popcount(&largest_component(&m, 2, 2)), 1);
    }

    #[test]
    fn bbox_dilate_clips() {
        let b = BBox {
            y0: 1,
            x0: 2,
            y1: 3,
            x1: 5,
        };
        let d = b.dilate(4, 6, 7);
        assert_eq!(
            d,
            BBox {
                y0: 0,
                x0: 0,
                y1: 6,
                x1: 7
            }
        );
    }
}

//! Recovers a condition code from a rendered or generated video: palette
//! color by majority vote, shape by fill ratio of the largest blob, and
//! background by the pattern leaving the least residual variance.

use alloc::vec;
use alloc::vec::Vec;

use super::segment::{self, BBox};
use super::{background_value, NUM_BACKGROUNDS, NUM_COLORS, NUM_SHAPES, PALETTE};
use crate::Video;

/// Color tolerance for classifying generated pixels. Half the minimum
/// palette-to-palette distance, well under the palette-to-gray distance.
pub const CLASSIFY_TOLERANCE: f32 = 0.4;

/// Expected fill ratio (blob area / bounding-box area) per shape.
const FILL: [f64; NUM_SHAPES] = [core::f64::consts::FRAC_PI_4, 1.0, 0.5];

/// Per-field classification; `None` when no foreground was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeGuess {
    pub shape: Option<usize>,
    pub color: Option<usize>,
    pub background: usize,
}

fn foreground_color(frame: &[f32]) -> (Option<usize>, Vec<u8>) {
    let px = frame.len() / 3;
    let mut counts = [0usize; NUM_COLORS];
    let mut fg = vec![0u8; px];
    for i in 0..px {
        let p = [frame[3 * i], frame[3 * i + 1], frame[3 * i + 2]];
        for (c, pal) in PALETTE.iter().enumerate() {
            if segment::color_distance(p, *pal) <= CLASSIFY_TOLERANCE {
                counts[c] += 1;
                fg[i] = 1;
            }
        }
    }
    let best = (0..NUM_COLORS).max_by_key(|&c| (counts[c], core::cmp::Reverse(c)));
    (best.filter(|&c| counts[c] > 0), fg)
}

fn shape_of(frame: &[f32], h: usize, w: usize, color: usize) -> Option<usize> {
    let m = segment::threshold(frame, h, w, PALETTE[color], CLASSIFY_TOLERANCE, BBox::full(h, w));
    let blob = segment::largest_component(&m, h, w);
    let area = segment::popcount(&blob);
    if area < 3 {
        return None;
    }
    let bbox = BBox::of_mask(&blob, h, w)?;
    let fill = area as f64 / bbox.area() as f64;
    (0..NUM_SHAPES).min_by(|&a, &b| {
        let da = (FILL[a] - fill).abs();
        let db = (FILL[b] - fill).abs();
        da.total_cmp(&db)
    })
}

fn background_of(frame: &[f32], fg: &[u8], h: usize, w: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for b in 0..NUM_BACKGROUNDS {
        let (mut s, mut s2, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if fg[i] != 0 {
                    continue;
                }
                let gray = (frame[3 * i] + frame[3 * i + 1] + frame[3 * i + 2]) as f64 / 3.0;
                let r = gray - background_value(b, y, x) as f64;
                s += r;
                s2 += r * r;
                n += 1.0;
            }
        }
        let var = if n > 0.0 { s2 / n - (s / n) * (s / n) } else { 0.0 };
        if var < best.0 {
            best = (var, b);
        }
    }
    best.1
}

fn majority(votes: &[usize], size: usize) -> Option<usize> {
    let mut counts = vec![0usize; size];
    for &v in votes {
        counts[v] += 1;
    }
    (0..size)
        .max_by_key(|&c| (counts[c], core::cmp::Reverse(c)))
        .filter(|&c| counts[c] > 0)
}

pub fn classify_video(video: &Video) -> CodeGuess {
    let (f, h, w) = video.dims();
    let mut colors = Vec::new();
    let mut shapes = Vec::new();
    let mut backgrounds = Vec::new();
    for t in 0..f {
        let frame = video.frame(t);
        let (color, fg) = foreground_color(frame);
        if let Some(c) = color {
            colors.push(c);
            if let Some(s) = shape_of(frame, h, w, c) {
                shapes.push(s);
            }
        }
        backgrounds.push(background_of(frame, &fg, h, w));
    }
    CodeGuess {
        shape: majority(&shapes, NUM_SHAPES),
        color: majority(&colors, NUM_COLORS),
        background: majority(&backgrounds, NUM_BACKGROUNDS).unwrap_or(0),
    }
}

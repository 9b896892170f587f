//! Mask mIoU `S_m`: mean IoU over every video and frame between ground-truth
//! masks and masks segmented out of generated frames.
//!
//! The segmenter is a box-prompted color segmenter standing in for a
//! learned one. Inside the ground-truth box (dilated by a few pixels) it
//! picks the palette color covering the most pixels, thresholds on distance
//! to that color and keeps the largest connected component.

use alloc::vec::Vec;

use crate::synthkit::segment::{self, BBox};
use crate::synthkit::PALETTE;
use crate::{Error, MaskSequence, Result, Video};

/// Color tolerance for generated pixels. Generated colors drift more than
/// rendered ones, so this is wider than the extraction tolerance.
pub const SEGMENT_TOLERANCE: f32 = 0.4;

/// Dilation of the prompt box, in pixels.
pub const BOX_MARGIN: usize = 4;

/// `|a ∩ b| / |a ∪ b|`, or 1.0 when both are empty.
pub fn iou(m: &[u8], m_hat: &[u8]) -> Result<f64> {
    if m.len() != m_hat.len() {
        return Err(Error::shape(m.len(), m_hat.len()));
    }
    Ok(segment::mask_iou(m, m_hat))
}

/// Box-prompted segmentation of one RGB frame (`height × width × 3`).
pub fn segment_generated(frame: &[f32], height: usize, width: usize, gt_box: BBox) -> Result<Vec<u8>> {
    if frame.len() != height * width * 3 {
        return Err(Error::shape(height * width * 3, frame.len()));
    }
    if gt_box.is_empty() {
        return Err(Error::EmptyBox);
    }
    if gt_box.y1 > height || gt_box.x1 > width {
        return Err(Error::shape((height, width), (gt_box.y1, gt_box.x1)));
    }
    let region = gt_box.dilate(BOX_MARGIN, height, width);
    let counts: Vec<usize> = PALETTE
        .iter()
        .map(|&c| segment::popcount(&segment::threshold(frame, height, width, c, SEGMENT_TOLERANCE, region)))
        .collect();
    let best = (0..PALETTE.len()).max_by_key(|&c| (counts[c], core::cmp::Reverse(c)));
    match best {
        Some(c) if counts[c] > 0 => {
            let m = segment::threshold(frame, height, width, PALETTE[c], SEGMENT_TOLERANCE, region);
            Ok(segment::largest_component(&m, height, width))
        }
        _ => Ok(alloc::vec![0; height * width]),
    }
}

/// One `(video, frame)` cell of the metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub video: usize,
    pub frame: usize,
    pub gt: Vec<u8>,
    pub predicted: Vec<u8>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub s_m: f64,
    pub per_video: Vec<f64>,
    /// Mean over videos for each frame index.
    pub per_frame: Vec<f64>,
    pub records: Vec<EvalRecord>,
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Segments every frame of every video and aggregates IoU against the
/// ground truth. Frames with an empty ground-truth mask have no prompt box;
/// their prediction is empty and they score 1.0.
pub fn mask_miou(videos: &[Video], gt: &[MaskSequence]) -> Result<MiouReport> {
    if videos.len() != gt.len() {
        return Err(Error::shape(gt.len(), videos.len()));
    }
    if videos.is_empty() {
        return Err(Error::shape("at least one video", 0));
    }
    for (v, m) in videos.iter().zip(gt) {
        if v.dims() != m.dims() {
            return Err(Error::shape(m.dims(), v.dims()));
        }
    }
    let mut records = Vec::new();
    let mut per_video = Vec::with_capacity(videos.len());
    for (i, (v, m)) in videos.iter().zip(gt).enumerate() {
        let (f, h, w) = v.dims();
        let mut ious = Vec::with_capacity(f);
        for j in 0..f {
            let gt_frame = m.frame(j);
            let predicted = match BBox::of_mask(gt_frame, h, w) {
                Some(b) => segment_generated(v.frame(j), h, w, b)?,
                None => alloc::vec![0; h * w],
            };
            let value = segment::mask_iou(gt_frame, &predicted);
            ious.push(value);
            records.push(EvalRecord {
                video: i,
                frame: j,
                gt: gt_frame.to_vec(),
                predicted,
                iou: value,
            });
        }
        per_video.push(mean(&ious));
    }
    let max_frames = gt.iter().map(|m| m.frames).max().unwrap_or(0);
    let per_frame = (0..max_frames)
        .map(|j| {
            let vals: Vec<f64> = records.iter().filter(|r| r.frame == j).map(|r| r.iou).collect();
            mean(&vals)
        })
        .collect();
    let s_m = compensated_sum(records.iter().map(|r| r.iou)) / records.len() as f64;
    Ok(MiouReport {
        s_m,
        per_video,
        per_frame,
        records,
    })
}

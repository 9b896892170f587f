//! Two-stage mask extraction: detect on the first frame, then propagate
//! frame to frame inside the previous box grown by a fixed margin.

use alloc::vec::Vec;

use super::segment::{self, BBox};
use super::{NUM_COLORS, PALETTE};
use crate::{Error, MaskSequence, Result, Video};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    /// RGB L2 distance below which a pixel matches the target color.
    pub tolerance: f32,
    /// Pixels added on every side of the previous frame's box.
    pub margin: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.15,
            margin: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDiagnostic {
    /// IoU between the box-constrained mask and an unconstrained
    /// whole-frame threshold; below 1 means color matches were left outside
    /// the propagation window.
    pub coverage: f64,
    /// Set when `coverage < 0.99`, i.e. tracking likely lost the object.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub masks: MaskSequence,
    pub frames: Vec<FrameDiagnostic>,
}

impl Extraction {
    pub fn flagged_frames(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, d)| d.flagged)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn extract_mask(video: &Video, target_color_id: usize, cfg: ExtractConfig) -> Result<Extraction> {
    if target_color_id >= NUM_COLORS {
        return Err(Error::UnknownCode {
            field: "color",
            index: target_color_id,
            size: NUM_COLORS,
        });
    }
    let (f, h, w) = video.dims();
    let color = PALETTE[target_color_id];
    let full = BBox::full(h, w);

    let first = segment::threshold(video.frame(0), h, w, color, cfg.tolerance, full);
    let first = segment::largest_component(&first, h, w);
    let mut bbox = BBox::of_mask(&first, h, w).ok_or(Error::ObjectNotFound {
        color_id: target_color_id,
    })?;

    let mut masks = MaskSequence::zeros(f, h, w);
    let mut diags = Vec::with_capacity(f);
    for t in 0..f {
        let frame = video.frame(t);
        let window = bbox.dilate(cfg.margin, h, w);
        let local = segment::threshold(frame, h, w, color, cfg.tolerance, window);
        let local = segment::largest_component(&local, h, w);
        let global = segment::threshold(frame, h, w, color, cfg.tolerance, full);
        let coverage = segment::mask_iou(&local, &global);
        diags.push(FrameDiagnostic {
            coverage,
            flagged: coverage < 0.99,
        });
        if let Some(b) = BBox::of_mask(&local, h, w) {
            bbox = b;
        }
        masks.frame_mut(t).copy_from_slice(&local);
    }
    Ok(Extraction { masks, frames: diags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthkit::{gen_triplet, SceneSpec, ShapeKind, Trajectory};

    fn spec() -> SceneSpec {
        SceneSpec {
            shape: ShapeKind::Circle,
            color_id: 2,
            background_id: 1,
            size: 5.0,
            trajectory: Trajectory {
                start: (10.0, 12.0),
                velocity: (1.2, 0.4),
                wave: None,
            },
            frames: 16,
            height: 32,
            width: 48,
            jitter: 0.0,
        }
    }

    #[test]
    fn recovers_rendered_masks() {
        let t = gen_triplet(&spec(), 0).unwrap();
        let ex = extract_mask(&t.video, 2, ExtractConfig::default()).unwrap();
        for f in 0..16 {
            let iou = segment::mask_iou(ex.masks.frame(f), t.masks.frame(f));
            assert!(iou >= 0.99, "frame {f}: iou {iou}");
        }
        assert!(ex.flagged_frames().is_empty());
    }

    #[test]
    fn background_only_video_is_not_found() {
        let mut s = spec();
        s.color_id = 0;
        let t = gen_triplet(&s, 0).unwrap();
        assert_eq!(
            extract_mask(&t.video, 3, ExtractConfig::default()),
            Err(Error::ObjectNotFound { color_id: 3 })
        );
    }

    #[test]
    fn teleport_is_flagged() {
        let mut t = gen_triplet(&spec(), 0).unwrap();
        // Re-render frames 8.. with the shape jumped to the opposite corner.
        let mut far = spec();
        far.trajectory = Trajectory::stationary(40.0, 26.0);
        let jumped = gen_triplet(&far, 0).unwrap();
        let n = t.video.frame_len();
        t.video.data[8 * n..].copy_from_slice(&jumped.video.data[8 * n..]);
        let ex = extract_mask(&t.video, 2, ExtractConfig::default()).unwrap();
        assert!(!ex.frames[7].flagged);
        assert!(ex.frames[8].flagged);
        assert_eq!(ex.frames[8].coverage, 0.0);
    }
}

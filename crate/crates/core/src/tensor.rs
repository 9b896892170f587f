use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// RGB video, `frames × height × width × 3`, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Video {
    pub const CHANNELS: usize = 3;

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![0.0; frames * height * width * Self::CHANNELS],
        }
    }

    pub fn from_data(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = frames * height * width * Self::CHANNELS;
        if data.len() != expected {
            return Err(Error::shape(expected, data.len()));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * Self::CHANNELS
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize) -> usize {
        ((f * self.height + y) * self.width + x) * Self::CHANNELS
    }

    #[inline]
    pub fn pixel(&self, f: usize, y: usize, x: usize) -> [f32; 3] {
        let i = self.index(f, y, x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, f: usize, y: usize, x: usize, rgb: [f32; 3]) {
        let i = self.index(f, y, x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    /// Frames `start..end` as a new video.
    pub fn slice_frames(&self, start: usize, end: usize) -> Video {
        let n = self.frame_len();
        Video {
            frames: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    /// Temporal concatenation; all parts must share spatial dims.
    pub fn concat(parts: &[Video]) -> Result<Video> {
        let first = parts.first().ok_or_else(|| Error::shape("at least one clip", 0usize))?;
        let mut out = Video {
            frames: 0,
            height: first.height,
            width: first.width,
            data: Vec::new(),
        };
        for p in parts {
            if (p.height, p.width) != (first.height, first.width) {
                return Err(Error::shape((first.height, first.width), (p.height, p.width)));
            }
            out.frames += p.frames;
            out.data.extend_from_slice(&p.data);
        }
        Ok(out)
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

/// Binary occupancy, `frames × height × width`, one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskSequence {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskSequence {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![0; frames * height * width],
        }
    }

    pub fn from_data(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::shape(frames * height * width, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::shape("binary mask values", "value > 1"));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, f: usize, y: usize, x: usize) -> u8 {
        self.data[(f * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, f: usize, y: usize, x: usize, v: u8) {
        self.data[(f * self.height + y) * self.width + x] = v;
    }

    pub fn frame(&self, f: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [u8] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> MaskSequence {
        let n = self.frame_len();
        MaskSequence {
            frames: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    pub fn popcount(&self, f: usize) -> usize {
        self.frame(f).iter().map(|&v| v as usize).sum()
    }
}

/// Latent tensor, `frames × height × width × channels` in latent units.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Mask sequences encoded through the same codec as videos.
pub type MotionFeatures = Latent;

impl Latent {
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    pub fn zeros_like(other: &Latent) -> Self {
        Self::zeros(other.frames, other.height, other.width, other.channels)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }

    /// Number of tokens (latent voxels).
    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.dims() == other.dims()
    }
}

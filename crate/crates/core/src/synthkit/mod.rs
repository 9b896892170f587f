//! Synthetic moving-shape videos with exact ground-truth masks.
//!
//! A [`SceneSpec`] describes one colored shape following a parametric path
//! over a gray procedural background. Rendering and mask derive from the same
//! per-pixel inside test, so masks are exact by construction. Palette colors
//! are saturated primaries/secondaries and backgrounds are pure grays, which
//! keeps every palette color at least ~0.8 (RGB L2) away from every
//! background value.

mod classify;
mod edit;
mod extract;
pub(crate) mod segment;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::{self, purpose};
use crate::{Error, MaskSequence, Result, Video};

pub use classify::{classify_video, CodeGuess, CLASSIFY_TOLERANCE};
pub use edit::{combine_masks, edit_mask_affine, Affine};
pub use extract::{extract_mask, ExtractConfig, Extraction, FrameDiagnostic};
pub use segment::{color_distance, largest_component, BBox};

/// Fixed six-entry color palette.
pub const PALETTE: [[f32; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
];

pub const NUM_SHAPES: usize = 3;
pub const NUM_COLORS: usize = PALETTE.len();
pub const NUM_BACKGROUNDS: usize = 4;

/// Vocabulary sizes of the three condition-code fields.
pub const CODE_SIZES: [usize; 3] = [NUM_SHAPES, NUM_COLORS, NUM_BACKGROUNDS];

const BG_LOW: f32 = 0.35;
const BG_HIGH: f32 = 0.6;
const BG_FLAT: f32 = 0.5;
const BG_PERIOD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::UnknownCode {
            field: "shape",
            index: i,
            size: NUM_SHAPES,
        })
    }

    /// Whether the pixel-space point `(px, py)` lies inside the shape of
    /// half-extent `r` centered at `(cx, cy)`. Triangles point up.
    pub fn contains(self, cx: f64, cy: f64, r: f64, px: f64, py: f64) -> bool {
        let dx = px - cx;
        let dy = py - cy;
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeKind::Triangle => dy <= r && dx.abs() <= (dy + r) * 0.5,
        }
    }
}

/// Discrete stand-in for a text prompt: shape, palette color, background.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionCode {
    pub shape: usize,
    pub color: usize,
    pub background: usize,
}

impl ConditionCode {
    pub fn new(shape: ShapeKind, color: usize, background: usize) -> Self {
        Self {
            shape: shape.index(),
            color,
            background,
        }
    }

    pub fn fields(&self) -> [usize; 3] {
        [self.shape, self.color, self.background]
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 3] = ["shape", "color", "background"];
        for (i, (&v, &n)) in self.fields().iter().zip(CODE_SIZES.iter()).enumerate() {
            if v >= n {
                return Err(Error::UnknownCode {
                    field: NAMES[i],
                    index: v,
                    size: n,
                });
            }
        }
        Ok(())
    }

    /// Every code in the vocabulary, in lexicographic order.
    pub fn all() -> Vec<ConditionCode> {
        let mut out = Vec::new();
        for shape in 0..NUM_SHAPES {
            for color in 0..NUM_COLORS {
                for background in 0..NUM_BACKGROUNDS {
                    out.push(ConditionCode {
                        shape,
                        color,
                        background,
                    });
                }
            }
        }
        out
    }
}

/// Shape/color pairings withheld from fine-tuning data: one per shape, each
/// with a color that still appears with the other shapes.
pub fn is_holdout(shape: usize, color: usize) -> bool {
    color >= 3 && color - 3 == shape
}

/// Optional vertical sinusoid added to the linear path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub period: f64,
}

/// Center path in pixels; `position(t) = start + velocity * t (+ wave)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub wave: Option<Wave>,
}

impl Trajectory {
    pub fn stationary(x: f64, y: f64) -> Self {
        Self {
            start: (x, y),
            velocity: (0.0, 0.0),
            wave: None,
        }
    }

    /// Center `(x, y)` at frame `t`.
    pub fn position(&self, t: usize) -> (f64, f64) {
        let tf = t as f64;
        let x = self.start.0 + self.velocity.0 * tf;
        let mut y = self.start.1 + self.velocity.1 * tf;
        if let Some(w) = self.wave {
            y += w.amplitude * libm::sin(core::f64::consts::TAU * tf / w.period);
        }
        (x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub shape: ShapeKind,
    pub color_id: usize,
    pub background_id: usize,
    /// Half-extent of the shape in pixels (radius for circles).
    pub size: f64,
    pub trajectory: Trajectory,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Maximum absolute background brightness offset drawn per seed; 0 disables.
    pub jitter: f64,
}

impl SceneSpec {
    pub fn code(&self) -> ConditionCode {
        ConditionCode::new(self.shape, self.color_id, self.background_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidScene(format!("frames must be >= 2, got {}", self.frames)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidScene("empty frame".into()));
        }
        if !(self.size > 0.0) || !self.size.is_finite() {
            return Err(Error::InvalidScene(format!("bad size {}", self.size)));
        }
        if !(0.0..0.2).contains(&self.jitter) {
            return Err(Error::InvalidScene(format!("jitter {} outside [0, 0.2)", self.jitter)));
        }
        self.code().validate()?;
        let (w, h) = (self.width as f64, self.height as f64);
        for t in 0..self.frames {
            let (cx, cy) = self.trajectory.position(t);
            let r = self.size;
            if !(cx - r >= 0.0 && cx + r <= w && cy - r >= 0.0 && cy + r <= h) {
                return Err(Error::TrajectoryOutOfFrame {
                    frame: t,
                    detail: format!(
                        "center ({cx:.3}, {cy:.3}) with half-extent {r} exceeds {}x{}",
                        self.width, self.height
                    ),
                });
            }
        }
        Ok(())
    }
}

/// A rendered sample: video, condition code and exact mask sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub video: Video,
    pub cond: ConditionCode,
    pub masks: MaskSequence,
}

/// Gray value of background pattern `id` at pixel `(y, x)`, before jitter.
pub fn background_value(id: usize, y: usize, x: usize) -> f32 {
    let hi = |b: bool| if b { BG_HIGH } else { BG_LOW };
    match id {
        0 => BG_FLAT,
        1 => hi((y / BG_PERIOD) % 2 == 1),
        2 => hi((x / BG_PERIOD) % 2 == 1),
        _ => hi((y / BG_PERIOD + x / BG_PERIOD) % 2 == 1),
    }
}

/// Rasterizes the shape of `spec` at frame `t` into `out` (`height × width`).
pub fn rasterize(spec: &SceneSpec, t: usize, out: &mut [u8]) {
    let (cx, cy) = spec.trajectory.position(t);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let inside = spec.shape.contains(cx, cy, spec.size, x as f64 + 0.5, y as f64 + 0.5);
            out[y * spec.width + x] = inside as u8;
        }
    }
}

/// Renders a scene. Deterministic in `(spec, seed)`; the seed only drives
/// background brightness jitter, so with `jitter == 0` it has no effect.
pub fn gen_triplet(spec: &SceneSpec, seed: u64) -> Result<Triplet> {
    spec.validate()?;
    let offset = if spec.jitter > 0.0 {
        let mut r = rng::stream(rng::derive(seed, purpose::JITTER, 0));
        r.random_range(-spec.jitter..spec.jitter) as f32
    } else {
        0.0
    };
    let (f, h, w) = (spec.frames, spec.height, spec.width);
    let mut video = Video::zeros(f, h, w);
    let mut masks = MaskSequence::zeros(f, h, w);
    let color = PALETTE[spec.color_id];
    for t in 0..f {
        rasterize(spec, t, masks.frame_mut(t));
        for y in 0..h {
            for x in 0..w {
                let rgb = if masks.get(t, y, x) == 1 {
                    color
                } else {
                    let g = (background_value(spec.background_id, y, x) + offset).clamp(0.0, 1.0);
                    [g, g, g]
                };
                video.set_pixel(t, y, x, rgb);
            }
        }
    }
    Ok(Triplet {
        video,
        cond: spec.code(),
        masks,
    })
}

/// Which shape/color pairings a sampler may draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComboFilter {
    All,
    ExcludeHoldout,
    HoldoutOnly,
}

impl ComboFilter {
    pub fn allows(self, shape: usize, color: usize) -> bool {
        match self {
            ComboFilter::All => true,
            ComboFilter::ExcludeHoldout => !is_holdout(shape, color),
            ComboFilter::HoldoutOnly => is_holdout(shape, color),
        }
    }
}

/// Parameters of the random scene sampler used to build datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSampling {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub jitter: f64,
    pub combos: ComboFilter,
}

/// Draws a random valid scene; deterministic in `(sampling, seed)`.
pub fn sample_scene(sampling: &SceneSampling, seed: u64) -> Result<SceneSpec> {
    let mut r = rng::stream(rng::derive(seed, purpose::SCENE, 0));
    let allowed: Vec<(usize, usize)> = (0..NUM_SHAPES)
        .flat_map(|s| (0..NUM_COLORS).map(move |c| (s, c)))
        .filter(|&(s, c)| sampling.combos.allows(s, c))
        .collect();
    let (shape, color_id) = allowed[r.random_range(0..allowed.len())];
    let background_id = r.random_range(0..NUM_BACKGROUNDS);
    let (h, w) = (sampling.height as f64, sampling.width as f64);
    let size = r.random_range(0.15 * h..0.22 * h);
    let frames = sampling.frames;

    let mut vx = r.random_range(-0.4..0.4) * w / 24.0;
    let mut vy = r.random_range(-0.2..0.2) * h / 16.0;
    let wave = if r.random_bool(0.5) {
        Some(Wave {
            amplitude: r.random_range(0.0..0.1 * h),
            period: r.random_range(8.0..16.0),
        })
    } else {
        None
    };
    let ux: f64 = r.random_range(0.0..1.0);
    let uy: f64 = r.random_range(0.0..1.0);
    for _ in 0..32 {
        let mut traj = Trajectory {
            start: (0.0, 0.0),
            velocity: (vx, vy),
            wave,
        };
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for t in 0..frames {
            let (dx, dy) = traj.position(t);
            lo_x = lo_x.min(dx);
            hi_x = hi_x.max(dx);
            lo_y = lo_y.min(dy);
            hi_y = hi_y.max(dy);
        }
        let (min_x, max_x) = (size - lo_x, w - size - hi_x);
        let (min_y, max_y) = (size - lo_y, h - size - hi_y);
        if min_x <= max_x && min_y <= max_y {
            traj.start = (min_x + ux * (max_x - min_x), min_y + uy * (max_y - min_y));
            let spec = SceneSpec {
                shape: ShapeKind::from_index(shape)?,
                color_id,
                background_id,
                size,
                trajectory: traj,
                frames,
                height: sampling.height,
                width: sampling.width,
                jitter: sampling.jitter,
            };
            spec.validate()?;
            return Ok(spec);
        }
        vx *= 0.5;
        vy *= 0.5;
    }
    Err(Error::InvalidScene(format!(
        "no feasible trajectory for {}x{} with {} frames",
        sampling.width, sampling.height, frames
    )))
}

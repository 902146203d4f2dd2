//! Network inputs: technical fragments from spatial-temporal grid mini-cube
//! sampling, and bilinearly down-sampled aesthetic clips.
//!
//! Both inputs are built from the same temporally selected frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::video::RawVideo;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Grid cells per side.
    pub grid_s: usize,
    /// Mini-patch side in pixels.
    pub patch: usize,
    /// Temporal mini-cubes.
    pub cubes_t: usize,
    pub frames_per_cube: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// 7 × 32 = 224 pixels per side, 4 × 4 = 16 frames.
    pub fn full() -> Self {
        SamplerConfig {
            grid_s: 7,
            patch: 32,
            cubes_t: 4,
            frames_per_cube: 4,
            seed: 0,
        }
    }

    /// 4 × 16 = 64 pixels per side, 2 × 2 = 4 frames.
    pub fn toy() -> Self {
        SamplerConfig {
            grid_s: 4,
            patch: 16,
            cubes_t: 2,
            frames_per_cube: 2,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Side of the spliced fragment, in pixels.
    pub fn side(&self) -> usize {
        self.grid_s * self.patch
    }

    pub fn clip_len(&self) -> usize {
        self.cubes_t * self.frames_per_cube
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_s == 0 || self.patch == 0 || self.cubes_t == 0 || self.frames_per_cube == 0 {
            return Err(Error::Config(format!("sampler extents must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// How in-cell and in-span offsets are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offsets {
    Random,
    /// Every offset forced to zero.
    Zero,
}

/// Where one output pixel came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSource {
    pub frame: u32,
    pub row: u32,
    pub col: u32,
}

/// One spliced mini-patch: its grid cell, temporal cube, and source origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub cube: usize,
    pub grid_row: usize,
    pub grid_col: usize,
    pub src_row: usize,
    pub src_col: usize,
}

/// Technical input: `frames × side × side × 3` raw pixels plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentClip {
    pub frames: usize,
    pub side: usize,
    pub pixels: Vec<u8>,
    pub sample_map: Vec<SampleSource>,
    pub frame_indices: Vec<usize>,
    pub patches: Vec<PatchRecord>,
    pub config: SamplerConfig,
}

/// Aesthetic input: `frames × side × side × 3` real values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AestheticClip {
    pub frames: usize,
    pub side: usize,
    pub values: Vec<f32>,
    pub frame_indices: Vec<usize>,
}

/// Compact, re-expandable description of a fragment's sample map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentSidecar {
    pub video_id: String,
    pub config: SamplerConfig,
    pub side: usize,
    pub frame_indices: Vec<usize>,
    pub patches: Vec<PatchRecord>,
}

/// Maps a pixel value to the network range `[-1, 1]`.
#[inline]
pub fn normalize_pixel(v: f32) -> f32 {
    (v - 127.5) / 127.5
}

const TEMPORAL_STREAM: u64 = 1 << 40;
const SPATIAL_STREAM: u64 = 2 << 40;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw(seed: u64, id: u64, max_inclusive: usize, offsets: Offsets) -> usize {
    match offsets {
        Offsets::Zero => 0,
        Offsets::Random => stream(seed, id).random_range(0..=max_inclusive),
    }
}

/// Partitions `[0, frames)` into `cubes_t` equal spans and takes
/// `frames_per_cube` consecutive frames from each, starting at a seeded
/// random offset inside the span.
pub fn select_frames(video: &RawVideo, cubes_t: usize, frames_per_cube: usize, seed: u64) -> Result<Vec<usize>> {
    select_frames_with(video.frames(), cubes_t, frames_per_cube, seed, Offsets::Random)
}

pub fn select_frames_with(
    frames: usize,
    cubes_t: usize,
    frames_per_cube: usize,
    seed: u64,
    offsets: Offsets,
) -> Result<Vec<usize>> {
    if cubes_t == 0 || frames_per_cube == 0 {
        return Err(Error::Config("temporal sampling extents must be positive".into()));
    }
    if frames < cubes_t * frames_per_cube {
        return Err(Error::InputTooSmall(format!(
            "{frames} frames cannot hold {cubes_t} cubes of {frames_per_cube}"
        )));
    }
    let span = frames / cubes_t;
    let mut out = Vec::with_capacity(cubes_t * frames_per_cube);
    for c in 0..cubes_t {
        let off = draw(seed, TEMPORAL_STREAM | c as u64, span - frames_per_cube, offsets);
        out.extend((0..frames_per_cube).map(|i| c * span + off + i));
    }
    Ok(out)
}

pub fn sample_fragment(video: &RawVideo, cfg: &SamplerConfig) -> Result<FragmentClip> {
    sample_fragment_with(video, cfg, Offsets::Random)
}

pub fn sample_fragment_with(video: &RawVideo, cfg: &SamplerConfig, offsets: Offsets) -> Result<FragmentClip> {
    cfg.validate()?;
    let side = cfg.side();
    if video.height() < side || video.width() < side {
        return Err(Error::InputTooSmall(format!(
            "{}x{} frames are smaller than a {side}x{side} fragment",
            video.height(),
            video.width()
        )));
    }
    let frame_indices = select_frames_with(video.frames(), cfg.cubes_t, cfg.frames_per_cube, cfg.seed, offsets)?;
    let (cell_h, cell_w) = (video.height() / cfg.grid_s, video.width() / cfg.grid_s);

    let mut patches = Vec::with_capacity(cfg.cubes_t * cfg.grid_s * cfg.grid_s);
    for cube in 0..cfg.cubes_t {
        for gr in 0..cfg.grid_s {
            for gc in 0..cfg.grid_s {
                let cell = ((cube * cfg.grid_s + gr) * cfg.grid_s + gc) as u64;
                // one stream per cell, two draws: row then column
                let (dy, dx) = match offsets {
                    Offsets::Zero => (0, 0),
                    Offsets::Random => {
                        let mut rng = stream(cfg.seed, SPATIAL_STREAM | cell);
                        (
                            rng.random_range(0..=cell_h - cfg.patch),
                            rng.random_range(0..=cell_w - cfg.patch),
                        )
                    }
                };
                patches.push(PatchRecord {
                    cube,
                    grid_row: gr,
                    grid_col: gc,
                    src_row: gr * cell_h + dy,
                    src_col: gc * cell_w + dx,
                });
            }
        }
    }

    let frames = frame_indices.len();
    let mut pixels = vec![0u8; frames * side * side * 3];
    let mut sample_map = vec![
        SampleSource {
            frame: 0,
            row: 0,
            col: 0
        };
        frames * side * side
    ];
    for (ti, &src_t) in frame_indices.iter().enumerate() {
        let cube = ti / cfg.frames_per_cube;
        for p in &patches[cube * cfg.grid_s * cfg.grid_s..(cube + 1) * cfg.grid_s * cfg.grid_s] {
            for py in 0..cfg.patch {
                let (oy, sy) = (p.grid_row * cfg.patch + py, p.src_row + py);
                let ox0 = p.grid_col * cfg.patch;
                let dst = ((ti * side + oy) * side + ox0) * 3;
                let src = video.offset(src_t, sy, p.src_col);
                pixels[dst..dst + cfg.patch * 3].copy_from_slice(&video.data()[src..src + cfg.patch * 3]);
                for px in 0..cfg.patch {
                    sample_map[(ti * side + oy) * side + ox0 + px] = SampleSource {
                        frame: src_t as u32,
                        row: sy as u32,
                        col: (p.src_col + px) as u32,
                    };
                }
            }
        }
    }

    Ok(FragmentClip {
        frames,
        side,
        pixels,
        sample_map,
        frame_indices,
        patches,
        config: cfg.clone(),
    })
}

impl FragmentClip {
    /// Normalized network input of shape `[frames, side, side, 3]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self
            .pixels
            .iter()
            .map(|&v| T::from_f64_lossy(normalize_pixel(v as f32) as f64))
            .collect();
        Tensor::new(vec![self.frames, self.side, self.side, 3], data).expect("fragment extents")
    }

    pub fn frame_pixels(&self, t: usize) -> &[u8] {
        let n = self.side * self.side * 3;
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn sidecar(&self, video_id: &str) -> FragmentSidecar {
        FragmentSidecar {
            video_id: video_id.to_string(),
            config: self.config.clone(),
            side: self.side,
            frame_indices: self.frame_indices.clone(),
            patches: self.patches.clone(),
        }
    }
}

/// Bilinear resize (half-pixel centers, edge clamp) of the frames the
/// sampler selects under `temporal`.
pub fn resize_aesthetic(video: &RawVideo, side: usize, temporal: &SamplerConfig) -> Result<AestheticClip> {
    if side == 0 {
        return Err(Error::Config("aesthetic side must be positive".into()));
    }
    let frame_indices = select_frames(video, temporal.cubes_t, temporal.frames_per_cube, temporal.seed)?;
    let (h, w) = (video.height(), video.width());
    let axis = |n_src: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_src as f64 / side as f64;
        (0..side)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_src - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let (ys, xs) = (axis(h), axis(w));
    let mut values = Vec::with_capacity(frame_indices.len() * side * side * 3);
    for &t in &frame_indices {
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let (a, b) = (video.pixel(t, y0, x0), video.pixel(t, y0, x1));
                let (c, d) = (video.pixel(t, y1, x0), video.pixel(t, y1, x1));
                for ch in 0..3 {
                    // lerp as a + (b - a) w keeps constant regions exact
                    let top = a[ch] as f32 + (b[ch] as f32 - a[ch] as f32) * wx;
                    let bot = c[ch] as f32 + (d[ch] as f32 - c[ch] as f32) * wx;
                    values.push(top + (bot - top) * wy);
                }
            }
        }
    }
    Ok(AestheticClip {
        frames: frame_indices.len(),
        side,
        values,
        frame_indices,
    })
}

impl AestheticClip {
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self
            .values
            .iter()
            .map(|&v| T::from_f64_lossy(normalize_pixel(v) as f64))
            .collect();
        Tensor::new(vec![self.frames, self.side, self.side, 3], data).expect("aesthetic extents")
    }

    /// Frames rounded back to 8-bit for image export.
    pub fn to_u8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

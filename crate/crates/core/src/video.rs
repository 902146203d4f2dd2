use crate::error::{Error, Result};

/// Decoded video: `frames × height × width × 3` unsigned 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub id: String,
    pub fps: f64,
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RawVideo {
    pub fn new(
        id: impl Into<String>,
        fps: f64,
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<u8>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Contract(format!(
                "empty video {frames}x{height}x{width}"
            )));
        }
        if data.len() != frames * height * width * 3 {
            return Err(Error::dim(
                "video",
                &[frames, height, width, 3],
                &[data.len()],
            ));
        }
        Ok(RawVideo {
            id: id.into(),
            fps,
            frames,
            height,
            width,
            data,
        })
    }

    pub fn filled(id: impl Into<String>, frames: usize, height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(frames * height * width * 3).collect();
        RawVideo::new(id, 30.0, frames, height, width, data).expect("non-empty extents")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width * 3;
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn offset(&self, t: usize, row: usize, col: usize) -> usize {
        ((t * self.height + row) * self.width + col) * 3
    }

    #[inline]
    pub fn pixel(&self, t: usize, row: usize, col: usize) -> [u8; 3] {
        let o = self.offset(t, row, col);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Mean Rec.601 luma over all pixels, in `[0, 255]`.
    pub fn mean_luma(&self) -> f64 {
        let sum: f64 = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .sum();
        sum / (self.data.len() / 3) as f64
    }
}

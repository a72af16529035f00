//! Dense per-pixel containers shared by the pipeline stages.

use crate::error::{Error, Result};

/// Row-major `height x width x channels` array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Per-pixel class probabilities, `channels == K`.
pub type ProbabilityMap = PixelMap;
/// Per-pixel singleton masses followed by m(Ω), `channels == K + 1`.
pub type MassMap = PixelMap;
/// Per-pixel feature vectors.
pub type FeatureMap = PixelMap;
/// Per-pixel conflict, `channels == 1`.
pub type ConflictMap = PixelMap;

impl PixelMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::ShapeMismatch("pixel map size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} map needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Pixel vectors in row-major order.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels.max(1))
    }

    pub fn same_shape(&self, other: &PixelMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Mirrors columns. Applying it twice restores the map exactly.
    pub fn flip_horizontal(&self) -> PixelMap {
        let mut out = PixelMap::zeros(self.height, self.width, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(y, self.width - 1 - x)
                    .copy_from_slice(self.pixel(y, x));
            }
        }
        out
    }

    /// Copies channel `c` into a single-channel map.
    pub fn channel(&self, c: usize) -> PixelMap {
        let data = self.rows().map(|px| px[c]).collect();
        PixelMap {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

/// Integer segmentation labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} label map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
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

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn flip_horizontal(&self) -> LabelMap {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.width.max(1)) {
            row.reverse();
        }
        LabelMap { data, ..*self }
    }
}

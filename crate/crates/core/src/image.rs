//! In-memory RGB image buffer.
//!
//! Pixel values are stored as `f32` in `[0, 1]`, interleaved HWC. All images
//! produced by the codec and the noise synthesisers are exact multiples of
//! `1/255`, so conversion to and from 8-bit storage round-trips losslessly.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {height}x{width}")]
    EmptyDimensions { height: usize, width: usize },
    #[error("pixel data length {len} does not match {height}x{width}x3")]
    BadDataLength { len: usize, height: usize, width: usize },
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// An RGB image with values in `[0, 1]`, stored row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl ImageBuffer {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyDimensions { height, width });
        }
        if data.len() != height * width * CHANNELS {
            return Err(ImageError::BadDataLength { len: data.len(), height, width });
        }
        Ok(Self { height, width, data })
    }

    /// A constant-valued image; `value` is clamped to `[0, 1]`.
    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        let v = value.clamp(0.0, 1.0);
        Self { height, width, data: vec![v; height * width * CHANNELS] }
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() != height * width * CHANNELS {
            return Err(ImageError::BadDataLength { len: bytes.len(), height, width });
        }
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(height, width, data)
    }

    /// Rounds to the nearest 8-bit code. Values produced by this crate are
    /// already exact multiples of `1/255`, so this is lossless for them.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * CHANNELS + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * CHANNELS + ch] = v;
    }

    pub fn same_dims(&self, other: &Self) -> Result<(), ImageError> {
        if self.height != other.height || self.width != other.width {
            return Err(ImageError::DimensionMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }

    /// Snaps every value to the nearest multiple of `1/255` in `[0, 1]`,
    /// the stored-image convention used throughout.
    pub fn quantize_8bit(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&v| libm::roundf(v.clamp(0.0, 1.0) * 255.0) / 255.0)
            .collect();
        Self { height: self.height, width: self.width, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_round_trip_is_lossless() {
        let bytes: Vec<u8> = (0u32..=255).map(|v| v as u8).cycle().take(4 * 64 * 3).collect();
        let img = ImageBuffer::from_u8(4, 64, &bytes).unwrap();
        assert_eq!(img.to_u8(), bytes);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(ImageBuffer::new(0, 4, vec![]).is_err());
        assert!(ImageBuffer::new(2, 2, vec![0.0; 5]).is_err());
        let a = ImageBuffer::constant(4, 4, 0.5);
        let b = ImageBuffer::constant(4, 5, 0.5);
        assert!(a.same_dims(&b).is_err());
    }

    #[test]
    fn quantize_snaps_to_code_points() {
        let img = ImageBuffer::new(1, 2, vec![0.5001, 0.0, 1.0, 0.9999, 0.2, 0.70001]).unwrap();
        let q = img.quantize_8bit();
        for &v in q.pixels() {
            let k = v * 255.0;
            assert!((k - k.round()).abs() < 1e-5);
        }
    }
}

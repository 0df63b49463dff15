//! Linear RGB image buffer.

use crate::error::{Error, Result};
use crate::math::Rgb;

/// Display gamma used for PNG output and reference-image decoding.
pub const DISPLAY_GAMMA: f64 = 2.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, Rgb::zeros())
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Image {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Rgb) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(&Rgb) -> Rgb) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(f).collect(),
        }
    }

    pub fn scaled(&self, k: f64) -> Image {
        self.map(|p| p * k)
    }

    /// Channel `c` as a plane of scalars.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().map(|p| p[c]).collect()
    }

    /// Gamma-encodes into `[0, 1]` for display and display-space metrics.
    pub fn to_display(&self) -> Image {
        self.map(|p| p.map(encode_display))
    }

    /// Inverse of [`Image::to_display`].
    pub fn from_display(&self) -> Image {
        self.map(|p| p.map(decode_display))
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[inline]
pub fn encode_display(v: f64) -> f64 {
    v.clamp(0.0, 1.0).powf(1.0 / DISPLAY_GAMMA)
}

#[inline]
pub fn decode_display(v: f64) -> f64 {
    v.clamp(0.0, 1.0).powf(DISPLAY_GAMMA)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_round_trip() {
        for v in [0.0, 0.01, 0.2, 0.5, 1.0] {
            assert!((decode_display(encode_display(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_checks() {
        assert!(Image::from_pixels(2, 2, vec![Rgb::zeros(); 3]).is_err());
        let a = Image::new(2, 3);
        let b = Image::new(3, 2);
        assert!(a.same_shape(&b).is_err());
    }
}

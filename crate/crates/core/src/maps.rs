//! Raster containers shared across the pipeline.

use crate::error::{Error, Result};

/// Per-pixel ground-truth category ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Usage("label map must not be empty".into()));
        }
        if data.len() != width * height {
            return Err(Error::dim(
                "label_map",
                format!("{width}×{height} needs {} labels, got {}", width * height, data.len()),
            ));
        }
        Ok(LabelMap { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u32) -> Result<Self> {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct labels.
    pub fn unique(&self) -> Vec<u32> {
        let mut v = self.data.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn same_extent(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// RGB image with channels in [0, 1], row-major interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Usage("image must not be empty".into()));
        }
        if data.len() != width * height {
            return Err(Error::dim(
                "rgb_image",
                format!("{width}×{height} needs {} pixels, got {}", width * height, data.len()),
            ));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f32; 3]] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }
}

/// Converts sRGB (D65) in [0,1] to CIE L*a*b*.
pub fn srgb_to_lab([r, g, b]: [f32; 3]) -> [f32; 3] {
    fn linear(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let (r, g, b) = (linear(r as f64), linear(g as f64), linear(b as f64));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    // D65 reference white
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_reference_points() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let black = srgb_to_lab([0.0, 0.0, 0.0]);
        assert!(black.iter().all(|v| v.abs() < 1e-4));
        // sRGB red ≈ (53.24, 80.09, 67.20)
        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.05 && (red[1] - 80.09).abs() < 0.1 && (red[2] - 67.20).abs() < 0.1);
    }

    #[test]
    fn label_map_validation() {
        assert!(LabelMap::new(0, 3, vec![]).is_err());
        assert!(LabelMap::new(2, 2, vec![0; 3]).is_err());
        let m = LabelMap::from_fn(3, 2, |x, y| (x + y) as u32).unwrap();
        assert_eq!(m.get(2, 1), 3);
        assert_eq!(m.unique(), vec![0, 1, 2, 3]);
    }
}

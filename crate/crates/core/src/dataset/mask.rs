use std::collections::BTreeSet;

use crate::error::{validation, Result};

/// Axis-aligned pixel box, half-open: `x0..x1`, `y0..y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoxRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxRegion {
    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersection(&self, other: &BoxRegion) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn iou(&self, other: &BoxRegion) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Per-pixel object-identity grid; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    labels: Vec<u16>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![0; width * height] }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(validation(format!("mask {width}x{height} needs {} labels, got {}", width * height, labels.len())));
        }
        Ok(Self { width, height, labels })
    }

    /// Mask where pixels set in `binary` carry `id`.
    pub fn from_binary(width: usize, height: usize, binary: &[bool], id: u16) -> Result<Self> {
        let labels = binary.iter().map(|&b| if b { id } else { 0 }).collect();
        Self::from_labels(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: u16) {
        self.labels[y * self.width + x] = id;
    }

    pub fn same_size(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Non-zero ids present.
    pub fn ids(&self) -> BTreeSet<u16> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    pub fn binary(&self, id: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id).collect()
    }

    pub fn binary_f64(&self, id: u16) -> Vec<f64> {
        self.labels.iter().map(|&l| if l == id { 1.0 } else { 0.0 }).collect()
    }

    pub fn count(&self, id: u16) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }

    pub fn bbox(&self, id: u16) -> Option<BoxRegion> {
        let mut b: Option<BoxRegion> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) == id {
                    let e = b.get_or_insert(BoxRegion { x0: x, y0: y, x1: x + 1, y1: y + 1 });
                    e.x0 = e.x0.min(x);
                    e.y0 = e.y0.min(y);
                    e.x1 = e.x1.max(x + 1);
                    e.y1 = e.y1.max(y + 1);
                }
            }
        }
        b
    }

    /// Pixel-centre centroid `(x, y)` of an object.
    pub fn centroid(&self, id: u16) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) == id {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Copies pixels of `id` from `other` into `self`, overwriting.
    pub fn paint(&mut self, other: &Mask, id: u16) {
        for (dst, &src) in self.labels.iter_mut().zip(&other.labels) {
            if src == id {
                *dst = id;
            }
        }
    }
}

/// 8-bit RGB image, row-major interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(validation(format!("image {width}x{height} needs {} bytes, got {}", width * height * 3, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_and_centroid() {
        let mut m = Mask::new(8, 8);
        for y in 2..4 {
            for x in 1..5 {
                m.set(x, y, 3);
            }
        }
        assert_eq!(m.bbox(3), Some(BoxRegion { x0: 1, y0: 2, x1: 5, y1: 4 }));
        assert_eq!(m.centroid(3), Some((2.5, 2.5)));
        assert_eq!(m.bbox(1), None);
        assert_eq!(m.ids(), BTreeSet::from([3]));
    }

    #[test]
    fn box_iou() {
        let a = BoxRegion { x0: 0, y0: 0, x1: 4, y1: 4 };
        let b = BoxRegion { x0: 2, y0: 0, x1: 6, y1: 4 };
        assert!((a.iou(&b) - 8.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_sizes() {
        assert!(Mask::from_labels(2, 2, vec![0; 3]).is_err());
        assert!(RgbImage::from_raw(2, 2, vec![0; 11]).is_err());
    }
}

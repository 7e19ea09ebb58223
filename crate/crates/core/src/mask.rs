//! Binary masks, 2D detections and the run-length wire encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassId, UNLABELED};

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    /// Pixel holding the rectangle's center point.
    pub fn center_pixel(&self) -> (usize, usize) {
        ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)
    }
}

/// Full-frame binary mask. Only the tight bounding region of the set pixels
/// is stored, so small masks on large frames stay small.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    region: Option<BBox>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            region: None,
            bits: Vec::new(),
        }
    }

    /// Builds a mask from set pixel coordinates (duplicates allowed).
    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let Some(region) = bounds(pixels) else {
            return Self::empty(width, height);
        };
        assert!(region.x1 <= width && region.y1 <= height, "pixel outside mask frame");
        let mut bits = vec![false; region.width() * region.height()];
        for &(x, y) in pixels {
            bits[(y - region.y0) * region.width() + (x - region.x0)] = true;
        }
        Self {
            width,
            height,
            region: Some(region),
            bits,
        }
    }

    /// Builds a mask from a row-major full-frame buffer.
    pub fn from_dense(width: usize, height: usize, dense: &[bool]) -> Self {
        assert_eq!(dense.len(), width * height);
        let pixels: Vec<(usize, usize)> = dense
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % width, i / width))
            .collect();
        Self::from_pixels(width, height, &pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Tight bounding box of the set pixels, `None` for an empty mask.
    pub fn bounds(&self) -> Option<BBox> {
        self.region
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        match self.region {
            Some(r) if r.contains(x, y) => self.bits[(y - r.y0) * r.width() + (x - r.x0)],
            _ => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_none()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.region.unwrap_or(BBox {
            x0: 0,
            y0: 0,
            x1: 0,
            y1: 0,
        });
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (r.x0 + i % r.width(), r.y0 + i / r.width()))
    }

    /// Morphological erosion with a 3x3 square element, applied `steps`
    /// times. Pixels outside the frame count as unset.
    pub fn erode(&self, steps: usize) -> Mask {
        let mut current = self.clone();
        for _ in 0..steps {
            if current.is_empty() {
                break;
            }
            let kept: Vec<(usize, usize)> = current
                .pixels()
                .filter(|&(x, y)| {
                    (-1isize..=1).all(|dy| {
                        (-1isize..=1).all(|dx| {
                            let (nx, ny) = (x as isize + dx, y as isize + dy);
                            nx >= 0
                                && ny >= 0
                                && (nx as usize) < current.width
                                && (ny as usize) < current.height
                                && current.get(nx as usize, ny as usize)
                        })
                    })
                })
                .collect();
            current = Mask::from_pixels(self.width, self.height, &kept);
        }
        current
    }
}

fn bounds(pixels: &[(usize, usize)]) -> Option<BBox> {
    let (&(x, y), rest) = pixels.split_first()?;
    let mut b = BBox {
        x0: x,
        y0: y,
        x1: x + 1,
        y1: y + 1,
    };
    for &(x, y) in rest {
        b.x0 = b.x0.min(x);
        b.y0 = b.y0.min(y);
        b.x1 = b.x1.max(x + 1);
        b.y1 = b.y1.max(y + 1);
    }
    Some(b)
}

/// One labeled region reported by a segmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub label: ClassId,
    pub confidence: f64,
    pub bbox: BBox,
    pub mask: Mask,
}

impl Detection2D {
    /// Detection whose box is the mask's tight bounds. `None` for empty masks.
    pub fn from_mask(label: ClassId, confidence: f64, mask: Mask) -> Option<Self> {
        let bbox = mask.bounds()?;
        Some(Self {
            label,
            confidence,
            bbox,
            mask,
        })
    }

    /// Checks the detection invariants against an image of `width x height`.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.label == UNLABELED {
            return Err(Error::Data("detection carries the unlabeled class".into()));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(Error::Data(format!(
                "detection confidence {} outside (0, 1]",
                self.confidence
            )));
        }
        let b = &self.bbox;
        if !(b.x0 < b.x1 && b.x1 <= width && b.y0 < b.y1 && b.y1 <= height) {
            return Err(Error::Data(format!(
                "bbox {b:?} invalid for {width}x{height} image"
            )));
        }
        if self.mask.width() != width || self.mask.height() != height {
            return Err(Error::Data(format!(
                "mask is {}x{}, image is {width}x{height}",
                self.mask.width(),
                self.mask.height()
            )));
        }
        if let Some(m) = self.mask.bounds() {
            if !b.contains_box(&m) {
                return Err(Error::Data("mask pixels outside bbox".into()));
            }
        }
        Ok(())
    }
}

/// Row-major run-length encoding. `counts` alternate unset/set runs and
/// always start with an unset run (possibly zero).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl Rle {
    pub fn encode(mask: &Mask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let total = w * h;
        let mut counts = Vec::new();
        let mut pos = 0usize;
        let mut run: Option<(usize, usize)> = None;
        let flush = |counts: &mut Vec<u64>, pos: &mut usize, (start, len): (usize, usize)| {
            counts.push((start - *pos) as u64);
            counts.push(len as u64);
            *pos = start + len;
        };
        for (x, y) in mask.pixels() {
            let idx = y * w + x;
            run = match run {
                Some((start, len)) if start + len == idx => Some((start, len + 1)),
                Some(r) => {
                    flush(&mut counts, &mut pos, r);
                    Some((idx, 1))
                }
                None => Some((idx, 1)),
            };
        }
        if let Some(r) = run {
            flush(&mut counts, &mut pos, r);
        }
        if pos < total || counts.is_empty() {
            counts.push((total - pos) as u64);
        }
        Self {
            size: [h, w],
            counts,
        }
    }

    pub fn decode(&self) -> Result<Mask> {
        let [h, w] = self.size;
        let total: u64 = self.counts.iter().sum();
        if total != (w * h) as u64 {
            return Err(Error::Data(format!(
                "RLE counts sum to {total}, expected {}",
                w * h
            )));
        }
        let mut pixels = Vec::new();
        let mut idx = 0usize;
        for (i, &run) in self.counts.iter().enumerate() {
            if i % 2 == 1 {
                for p in idx..idx + run as usize {
                    pixels.push((p % w, p / w));
                }
            }
            idx += run as usize;
        }
        Ok(Mask::from_pixels(w, h, &pixels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straightforward dense encoder used as the reference.
    fn rle_reference(dense: &[bool]) -> Vec<u64> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0;
        for &b in dense {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    #[test]
    fn rle_starts_with_zero_run() {
        let mask = Mask::from_pixels(3, 2, &[(0, 0), (1, 0), (2, 1)]);
        let rle = Rle::encode(&mask);
        assert_eq!(rle.size, [2, 3]);
        assert_eq!(rle.counts, vec![0, 2, 3, 1]);
        assert_eq!(rle.decode().unwrap(), mask);
    }

    #[test]
    fn rle_of_empty_mask() {
        let rle = Rle::encode(&Mask::empty(4, 5));
        assert_eq!(rle.counts, vec![20]);
        assert!(rle.decode().unwrap().is_empty());
    }

    #[test]
    fn rle_bad_sum() {
        let rle = Rle {
            size: [2, 2],
            counts: vec![1, 2],
        };
        assert!(rle.decode().is_err());
    }

    #[test]
    fn erosion_shrinks_square() {
        let pixels: Vec<_> = (2..7).flat_map(|y| (2..7).map(move |x| (x, y))).collect();
        let mask = Mask::from_pixels(10, 10, &pixels);
        let one = mask.erode(1);
        assert_eq!(one.count(), 9);
        assert_eq!(
            one.bounds(),
            Some(BBox {
                x0: 3,
                y0: 3,
                x1: 6,
                y1: 6
            })
        );
        assert_eq!(mask.erode(2).count(), 1);
        assert!(mask.erode(3).is_empty());
        assert_eq!(mask.erode(0), mask);
    }

    #[test]
    fn detection_validation() {
        let mask = Mask::from_pixels(8, 8, &[(2, 2), (3, 3)]);
        let mut det = Detection2D::from_mask(1, 0.5, mask).unwrap();
        assert!(det.validate(8, 8).is_ok());
        assert!(det.validate(8, 9).is_err());
        det.confidence = 0.0;
        assert!(det.validate(8, 8).is_err());
        det.confidence = 1.0;
        det.bbox = BBox {
            x0: 3,
            y0: 3,
            x1: 4,
            y1: 4,
        };
        assert!(det.validate(8, 8).is_err());
        det.bbox.x0 = 0;
        det.bbox.y0 = 0;
        det.label = 0;
        assert!(det.validate(8, 8).is_err());
    }

    proptest! {
        #[test]
        fn rle_matches_reference_and_round_trips(
            (w, h, dense) in (1usize..12, 1usize..12)
                .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(any::<bool>(), w * h)))
        ) {
            let mask = Mask::from_dense(w, h, &dense);
            let rle = Rle::encode(&mask);
            prop_assert_eq!(&rle.counts, &rle_reference(&dense));
            prop_assert_eq!(rle.counts.iter().sum::<u64>(), (w * h) as u64);
            prop_assert_eq!(rle.decode().unwrap(), mask);
        }
    }
}

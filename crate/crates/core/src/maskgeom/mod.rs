//! Segmentation supervision targets: the minimal bounding box of a binary mask
//! plus the centres of its largest inscribed circles, chosen greedily under a
//! pairwise circle-IoU cap.
//!
//! Coordinates: origin top-left, `x` is the column, `y` the row. Boxes are
//! inclusive pixel coordinates `[x_left, y_top, x_right, y_bottom]`.

mod circle;
mod edt;
mod pgm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use circle::{circle_iou, intersection_area, Circle};
pub use edt::{distance_transform, DistanceField};
pub use pgm::{mask_from_pgm_bytes, read_pgm_mask};

pub const DEFAULT_IOU_CAP: f64 = 0.3;
pub const DEFAULT_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::BadLength {
                rows: height,
                cols: width,
                actual: bits.len(),
            });
        }
        Ok(BinaryMask { height, width, bits })
    }

    /// `f(x, y)` decides each pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BoundingBox {
    pub x_left: usize,
    pub y_top: usize,
    pub x_right: usize,
    pub y_bottom: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_left..=self.x_right).contains(&x) && (self.y_top..=self.y_bottom).contains(&y)
    }
}

impl From<[usize; 4]> for BoundingBox {
    fn from([x_left, y_top, x_right, y_bottom]: [usize; 4]) -> Self {
        BoundingBox {
            x_left,
            y_top,
            x_right,
            y_bottom,
        }
    }
}

impl From<BoundingBox> for [usize; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_left, b.y_top, b.x_right, b.y_bottom]
    }
}

/// Box plus point prompts derived from one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionTarget {
    pub bbox: BoundingBox,
    /// `(x, y)` pixel centres, largest circle first.
    pub points: Vec<[usize; 2]>,
    /// Set when fewer circles passed the IoU cap than requested and the
    /// largest centre was repeated to fill the list.
    pub degenerate: bool,
    /// Circles actually accepted (not padded).
    #[serde(skip)]
    pub circles: Vec<Circle>,
}

pub fn bounding_box(mask: &BinaryMask) -> Result<BoundingBox> {
    let mut acc: Option<BoundingBox> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            acc = Some(match acc {
                None => BoundingBox {
                    x_left: x,
                    y_top: y,
                    x_right: x,
                    y_bottom: y,
                },
                Some(b) => BoundingBox {
                    x_left: b.x_left.min(x),
                    y_top: b.y_top,
                    x_right: b.x_right.max(x),
                    y_bottom: y,
                },
            });
        }
    }
    acc.ok_or(Error::EmptyMask)
}

/// Greedy inscribed-circle prompt selection.
///
/// Foreground pixels are ranked by distance-transform radius, descending, ties
/// broken by `(y, x)` ascending. A candidate is accepted when its circle has
/// IoU at most `iou_cap` with every circle accepted so far; selection stops at
/// `k`. Short lists are padded with the first centre and flagged degenerate.
pub fn sample_points(mask: &BinaryMask, k: usize, iou_cap: f64) -> Result<SupervisionTarget> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    if !(0.0..=1.0).contains(&iou_cap) {
        return Err(Error::config("iou_cap", format!("must lie in [0, 1], got {iou_cap}")));
    }
    let bbox = bounding_box(mask)?;
    let field = distance_transform(mask);

    let mut candidates: Vec<(u64, usize, usize)> = Vec::with_capacity(mask.foreground_count());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                candidates.push((field.squared(x, y), y, x));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut circles: Vec<Circle> = Vec::with_capacity(k);
    let mut points: Vec<[usize; 2]> = Vec::with_capacity(k);
    for &(sq, y, x) in &candidates {
        let c = Circle::new(x as f64, y as f64, (sq as f64).sqrt());
        if circles.iter().all(|prev| circle_iou(prev, &c) <= iou_cap) {
            circles.push(c);
            points.push([x, y]);
            if points.len() == k {
                break;
            }
        }
    }
    let degenerate = points.len() < k;
    let first = points[0];
    points.resize(k, first);
    Ok(SupervisionTarget {
        bbox,
        points,
        degenerate,
        circles,
    })
}

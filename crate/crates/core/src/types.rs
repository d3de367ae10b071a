//! Shared domain types: object categories, pixel boxes, per-frame
//! observations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionAttribute;

/// Expected object classes in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Person,
    Bicycle,
    Car,
    Motorcycle,
}

impl Category {
    pub const COUNT: usize = 4;
    pub const ALL: [Category; 4] = [
        Category::Person,
        Category::Bicycle,
        Category::Car,
        Category::Motorcycle,
    ];

    /// Index into the one-hot encoding.
    pub fn index(self) -> usize {
        match self {
            Category::Person => 0,
            Category::Bicycle => 1,
            Category::Car => 2,
            Category::Motorcycle => 3,
        }
    }

    pub fn from_index(idx: usize) -> Option<Category> {
        Category::ALL.get(idx).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Person => "person",
            Category::Bicycle => "bicycle",
            Category::Car => "car",
            Category::Motorcycle => "motorcycle",
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Category> {
        match s {
            "person" => Ok(Category::Person),
            "bicycle" => Ok(Category::Bicycle),
            "car" => Ok(Category::Car),
            "motorcycle" => Ok(Category::Motorcycle),
            other => Err(Error::invalid_argument(format!(
                "unknown category {other:?} (expected person, bicycle, car or motorcycle)"
            ))),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned pixel box with half-open extents: pixel `(ix, iy)` is
/// covered iff `x1 <= ix < x2` and `y1 <= iy < y2`, so the covered area is
/// exactly `(x2 - x1) * (y2 - y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1.is_finite()
            && self.y1.is_finite()
            && self.x2.is_finite()
            && self.y2.is_finite()
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(0.0) * h.max(0.0)
    }

    /// Intersection over union. Degenerate (zero-area) boxes yield 0.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let a = self.area();
        let b = other.area();
        if a <= 0.0 || b <= 0.0 {
            return 0.0;
        }
        let inter = self.intersection_area(other);
        inter / (a + b - inter)
    }

    /// Integer pixel columns covered by the box, clipped to `[0, width)`.
    pub fn pixel_cols(&self, width: usize) -> std::ops::Range<usize> {
        clip_range(self.x1, self.x2, width)
    }

    /// Integer pixel rows covered by the box, clipped to `[0, height)`.
    pub fn pixel_rows(&self, height: usize) -> std::ops::Range<usize> {
        clip_range(self.y1, self.y2, height)
    }
}

/// Integer coordinates `i` with `lo <= i < hi`, clipped to `[0, limit)`.
fn clip_range(lo: f64, hi: f64, limit: usize) -> std::ops::Range<usize> {
    let start = lo.ceil().max(0.0) as usize;
    let end = (hi.ceil().max(0.0) as usize).min(limit);
    start.min(end)..end
}

/// One tracked object at one frame, carrying the attributes deposited into
/// the activity heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletObservation {
    pub video_id: String,
    pub track_id: u64,
    pub frame: u64,
    pub bbox: BoundingBox,
    pub category: Category,
    pub motion: MotionAttribute,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_round_trip() {
        for cat in Category::ALL {
            assert_eq!(cat.as_str().parse::<Category>().unwrap(), cat);
            assert_eq!(Category::from_index(cat.index()), Some(cat));
        }
        assert!("truck".parse::<Category>().is_err());
    }

    #[test]
    fn iou_identical_box_is_one() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(20.0, 20.0, 30.0, 30.0);
        assert_eq!(a.iou(&b), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // [0,0,10,10] vs [5,0,15,10]: inter 50, union 150.
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_iou_is_zero() {
        let a = BoundingBox::new(0.0, 0.0, 0.0, 10.0);
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&b), 0.0);
        assert_eq!(a.iou(&a), 0.0);
    }

    #[test]
    fn pixel_ranges_are_half_open() {
        let b = BoundingBox::new(0.0, 2.5, 10.0, 4.0);
        assert_eq!(b.pixel_cols(8), 0..8);
        assert_eq!(b.pixel_rows(100), 3..4);
        // Negative extents clip to zero.
        let c = BoundingBox::new(-5.0, -5.0, 3.0, 2.0);
        assert_eq!(c.pixel_cols(100), 0..3);
        assert_eq!(c.pixel_rows(100), 0..2);
    }
}

//! Axis-aligned box arithmetic: area, intersection, IoU, and the per-axis
//! affine maps used to move generation onto a reference box and back.
//!
//! Coordinates are continuous; a box `[x1, y1, x2, y2]` has area
//! `(x2 - x1) * (y2 - y1)` with no "+1" pixel convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box with `x2 > x1`, `y2 > y1` and finite coordinates.
///
/// Serialized as the array `[x1, y1, x2, y2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// The unit box `[0, 0, 1, 1]`, the frame all feasible-space work runs in.
pub const UNIT_BOX: BBox = BBox {
    x1: 0.0,
    y1: 0.0,
    x2: 1.0,
    y2: 1.0,
};

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(invalid("requires x2 > x1 and y2 > y1"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box spanned by a top-left and a bottom-right corner.
    pub fn from_corners(top_left: Point, bottom_right: Point) -> Result<Self> {
        Self::new(top_left.x, top_left.y, bottom_right.x, bottom_right.y)
    }

    /// COCO-style `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }
    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }
    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }
    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }
    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn top_left(&self) -> Point {
        Point::new(self.x1, self.y1)
    }

    pub fn bottom_right(&self) -> Point {
        Point::new(self.x2, self.y2)
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from([x1, y1, x2, y2]: [f64; 4]) -> Result<Self> {
        Self::new(x1, y1, x2, y2)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

#[inline]
pub fn area(b: &BBox) -> f64 {
    b.width() * b.height()
}

/// Overlap area; zero for boxes that do not overlap in either axis.
#[inline]
pub fn intersection(b: &BBox, c: &BBox) -> f64 {
    let w = b.x2.min(c.x2) - b.x1.max(c.x1);
    let h = b.y2.min(c.y2) - b.y1.max(c.y1);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

#[inline]
pub fn iou(b: &BBox, c: &BBox) -> f64 {
    let inter = intersection(b, c);
    inter / (area(b) + area(c) - inter)
}

/// Per-axis scale followed by a shift: `p -> (scale_x * p.x + shift_x, scale_y * p.y + shift_y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    scale_x: f64,
    scale_y: f64,
    shift_x: f64,
    shift_y: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        scale_x: 1.0,
        scale_y: 1.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };

    pub fn new(scale_x: f64, scale_y: f64, shift_x: f64, shift_y: f64) -> Result<Self> {
        if !(scale_x > 0.0 && scale_y > 0.0 && scale_x.is_finite() && scale_y.is_finite()) {
            return Err(Error::param("affine scales must be finite and strictly positive"));
        }
        if !(shift_x.is_finite() && shift_y.is_finite()) {
            return Err(Error::param("affine shifts must be finite"));
        }
        Ok(Self {
            scale_x,
            scale_y,
            shift_x,
            shift_y,
        })
    }

    pub fn scale_x(&self) -> f64 {
        self.scale_x
    }
    pub fn scale_y(&self) -> f64 {
        self.scale_y
    }
    pub fn shift_x(&self) -> f64 {
        self.shift_x
    }
    pub fn shift_y(&self) -> f64 {
        self.shift_y
    }

    pub fn apply_point(&self, p: Point) -> Point {
        Point::new(
            self.scale_x * p.x + self.shift_x,
            self.scale_y * p.y + self.shift_y,
        )
    }

    pub fn invert_point(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.shift_x) / self.scale_x,
            (p.y - self.shift_y) / self.scale_y,
        )
    }

    /// Image of `b`. Positive scales keep corner order, so the result is a valid box
    /// unless the image collapses below floating-point resolution.
    pub fn apply(&self, b: &BBox) -> Result<BBox> {
        BBox::from_corners(
            self.apply_point(b.top_left()),
            self.apply_point(b.bottom_right()),
        )
    }

    /// Pre-image of `b`, i.e. the inverse map applied to `b`.
    pub fn invert(&self, b: &BBox) -> Result<BBox> {
        BBox::from_corners(
            self.invert_point(b.top_left()),
            self.invert_point(b.bottom_right()),
        )
    }

    pub fn inverse(&self) -> AffineMap {
        AffineMap {
            scale_x: 1.0 / self.scale_x,
            scale_y: 1.0 / self.scale_y,
            shift_x: -self.shift_x / self.scale_x,
            shift_y: -self.shift_y / self.scale_y,
        }
    }
}

/// The map sending `b` exactly onto `reference`.
pub fn normalize_to(b: &BBox, reference: &BBox) -> AffineMap {
    let scale_x = reference.width() / b.width();
    let scale_y = reference.height() / b.height();
    AffineMap {
        scale_x,
        scale_y,
        shift_x: reference.x1 - scale_x * b.x1,
        shift_y: reference.y1 - scale_y * b.y1,
    }
}

/// Point reflection of `b` through the center of `center_of`.
pub fn reflect_about_center(b: &BBox, center_of: &BBox) -> BBox {
    let sx = center_of.x1 + center_of.x2;
    let sy = center_of.y1 + center_of.y2;
    BBox {
        x1: sx - b.x2,
        y1: sy - b.y2,
        x2: sx - b.x1,
        y2: sy - b.y1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&UNIT_BOX), 1.0);
        assert!((area(&bx(0.3, 0.3, 0.6, 0.6)) - 0.09).abs() < 1e-15);
        assert_eq!(area(&bx(10.0, 20.0, 50.0, 100.0)), 3200.0);
    }

    #[test]
    fn degenerate_and_non_finite_boxes_are_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 1.0, 1.0, 0.5).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert!(BBox::try_from([0.0, 0.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn intersection_examples() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(intersection(&b, &b), area(&b));
        assert_eq!(intersection(&b, &bx(0.5, 0.0, 1.5, 1.0)), 0.5);
        assert_eq!(intersection(&b, &bx(2.0, 2.0, 3.0, 3.0)), 0.0);
        // touching edges
        assert_eq!(intersection(&b, &bx(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_examples() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert!((iou(&b, &bx(0.5, 0.0, 1.5, 1.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&b, &bx(2.0, 2.0, 3.0, 3.0)), 0.0);
        assert!((iou(&b, &bx(0.25, 0.25, 1.0, 1.0)) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn normalize_to_identity_and_unit() {
        let b = bx(10.0, 20.0, 50.0, 100.0);
        assert_eq!(normalize_to(&b, &b), AffineMap::IDENTITY);

        let m = normalize_to(&b, &UNIT_BOX);
        assert_eq!(m.scale_x(), 1.0 / 40.0);
        assert_eq!(m.scale_y(), 1.0 / 80.0);
        assert_eq!(m.shift_x(), -10.0 / 40.0);
        assert_eq!(m.shift_y(), -20.0 / 80.0);
        assert_eq!(m.apply(&b).unwrap(), UNIT_BOX);
        let back = m.invert(&UNIT_BOX).unwrap();
        for (a, e) in back.to_array().iter().zip(b.to_array()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_map_is_a_no_op() {
        let b = bx(-3.5, 2.0, 7.25, 9.0);
        assert_eq!(AffineMap::IDENTITY.apply(&b).unwrap(), b);
        assert_eq!(AffineMap::IDENTITY.invert(&b).unwrap(), b);
    }

    #[test]
    fn affine_map_rejects_non_positive_scale() {
        assert!(AffineMap::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(AffineMap::new(1.0, -2.0, 0.0, 0.0).is_err());
        assert!(AffineMap::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let m = AffineMap::new(2.5, 0.125, -3.0, 11.0).unwrap();
        let p = Point::new(0.7, -4.2);
        let q = m.inverse().apply_point(m.apply_point(p));
        assert!(p.distance(q) < 1e-12);
    }

    #[test]
    fn reflection_examples() {
        let b = bx(0.1, 0.2, 0.7, 0.9);
        let r = reflect_about_center(&b, &b);
        for (p, q) in r.to_array().iter().zip(b.to_array()) {
            assert!((p - q).abs() < 1e-15);
        }
        assert_eq!(
            reflect_about_center(&bx(0.0, 0.0, 1.0, 2.0), &bx(0.0, 0.0, 2.0, 2.0)),
            bx(1.0, 0.0, 2.0, 2.0)
        );
    }
}

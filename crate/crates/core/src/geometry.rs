//! Axis-aligned boxes in normalized canvas coordinates.

use serde::{Deserialize, Serialize};

/// Corner-form box: `(x_min, y_min, width, height)`, all in canvas units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    pub const UNIT: BBox = BBox {
        x: 0.0,
        y: 0.0,
        w: 1.0,
        h: 1.0,
    };

    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn x_max(&self) -> f64 {
        self.x + self.w
    }

    pub fn y_max(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0)
    }

    /// True when the box lies in the unit canvas with positive extent.
    pub fn is_valid(&self) -> bool {
        let eps = 1e-12;
        self.to_array().iter().all(|v| v.is_finite())
            && !self.is_degenerate()
            && self.x >= -eps
            && self.y >= -eps
            && self.x_max() <= 1.0 + eps
            && self.y_max() <= 1.0 + eps
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        // Return an input verbatim when it already covers the other, so that
        // `a ∪ a == a` holds bitwise.
        if self.contains(other) {
            return *self;
        }
        if other.contains(self) {
            return *other;
        }
        BBox::from_corners(
            self.x.min(other.x),
            self.y.min(other.y),
            self.x_max().max(other.x_max()),
            self.y_max().max(other.y_max()),
        )
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && self.x_max() >= other.x_max()
            && self.y_max() >= other.y_max()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.x_max().min(other.x_max()) - self.x.max(other.x);
        let ih = self.y_max().min(other.y_max()) - self.y.max(other.y);
        iw.max(0.0) * ih.max(0.0)
    }

    /// Intersection over union; 0 when either box has no area.
    pub fn iou(&self, other: &BBox) -> f64 {
        if self.is_degenerate() || other.is_degenerate() {
            return 0.0;
        }
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// Intersection with the unit canvas, if it has positive area.
    pub fn clip_to_canvas(&self) -> Option<BBox> {
        if BBox::UNIT.contains(self) {
            return (!self.is_degenerate()).then_some(*self);
        }
        let x0 = self.x.clamp(0.0, 1.0);
        let y0 = self.y.clamp(0.0, 1.0);
        let x1 = self.x_max().clamp(0.0, 1.0);
        let y1 = self.y_max().clamp(0.0, 1.0);
        let b = BBox::from_corners(x0, y0, x1, y1);
        (!b.is_degenerate()).then_some(b)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

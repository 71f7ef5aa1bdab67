use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        debug_assert!(radius >= 0.0);
        Circle { cx, cy, radius }
    }

    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }
}

/// Area of the intersection of two disks (lens formula).
pub fn intersection_area(a: &Circle, b: &Circle) -> f64 {
    let d = (a.cx - b.cx).hypot(a.cy - b.cy);
    let (ra, rb) = (a.radius, b.radius);
    if d >= ra + rb {
        return 0.0;
    }
    if d <= (ra - rb).abs() {
        let r = ra.min(rb);
        return PI * r * r;
    }
    let alpha = ((d * d + ra * ra - rb * rb) / (2.0 * d * ra)).clamp(-1.0, 1.0).acos();
    let beta = ((d * d + rb * rb - ra * ra) / (2.0 * d * rb)).clamp(-1.0, 1.0).acos();
    let kite = (-d + ra + rb) * (d + ra - rb) * (d - ra + rb) * (d + ra + rb);
    ra * ra * alpha + rb * rb * beta - 0.5 * kite.max(0.0).sqrt()
}

/// Intersection over union of two disks; `0` when both radii are zero.
pub fn circle_iou(a: &Circle, b: &Circle) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

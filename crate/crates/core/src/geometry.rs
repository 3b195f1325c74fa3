//! Five-dimensional grasp rectangles and the rectangle match metric.
//!
//! Image coordinates: `x` is the column, `y` the row. The edge of length `w`
//! (gripper opening) runs along direction `theta`, the edge of length `h`
//! (gripper plate length) is perpendicular to it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Areas below this are treated as zero.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rectangle size must be positive and finite (h = {h}, w = {w})")]
    NonPositiveSize { h: f64, w: f64 },
    #[error("rectangle has non-finite coordinates")]
    NonFinite,
}

pub type Point = [f64; 2];

/// An oriented grasp rectangle `{x, y, theta, h, w}`.
///
/// `theta` is in degrees and always normalized into `[0, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspRect {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub h: f64,
    pub w: f64,
}

/// Normalizes an angle in degrees into `[0, 180)`.
pub fn normalize_theta(theta: f64) -> f64 {
    let t = theta.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180 for tiny negative inputs
    if t >= 180.0 {
        0.0
    } else {
        t
    }
}

impl GraspRect {
    pub fn new(x: f64, y: f64, theta: f64, h: f64, w: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(h.is_finite() && w.is_finite() && h > 0.0 && w > 0.0) {
            return Err(GeometryError::NonPositiveSize { h, w });
        }
        Ok(Self {
            x,
            y,
            theta: normalize_theta(theta),
            h,
            w,
        })
    }

    /// Builds a rectangle from a `[x, y, theta, h, w]` vector without validation
    /// beyond theta normalization. Callers guarantee `h, w > 0`.
    pub(crate) fn from_vector(v: &[f64; 5]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            theta: normalize_theta(v[2]),
            h: v[3],
            w: v[4],
        }
    }

    pub fn to_vector(&self) -> [f64; 5] {
        [self.x, self.y, self.theta, self.h, self.w]
    }

    pub fn center(&self) -> Point {
        [self.x, self.y]
    }

    pub fn area(&self) -> f64 {
        self.h * self.w
    }

    /// Unit vector along `theta` (the `w` edge).
    pub fn axis(&self) -> Point {
        let t = self.theta.to_radians();
        [t.cos(), t.sin()]
    }

    /// Unit vector perpendicular to `theta` (the `h` edge).
    pub fn normal(&self) -> Point {
        let t = self.theta.to_radians();
        [-t.sin(), t.cos()]
    }

    /// The four vertices, counter-clockwise in a y-up frame (positive shoelace
    /// area). The first edge is the `w` edge.
    pub fn corners(&self) -> [Point; 4] {
        let u = self.axis();
        let n = self.normal();
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        signs.map(|(a, b)| {
            [
                self.x + a * hw * u[0] + b * hh * n[0],
                self.y + a * hw * u[1] + b * hh * n[1],
            ]
        })
    }

    /// Same rectangle translated by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// True if all four corners lie in `[0, width - 1] x [0, height - 1]`,
    /// the region where bilinear sampling is defined.
    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        if width == 0 || height == 0 {
            return false;
        }
        let max_x = (width - 1) as f64;
        let max_y = (height - 1) as f64;
        self.corners()
            .iter()
            .all(|p| p[0] >= 0.0 && p[0] <= max_x && p[1] >= 0.0 && p[1] <= max_y)
    }
}

/// Unsigned angular distance between two grasp orientations, in `[0, 90]`.
///
/// Orientations are 180-periodic, so 10 and 170 are 20 degrees apart.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Signed shortest rotation from `from` to `to` on the 180-periodic circle,
/// in `[-90, 90)`.
pub fn signed_angle_delta(from: f64, to: f64) -> f64 {
    (to - from + 90.0).rem_euclid(180.0) - 90.0
}

/// Shoelace area; positive for counter-clockwise (y-up) vertex order.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc / 2.0
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clip of `subject` against the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut prev_side = cross(a, b, prev);
        for &cur in &input {
            let cur_side = cross(a, b, cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(segment_line_intersection(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(segment_line_intersection(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn segment_line_intersection(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of two grasp rectangles.
pub fn intersection_area(a: &GraspRect, b: &GraspRect) -> f64 {
    let pa = a.corners();
    let pb = b.corners();
    let area = polygon_area(&clip_convex(&pa, &pb));
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Jaccard overlap `|a ∩ b| / |a ∪ b|` of two rectangles.
pub fn rect_iou(a: &GraspRect, b: &GraspRect) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Denominator used for the overlap ratio in [`rect_match`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMetric {
    /// Intersection over union.
    #[default]
    Iou,
    /// Intersection over the label rectangle's area.
    OverLabel,
}

/// Thresholds of the rectangle metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchCriteria {
    pub max_angle_deg: f64,
    pub min_overlap: f64,
    pub metric: OverlapMetric,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            max_angle_deg: 30.0,
            min_overlap: 0.20,
            metric: OverlapMetric::Iou,
        }
    }
}

impl MatchCriteria {
    pub fn overlap(&self, pred: &GraspRect, label: &GraspRect) -> f64 {
        match self.metric {
            OverlapMetric::Iou => rect_iou(pred, label),
            OverlapMetric::OverLabel => (intersection_area(pred, label) / label.area()).clamp(0.0, 1.0),
        }
    }

    pub fn matches(&self, pred: &GraspRect, label: &GraspRect) -> bool {
        angle_diff(pred.theta, label.theta) <= self.max_angle_deg
            && self.overlap(pred, label) >= self.min_overlap
    }
}

/// Rectangle metric with the default thresholds: orientation within 30 degrees
/// and IoU of at least 0.2.
pub fn rect_match(pred: &GraspRect, label: &GraspRect) -> bool {
    MatchCriteria::default().matches(pred, label)
}

//! Exact overlap measures for oriented boxes via convex polygon clipping.

use super::{Obb, Vec2};

/// Shoelace area, positive for clockwise polygons in image coordinates.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum();
    0.5 * twice
}

/// Clips `subject` against the half-plane left of the directed edge `a -> b`
/// (left in the positive-area orientation used by [`Obb`]).
fn clip_halfplane(subject: &[Vec2], a: Vec2, b: Vec2, out: &mut Vec<Vec2>) {
    out.clear();
    let n = subject.len();
    let edge = b - a;
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let sd = edge.cross(s - a);
        let ed = edge.cross(e - a);
        let (s_in, e_in) = (sd >= 0.0, ed >= 0.0);
        if s_in != e_in {
            let t = sd / (sd - ed);
            out.push(s + (e - s) * t);
        }
        if e_in {
            out.push(e);
        }
    }
}

/// Sutherland–Hodgman clip of `subject` by the convex polygon `clip`.
///
/// Both polygons must have positive [`polygon_area`] orientation.
pub fn convex_clip(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut current = subject.to_vec();
    let mut scratch = Vec::with_capacity(subject.len() + clip.len());
    let n = clip.len();
    for i in 0..n {
        if current.len() < 3 {
            return Vec::new();
        }
        clip_halfplane(&current, clip[i], clip[(i + 1) % n], &mut scratch);
        std::mem::swap(&mut current, &mut scratch);
    }
    if current.len() < 3 {
        Vec::new()
    } else {
        current
    }
}

/// Area of the intersection of two oriented boxes.
pub fn overlap_area(a: &Obb, b: &Obb) -> f64 {
    polygon_area(&convex_clip(a.vertices(), b.vertices())).max(0.0)
}

/// Intersection over union of two oriented boxes, in `[0, 1]`.
pub fn polygon_iou(a: &Obb, b: &Obb) -> f64 {
    // cheap reject on the hulls
    let (ha, hb) = (a.aabb(), b.aabb());
    let (amin, amax, bmin, bmax) = (ha.min(), ha.max(), hb.min(), hb.max());
    if amax.x <= bmin.x || bmax.x <= amin.x || amax.y <= bmin.y || bmax.y <= amin.y {
        return 0.0;
    }
    let inter = overlap_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU scaled by the cosine between the two boxes' first-edge directions,
/// with opposed directions clamped to zero.
pub fn oriented_iou(pred: &Obb, gt: &Obb) -> f64 {
    let cos = pred.direction().dot(gt.direction()).clamp(-1.0, 1.0);
    polygon_iou(pred, gt) * cos.max(0.0)
}

//! Planar box geometry.
//!
//! Coordinates follow the image convention: `x` grows to the right and `y`
//! grows downwards, so a positive rotation turns a vector clockwise on
//! screen. Angles are radians in `[0, 2π)` unless noted otherwise.

mod iou;
mod similarity;

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

pub use iou::{convex_clip, oriented_iou, overlap_area, polygon_area, polygon_iou};
pub use similarity::{wrap_pi, Similarity2};

/// Side lengths below this are treated as degenerate.
pub const MIN_SIDE: f64 = 1e-9;

/// Relative tolerance for the rectangle checks in [`Obb::new`].
pub const RECT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate box: {0}")]
    DegenerateBox(&'static str),
    #[error("vertices do not form a rectangle: {0}")]
    NotRectangle(&'static str),
    #[error("vertices are not in clockwise order")]
    NotClockwise,
    #[error("invalid axis-aligned box (w = {w}, h = {h})")]
    InvalidAabb { w: f64, h: f64 },
    #[error("invalid aspect ratio {0}")]
    InvalidRatio(f64),
    #[error("cannot solve reconstruction scale: leftmost seed vertex at x = {0}")]
    DegenerateReconstruction(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from the image x axis.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2::new(x, y)
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Smallest absolute difference between two angles, in `[0, π]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    d.min(TAU - d)
}

/// Axis-aligned box given by its center and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Aabb {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::InvalidAabb { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_min_max(min: Vec2, max: Vec2) -> Result<Self, GeometryError> {
        Self::new(
            0.5 * (min.x + max.x),
            0.5 * (min.y + max.y),
            max.x - min.x,
            max.y - min.y,
        )
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn min(&self) -> Vec2 {
        Vec2::new(self.x - 0.5 * self.w, self.y - 0.5 * self.h)
    }

    pub fn max(&self) -> Vec2 {
        Vec2::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        let (lo, hi) = (self.min(), self.max());
        p.x >= lo.x - tol && p.x <= hi.x + tol && p.y >= lo.y - tol && p.y <= hi.y + tol
    }

    /// The same rectangle as a zero-angle [`Obb`].
    pub fn to_obb(&self) -> Obb {
        Obb::from_center(self.center(), self.w, self.h, 0.0)
            .expect("validated aabb extents are positive")
    }
}

/// Oriented bounding box stored as four clockwise vertices.
///
/// `p1 - p0` is the first edge and defines the box direction; `p3 - p0` is
/// the second side. In image coordinates this means `cross(p1 - p0, p3 - p0)`
/// is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Vec2; 4]", into = "[Vec2; 4]")]
pub struct Obb {
    vertices: [Vec2; 4],
}

impl Obb {
    /// Validates that `vertices` form a clockwise, non-degenerate rectangle.
    pub fn new(vertices: [Vec2; 4]) -> Result<Self, GeometryError> {
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let [p0, p1, p2, p3] = vertices;
        let e01 = p1 - p0;
        let e12 = p2 - p1;
        let e23 = p3 - p2;
        let e30 = p0 - p3;
        let (a, b) = (e01.norm(), e12.norm());
        let (c, d) = (e23.norm(), e30.norm());
        if a.min(b).min(c).min(d) < MIN_SIDE {
            return Err(GeometryError::DegenerateBox("zero-length edge"));
        }
        if (a - c).abs() > RECT_TOLERANCE * a.max(c) || (b - d).abs() > RECT_TOLERANCE * b.max(d) {
            return Err(GeometryError::NotRectangle("opposite sides differ"));
        }
        for (u, v) in [(e01, e12), (e12, e23), (e23, e30), (e30, e01)] {
            if (u.dot(v) / (u.norm() * v.norm())).abs() > RECT_TOLERANCE {
                return Err(GeometryError::NotRectangle("adjacent sides not orthogonal"));
            }
        }
        if e01.cross(p3 - p0) <= 0.0 {
            return Err(GeometryError::NotClockwise);
        }
        Ok(Self { vertices })
    }

    /// Box of size `width` x `height` centered at `center`, whose first edge
    /// (length `width`) points along `angle`.
    pub fn from_center(
        center: Vec2,
        width: f64,
        height: f64,
        angle: f64,
    ) -> Result<Self, GeometryError> {
        if !(width >= MIN_SIDE && height >= MIN_SIDE) {
            return Err(GeometryError::DegenerateBox("non-positive size"));
        }
        if !center.is_finite() || !angle.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self::from_center_unchecked(center, width, height, angle))
    }

    pub(crate) fn from_center_unchecked(center: Vec2, width: f64, height: f64, angle: f64) -> Self {
        let (hw, hh) = (0.5 * width, 0.5 * height);
        let local = [
            Vec2::new(-hw, -hh),
            Vec2::new(hw, -hh),
            Vec2::new(hw, hh),
            Vec2::new(-hw, hh),
        ];
        Self {
            vertices: local.map(|p| center + p.rotate(angle)),
        }
    }

    pub(crate) fn from_vertices_unchecked(vertices: [Vec2; 4]) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Vec2; 4] {
        &self.vertices
    }

    pub fn center(&self) -> Vec2 {
        (self.vertices[0] + self.vertices[2]) * 0.5
    }

    /// Length of the first edge `p0 -> p1`.
    pub fn width(&self) -> f64 {
        self.vertices[1].distance(self.vertices[0])
    }

    /// Length of the second side `p0 -> p3`.
    pub fn height(&self) -> f64 {
        self.vertices[3].distance(self.vertices[0])
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Unit vector along the first edge.
    pub fn direction(&self) -> Vec2 {
        let v = self.vertices[1] - self.vertices[0];
        v * (1.0 / v.norm())
    }

    /// Angle of the first edge against the image x axis, in `[0, 2π)`.
    pub fn angle(&self) -> f64 {
        let v = self.vertices[1] - self.vertices[0];
        let a = v.y.atan2(v.x);
        let theta = if v.y >= 0.0 { a } else { TAU + a };
        if theta >= TAU {
            0.0
        } else {
            theta
        }
    }

    /// Side-length ratio `|p1 - p0| / |p3 - p0|`.
    pub fn aspect_ratio(&self) -> f64 {
        self.width() / self.height()
    }

    /// Minimum axis-aligned box containing all four vertices.
    pub fn aabb(&self) -> Aabb {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        // a valid rectangle always has positive extents on both axes
        Aabb {
            x: 0.5 * (lo.x + hi.x),
            y: 0.5 * (lo.y + hi.y),
            w: hi.x - lo.x,
            h: hi.y - lo.y,
        }
    }

    pub fn transform(&self, t: &Similarity2) -> Obb {
        Obb::from_vertices_unchecked(self.vertices.map(|p| t.apply(p)))
    }

    /// Vertex relabeling that turns the box by 180° without moving it.
    pub fn flipped(&self) -> Obb {
        let [p0, p1, p2, p3] = self.vertices;
        Obb::from_vertices_unchecked([p2, p3, p0, p1])
    }

    /// Point-in-rectangle test (inclusive).
    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b - a).cross(p - a) >= 0.0
        })
    }
}

impl TryFrom<[Vec2; 4]> for Obb {
    type Error = GeometryError;
    fn try_from(v: [Vec2; 4]) -> Result<Self, Self::Error> {
        Obb::new(v)
    }
}

impl From<Obb> for [Vec2; 4] {
    fn from(o: Obb) -> Self {
        o.vertices
    }
}

/// The area covered by a `width` x `height` image, with pixel centers at
/// integer coordinates.
pub fn frame_rect(width: u32, height: u32) -> Obb {
    let (w, h) = (f64::from(width.max(1)), f64::from(height.max(1)));
    Obb::from_center_unchecked(Vec2::new(0.5 * (w - 1.0), 0.5 * (h - 1.0)), w, h, 0.0)
}

/// Whether any positive area of `obb` lies inside a `width` x `height` image.
pub fn visible_in_frame(obb: &Obb, (width, height): (u32, u32)) -> bool {
    overlap_area(obb, &frame_rect(width, height)) > 0.0
}

/// Angle of the box's first edge, in `[0, 2π)`.
pub fn obb_angle(obb: &Obb) -> f64 {
    obb.angle()
}

pub fn aabb_of_obb(obb: &Obb) -> Aabb {
    obb.aabb()
}

pub fn obb_aspect_ratio(obb: &Obb) -> f64 {
    obb.aspect_ratio()
}

pub fn transform_obb(t: &Similarity2, obb: &Obb) -> Obb {
    obb.transform(t)
}

/// Rebuilds an oriented box from its axis-aligned hull, orientation and
/// nominal aspect ratio.
///
/// A seed box (width 1, height `1 / ratio`) is rotated by `theta` about the
/// hull center, then scaled so its leftmost vertex lands exactly on the left
/// edge of `aabb`. Only this single constraint is enforced; for a hull that
/// came from a box with the same angle and ratio the result is that box.
pub fn reconstruct_obb(aabb: &Aabb, theta: f64, ratio: f64) -> Result<Obb, GeometryError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(GeometryError::InvalidRatio(ratio));
    }
    if !theta.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let seed = Obb::from_center_unchecked(Vec2::ZERO, 1.0, 1.0 / ratio, theta);
    // lowest index wins ties
    let leftmost = seed
        .vertices
        .iter()
        .copied()
        .reduce(|best, v| if v.x < best.x { v } else { best })
        .expect("four vertices");
    if leftmost.x.abs() < 1e-9 {
        return Err(GeometryError::DegenerateReconstruction(leftmost.x));
    }
    let scale = -aabb.w / (2.0 * leftmost.x);
    let center = aabb.center();
    let vertices = seed.vertices.map(|p| center + p * scale);
    Obb::new(vertices)
}

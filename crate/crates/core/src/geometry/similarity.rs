use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::Vec2;

/// Planar similarity `p -> scale * R(rotation) * p + translation`.
///
/// Composition follows function notation: `a.compose(&b)` applies `b` first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity2 {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Vec2,
}

impl Default for Similarity2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Similarity2 {
    pub const IDENTITY: Similarity2 = Similarity2 {
        scale: 1.0,
        rotation: 0.0,
        translation: Vec2::ZERO,
    };

    pub fn new(scale: f64, rotation: f64, translation: Vec2) -> Self {
        debug_assert!(scale > 0.0, "similarity scale must be positive");
        Self {
            scale,
            rotation: wrap_pi(rotation),
            translation,
        }
    }

    pub fn translation(t: Vec2) -> Self {
        Self::new(1.0, 0.0, t)
    }

    /// Scale and rotation about a fixed `center` rather than the origin.
    pub fn about_point(scale: f64, rotation: f64, center: Vec2) -> Self {
        let moved = center.rotate(rotation) * scale;
        Self::new(scale, rotation, center - moved)
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) * self.scale + self.translation
    }

    /// Applies only the linear part, for directions.
    pub fn apply_vector(&self, v: Vec2) -> Vec2 {
        v.rotate(self.rotation) * self.scale
    }

    pub fn compose(&self, inner: &Similarity2) -> Similarity2 {
        Similarity2::new(
            self.scale * inner.scale,
            self.rotation + inner.rotation,
            self.apply(inner.translation),
        )
    }

    pub fn inverse(&self) -> Similarity2 {
        let scale = 1.0 / self.scale;
        let translation = (-self.translation).rotate(-self.rotation) * scale;
        Similarity2::new(scale, -self.rotation, translation)
    }

    /// Largest parameter difference, with rotations compared modulo 2π.
    pub fn max_param_diff(&self, other: &Similarity2) -> f64 {
        let dr = super::angle_distance(self.rotation, other.rotation);
        let ds = (self.scale - other.scale).abs();
        let dt = (self.translation - other.translation).norm();
        dr.max(ds).max(dt)
    }
}

/// Wraps into `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn about_point_fixes_center() {
        let c = Vec2::new(320.0, 240.0);
        let t = Similarity2::about_point(0.9, 0.3, c);
        let p = t.apply(c);
        assert_abs_diff_eq!(p.x, c.x, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, c.y, epsilon = 1e-9);
    }

    #[test]
    fn compose_applies_inner_first() {
        let a = Similarity2::new(2.0, FRAC_PI_2, Vec2::new(1.0, 0.0));
        let b = Similarity2::translation(Vec2::new(0.0, 3.0));
        let p = Vec2::new(1.0, 1.0);
        let direct = a.apply(b.apply(p));
        let composed = a.compose(&b).apply(p);
        assert_abs_diff_eq!(direct.x, composed.x, epsilon = 1e-12);
        assert_abs_diff_eq!(direct.y, composed.y, epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_wrapped() {
        let t = Similarity2::new(1.0, 3.0 * PI, Vec2::ZERO);
        assert_abs_diff_eq!(t.rotation, PI, epsilon = 1e-12);
    }
}

//! Proportional alignment of a camera to a detected object, simulated on a
//! plane.
//!
//! The camera looks straight down. Its image center sits at the camera
//! position in the world plane and the image axes are the world axes turned
//! by the camera heading `ψ`. An object at world position `p` with world
//! orientation `φ` therefore appears at image offset `R(-ψ)(p - c)` from the
//! image center, with relative orientation `φ - ψ`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_distance, normalize_angle, Vec2};

/// `1` for `x >= 0` (including `-0.0`), `-1` otherwise.
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `(sin θ, cos θ)` with exact zeros and ones at multiples of `π/2`.
fn quadrant_sin_cos(theta: f64) -> (f64, f64) {
    let n = (theta / FRAC_PI_2).round();
    let (s, c) = (theta - n * FRAC_PI_2).sin_cos();
    match (n as i64).rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// Rotational error with a single equilibrium at `θ = 0`:
/// `-sign(sin θ)(cos θ - 1)`.
pub fn rotational_error(theta: f64) -> f64 {
    let (s, c) = quadrant_sin_cos(theta);
    -sign(s) * (c - 1.0)
}

/// Rotational error with equilibria at `0` and `π`, for objects that look
/// the same after a half turn: `sign(tan θ)|sin θ|`, with the sign of the
/// tangent taken as the sign of `sin θ · cos θ`.
pub fn rotational_error_sym(theta: f64) -> f64 {
    let (s, c) = quadrant_sin_cos(theta);
    sign(s * c) * s.abs()
}

/// Offset of the object from the image center, in image pixels.
pub fn translational_error(object: Vec2, image_center: Vec2) -> Vec2 {
    object - image_center
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoState {
    pub camera: Pose,
    /// World position and orientation of the object.
    pub target: Pose,
    pub image_center: Vec2,
}

impl ServoState {
    /// A camera at the origin with zero heading that sees the object at
    /// `offset` from the image center, turned by `theta`.
    pub fn from_image(offset: Vec2, theta: f64, image_center: Vec2) -> Self {
        Self {
            camera: Pose {
                position: Vec2::ZERO,
                heading: 0.0,
            },
            target: Pose {
                position: offset,
                heading: normalize_angle(theta),
            },
            image_center,
        }
    }

    /// Where the object appears in the image.
    pub fn object_in_image(&self) -> Vec2 {
        self.image_center + (self.target.position - self.camera.position).rotate(-self.camera.heading)
    }

    pub fn translational_error(&self) -> Vec2 {
        translational_error(self.object_in_image(), self.image_center)
    }

    /// Object orientation relative to the image axes, in `[0, 2π)`.
    pub fn relative_theta(&self) -> f64 {
        normalize_angle(self.target.heading - self.camera.heading)
    }

    pub fn rotational_error(&self, symmetric: bool) -> f64 {
        if symmetric {
            rotational_error_sym(self.relative_theta())
        } else {
            rotational_error(self.relative_theta())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Translational gain, 1/s.
    pub k_t: f64,
    /// Rotational gain, 1/s.
    pub k_theta: f64,
    /// Integration step, s.
    pub dt: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            k_t: 1.0,
            k_theta: 1.0,
            dt: 0.05,
        }
    }
}

/// One Euler step of the two proportional laws.
///
/// The camera translates toward the object by `k_t · e_t · dt` (image axes)
/// and turns toward it by `k_theta · e_θ · dt`, so both errors shrink.
pub fn step(state: &ServoState, gains: &Gains, symmetric: bool) -> ServoState {
    let e_t = state.translational_error();
    let e_theta = state.rotational_error(symmetric);
    let velocity = e_t * gains.k_t;
    let omega = gains.k_theta * e_theta;
    let mut next = *state;
    next.camera.position = state.camera.position + velocity.rotate(state.camera.heading) * gains.dt;
    next.camera.heading = state.camera.heading + omega * gains.dt;
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub max_steps: usize,
    /// Pixels.
    pub tol_translation: f64,
    /// Radians.
    pub tol_theta: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            max_steps: 10_000,
            tol_translation: 0.5,
            tol_theta: 0.5f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub error: Vec2,
    /// Relative orientation, radians in `[0, 2π)`.
    pub theta: f64,
    pub e_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
    pub final_state: ServoState,
}

impl Simulation {
    /// Relative orientation at the end of the run.
    pub fn final_theta(&self) -> f64 {
        self.final_state.relative_theta()
    }

    /// Steps taken; zero when the initial state was already aligned.
    pub fn steps(&self) -> usize {
        self.trajectory.last().map_or(0, |p| p.step)
    }

    /// Columns `step, ex, ey, theta_deg, e_theta`.
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "ex", "ey", "theta_deg", "e_theta"])?;
        for p in &self.trajectory {
            w.write_record([
                p.step.to_string(),
                p.error.x.to_string(),
                p.error.y.to_string(),
                p.theta.to_degrees().to_string(),
                p.e_theta.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Angular distance from `theta` to the nearest equilibrium of the law.
pub fn equilibrium_distance(theta: f64, symmetric: bool) -> f64 {
    let to_zero = angle_distance(theta, 0.0);
    if symmetric {
        to_zero.min(angle_distance(theta, PI))
    } else {
        to_zero
    }
}

fn aligned(state: &ServoState, symmetric: bool, config: &SimulationConfig) -> bool {
    state.translational_error().norm() < config.tol_translation
        && equilibrium_distance(state.relative_theta(), symmetric) < config.tol_theta
}

/// Steps until both errors are within tolerance or `max_steps` is reached.
pub fn simulate(initial: &ServoState, gains: &Gains, symmetric: bool, config: &SimulationConfig) -> Simulation {
    let record = |i: usize, s: &ServoState| TrajectoryPoint {
        step: i,
        error: s.translational_error(),
        theta: s.relative_theta(),
        e_theta: s.rotational_error(symmetric),
    };
    let mut state = *initial;
    let mut trajectory = vec![record(0, &state)];
    let mut converged = aligned(&state, symmetric, config);
    let mut i = 0;
    while !converged && i < config.max_steps {
        state = step(&state, gains, symmetric);
        i += 1;
        trajectory.push(record(i, &state));
        converged = aligned(&state, symmetric, config);
    }
    Simulation {
        trajectory,
        converged,
        final_state: state,
    }
}

/// The equilibrium a converged run should settle on from `theta0`.
pub fn expected_equilibrium(theta0: f64, symmetric: bool) -> f64 {
    if symmetric && angle_distance(theta0, PI) < angle_distance(theta0, 0.0) {
        PI
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    const CENTER: Vec2 = Vec2::new(320.0, 240.0);

    #[test]
    fn spot_values() {
        assert_eq!(rotational_error(0.0), 0.0);
        assert_eq!(rotational_error(FRAC_PI_2), 1.0);
        assert_eq!(rotational_error(PI), 2.0);
        assert_eq!(rotational_error_sym(0.0), 0.0);
        assert_eq!(rotational_error_sym(PI), 0.0);
        assert_abs_diff_eq!(rotational_error_sym(FRAC_PI_4), SQRT_2 / 2.0, epsilon = 1e-15);
        assert_eq!(sign(-0.0), 1.0);
    }

    #[test]
    fn error_signs_by_quadrant() {
        for deg in 1..360 {
            let t = f64::from(deg).to_radians();
            let e = rotational_error(t);
            assert!(if deg < 180 { e > 0.0 } else { e < 0.0 } || deg == 180, "{deg}");
            let s = rotational_error_sym(t);
            if deg != 90 && deg != 180 && deg != 270 {
                // positive error turns θ down: toward 0 on (0, 90), toward π on (180, 270)
                let expected_down = deg < 90 || (180 < deg && deg < 270);
                assert_eq!(s > 0.0, expected_down, "{deg}");
            }
        }
    }

    #[test]
    fn image_error_examples() {
        let s = ServoState::from_image(Vec2::ZERO, 0.0, CENTER);
        assert_eq!(s.translational_error(), Vec2::ZERO);
        let s = ServoState::from_image(Vec2::new(10.0, -4.0), 0.0, CENTER);
        assert_eq!(s.object_in_image(), Vec2::new(330.0, 236.0));
        assert_eq!(s.translational_error(), Vec2::new(10.0, -4.0));
        let shift = Vec2::new(-7.5, 3.0);
        assert_eq!(
            translational_error(s.object_in_image() + shift, CENTER + shift),
            s.translational_error()
        );
    }

    #[test]
    fn fixed_points_of_step() {
        let s = ServoState::from_image(Vec2::ZERO, 0.0, CENTER);
        assert_eq!(step(&s, &Gains::default(), false), s);
        let moving = ServoState::from_image(Vec2::new(30.0, 5.0), 1.0, CENTER);
        let frozen = Gains {
            k_t: 0.0,
            k_theta: 0.0,
            dt: 0.05,
        };
        assert_eq!(step(&moving, &frozen, false), moving);
    }

    #[test]
    fn single_step_reduces_error() {
        let s = ServoState::from_image(Vec2::new(12.0, -9.0), 0.8, CENTER);
        let n = step(&s, &Gains::default(), false);
        assert!(n.translational_error().norm() < s.translational_error().norm());
        assert!(n.relative_theta() < s.relative_theta());
        assert_abs_diff_eq!(n.translational_error().norm(), 0.95 * 15.0, epsilon = 1e-9);
    }

    #[test]
    fn aligned_start_converges_immediately() {
        let s = ServoState::from_image(Vec2::ZERO, 0.0, CENTER);
        let sim = simulate(&s, &Gains::default(), false, &SimulationConfig::default());
        assert!(sim.converged);
        assert_eq!(sim.steps(), 0);
    }

    #[test]
    fn one_seventy_degrees() {
        let s = ServoState::from_image(Vec2::new(40.0, -25.0), 170f64.to_radians(), CENTER);
        let cfg = SimulationConfig::default();
        let plain = simulate(&s, &Gains::default(), false, &cfg);
        assert!(plain.converged);
        assert!(equilibrium_distance(plain.final_theta(), false) < cfg.tol_theta);
        let sym = simulate(&s, &Gains::default(), true, &cfg);
        assert!(sym.converged);
        assert!(angle_distance(sym.final_theta(), PI) < cfg.tol_theta);
        assert!(sym.steps() < plain.steps());
    }

    #[test]
    fn csv_columns() {
        let s = ServoState::from_image(Vec2::new(3.0, 0.0), 0.2, CENTER);
        let sim = simulate(&s, &Gains::default(), false, &SimulationConfig::default());
        let mut out = Vec::new();
        sim.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("step,ex,ey,theta_deg,e_theta\n0,3,0,"));
        assert_eq!(text.lines().count(), sim.trajectory.len() + 1);
    }
}

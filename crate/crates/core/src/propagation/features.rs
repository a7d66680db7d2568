//! Built-in correspondence finder: minimum-eigenvalue corners matched by
//! normalized cross-correlation of square patches.
//!
//! Inter-frame motion in a video is small, so patches are compared without
//! rotation or scale normalization and candidates are limited to a search
//! radius around the source corner.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::Correspondence;
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Corners kept per image, strongest first.
    pub max_corners: usize,
    /// Fewer corners than this in either image is an error.
    pub min_corners: usize,
    /// Corners weaker than `quality * strongest` are discarded.
    pub quality: f64,
    /// Minimum pixel spacing between kept corners.
    pub min_distance: f64,
    /// Half-size of the structure tensor window.
    pub window_radius: usize,
    /// Half-size of the NCC patch.
    pub patch_radius: usize,
    /// Maximum displacement of a corner between the two images.
    pub search_radius: f64,
    pub min_ncc: f64,
    /// Lowe-style ratio on `1 - ncc` between best and second-best candidate.
    pub ratio: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_corners: 500,
            min_corners: 8,
            quality: 0.01,
            min_distance: 6.0,
            window_radius: 2,
            patch_radius: 6,
            search_radius: 24.0,
            min_ncc: 0.8,
            ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("images differ in size: {a:?} vs {b:?}")]
    SizeMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("too few corners: found {found}, need {required}")]
    NoFeatures { found: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

/// Row-major f64 copy of a grayscale image.
#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Minimum eigenvalue of the windowed structure tensor at every pixel.
fn min_eigen_response(plane: &Plane, radius: usize) -> Vec<f64> {
    let (w, h) = (plane.width, plane.height);
    let mut gxx = vec![0.0; w * h];
    let mut gyy = vec![0.0; w * h];
    let mut gxy = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = 0.5 * (plane.at(x + 1, y) - plane.at(x - 1, y));
            let gy = 0.5 * (plane.at(x, y + 1) - plane.at(x, y - 1));
            let i = y * w + x;
            gxx[i] = gx * gx;
            gyy[i] = gy * gy;
            gxy[i] = gx * gy;
        }
    }
    let sxx = box_sum(&gxx, w, h, radius);
    let syy = box_sum(&gyy, w, h, radius);
    let sxy = box_sum(&gxy, w, h, radius);
    (0..w * h)
        .map(|i| {
            let (a, b, c) = (sxx[i], sxy[i], syy[i]);
            0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt()
        })
        .collect()
}

/// Sum over a `(2r+1)²` window via an integral image; zero padded.
fn box_sum(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut integral = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[y * w + x];
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            out[y * w + x] = integral[y1 * stride + x1] - integral[y0 * stride + x1]
                - integral[y1 * stride + x0]
                + integral[y0 * stride + x0];
        }
    }
    out
}

/// Strong, well-separated corners far enough from the border for a full patch.
pub fn detect_corners(img: &GrayImage, config: &MatchConfig) -> Vec<Corner> {
    let plane = Plane::from_gray(img);
    detect_corners_in(&plane, config)
}

fn detect_corners_in(plane: &Plane, config: &MatchConfig) -> Vec<Corner> {
    let (w, h) = (plane.width, plane.height);
    let margin = config.patch_radius + config.window_radius + 3;
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let response = min_eigen_response(plane, config.window_radius);
    let peak = response.iter().cloned().fold(0.0, f64::max);
    // absolute floor so flat images yield nothing
    let floor = (config.quality * peak).max(1e-3);
    let mut candidates = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let r = response[y * w + x];
            if r <= floor {
                continue;
            }
            let is_max = (y - 1..=y + 1).all(|yy| {
                (x - 1..=x + 1).all(|xx| (xx == x && yy == y) || response[yy * w + xx] < r)
            });
            if is_max {
                candidates.push(Corner { x, y, response: r });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });

    // greedy spacing on a coarse grid
    let cell = config.min_distance.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<(usize, usize)>> = vec![Vec::new(); gw * gh];
    let min_d2 = config.min_distance * config.min_distance;
    let mut kept = Vec::new();
    for c in candidates {
        if kept.len() >= config.max_corners {
            break;
        }
        let gx = (c.x as f64 / cell) as usize;
        let gy = (c.y as f64 / cell) as usize;
        let crowded = (gy.saturating_sub(1)..=(gy + 1).min(gh - 1)).any(|yy| {
            (gx.saturating_sub(1)..=(gx + 1).min(gw - 1)).any(|xx| {
                grid[yy * gw + xx].iter().any(|&(px, py)| {
                    let dx = px as f64 - c.x as f64;
                    let dy = py as f64 - c.y as f64;
                    dx * dx + dy * dy < min_d2
                })
            })
        });
        if !crowded {
            grid[gy * gw + gx].push((c.x, c.y));
            kept.push(c);
        }
    }
    kept
}

/// Mean-removed, unit-norm patch; `None` for flat patches or out of bounds.
fn patch(plane: &Plane, x: usize, y: usize, r: usize) -> Option<Vec<f64>> {
    if x < r || y < r || x + r >= plane.width || y + r >= plane.height {
        return None;
    }
    let mut values = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    for yy in y - r..=y + r {
        for xx in x - r..=x + r {
            values.push(plane.at(xx, yy));
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut norm = 0.0;
    for v in values.iter_mut() {
        *v -= mean;
        norm += *v * *v;
    }
    if norm < 1e-9 {
        return None;
    }
    let inv = 1.0 / norm.sqrt();
    values.iter_mut().for_each(|v| *v *= inv);
    Some(values)
}

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Integer position in `b` best matching the patch `pa`, hill-climbing from `(x, y)`.
fn refine(pa: &[f64], b: &Plane, x: usize, y: usize, r: usize) -> Option<Vec2> {
    let score = |xx: isize, yy: isize| -> Option<f64> {
        if xx < 0 || yy < 0 {
            return None;
        }
        patch(b, xx as usize, yy as usize, r).map(|pb| ncc(pa, &pb))
    };
    let (mut bx, mut by) = (x as isize, y as isize);
    let mut best = score(bx, by)?;
    // hill-climb on the integer grid, a few steps at most
    for _ in 0..2 {
        let mut moved = false;
        for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
            if let Some(s) = score(bx + dx, by + dy) {
                if s > best + 1e-12 {
                    best = s;
                    bx += dx;
                    by += dy;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Some(Vec2::new(bx as f64, by as f64))
}

/// Mutual-best NCC matches between corners of two equally sized images.
///
/// `src` is a corner position in `img_a`; `dst` is the NCC peak near the
/// matched corner of `img_b`. Both are integer pixel positions. Deterministic for fixed inputs and config.
pub fn detect_and_match(
    img_a: &GrayImage,
    img_b: &GrayImage,
    config: &MatchConfig,
) -> Result<Vec<Correspondence>, MatchError> {
    if img_a.dimensions() != img_b.dimensions() {
        return Err(MatchError::SizeMismatch {
            a: img_a.dimensions(),
            b: img_b.dimensions(),
        });
    }
    let (pa, pb) = (Plane::from_gray(img_a), Plane::from_gray(img_b));
    let corners_a = detect_corners_in(&pa, config);
    let corners_b = detect_corners_in(&pb, config);
    let found = corners_a.len().min(corners_b.len());
    if found < config.min_corners {
        return Err(MatchError::NoFeatures {
            found,
            required: config.min_corners,
        });
    }
    let r = config.patch_radius;
    let patches_a: Vec<_> = corners_a.iter().map(|c| patch(&pa, c.x, c.y, r)).collect();
    let patches_b: Vec<_> = corners_b.iter().map(|c| patch(&pb, c.x, c.y, r)).collect();
    let radius2 = config.search_radius * config.search_radius;

    // scores[i] = (j, ncc) for every candidate of corner i
    let scores: Vec<Vec<(usize, f64)>> = corners_a
        .iter()
        .zip(&patches_a)
        .map(|(ca, pa)| {
            let Some(pa) = pa else { return Vec::new() };
            corners_b
                .iter()
                .zip(&patches_b)
                .enumerate()
                .filter_map(|(j, (cb, pb))| {
                    let dx = cb.x as f64 - ca.x as f64;
                    let dy = cb.y as f64 - ca.y as f64;
                    if dx * dx + dy * dy > radius2 {
                        return None;
                    }
                    pb.as_ref().map(|pb| (j, ncc(pa, pb)))
                })
                .collect()
        })
        .collect();

    let best_of = |cands: &[(usize, f64)]| -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut second = -1.0f64;
        for &(j, s) in cands {
            match best {
                Some((_, b)) if s <= b => second = second.max(s),
                _ => {
                    if let Some((_, b)) = best {
                        second = second.max(b);
                    }
                    best = Some((j, s));
                }
            }
        }
        best.map(|(j, s)| (j, s, second))
    };

    // reverse direction: best source corner for each target corner
    let mut reverse: Vec<Option<(usize, f64)>> = vec![None; corners_b.len()];
    for (i, cands) in scores.iter().enumerate() {
        for &(j, s) in cands {
            match reverse[j] {
                Some((_, b)) if s <= b => {}
                _ => reverse[j] = Some((i, s)),
            }
        }
    }

    let mut out = Vec::new();
    for (i, cands) in scores.iter().enumerate() {
        let Some((j, s, second)) = best_of(cands) else { continue };
        if s < config.min_ncc {
            continue;
        }
        if second > -1.0 && (1.0 - s) >= config.ratio * (1.0 - second) {
            continue;
        }
        if reverse[j].map(|(ri, _)| ri) != Some(i) {
            continue;
        }
        let (ca, cb) = (corners_a[i], corners_b[j]);
        let pa = patches_a[i].as_ref().expect("scored corners have patches");
        let Some(dst) = refine(pa, &pb, cb.x, cb.y, r) else { continue };
        out.push(Correspondence::new(Vec2::new(ca.x as f64, ca.y as f64), dst));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Blocky random texture with smooth-ish edges.
    fn textured(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::from_pixel(w, h, Luma([128]));
        for _ in 0..120 {
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            let bw = rng.random_range(4..30);
            let bh = rng.random_range(4..30);
            let v: u8 = rng.random();
            for y in y0..(y0 + bh).min(h) {
                for x in x0..(x0 + bw).min(w) {
                    img.put_pixel(x, y, Luma([v]));
                }
            }
        }
        img
    }

    fn shifted(img: &GrayImage, dx: i64, dy: i64) -> GrayImage {
        let (w, h) = img.dimensions();
        GrayImage::from_fn(w, h, |x, y| {
            let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as u32;
            let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as u32;
            *img.get_pixel(sx, sy)
        })
    }

    #[test]
    fn identical_images_match_in_place() {
        let img = textured(160, 120, 1);
        let matches = detect_and_match(&img, &img, &MatchConfig::default()).unwrap();
        assert!(matches.len() >= 20, "only {} matches", matches.len());
        for m in &matches {
            assert!(m.src.distance(m.dst) < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn integer_shift_is_recovered() {
        let img = textured(200, 150, 2);
        let (dx, dy) = (7, -4);
        let moved = shifted(&img, dx, dy);
        let matches = detect_and_match(&img, &moved, &MatchConfig::default()).unwrap();
        assert!(matches.len() >= 20);
        let good = matches
            .iter()
            .filter(|m| {
                let d = m.dst - m.src;
                (d.x - dx as f64).abs() <= 0.5 && (d.y - dy as f64).abs() <= 0.5
            })
            .count();
        assert!(good as f64 >= 0.9 * matches.len() as f64, "{good}/{}", matches.len());
    }

    #[test]
    fn blank_frames_have_no_features() {
        let blank = GrayImage::from_pixel(100, 100, Luma([90]));
        assert!(matches!(
            detect_and_match(&blank, &blank, &MatchConfig::default()),
            Err(MatchError::NoFeatures { found: 0, .. })
        ));
    }

    #[test]
    fn size_mismatch() {
        let a = GrayImage::new(50, 40);
        let b = GrayImage::new(40, 50);
        assert!(matches!(
            detect_and_match(&a, &b, &MatchConfig::default()),
            Err(MatchError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn corners_respect_spacing() {
        let img = textured(160, 120, 3);
        let config = MatchConfig::default();
        let corners = detect_corners(&img, &config);
        assert!(!corners.is_empty());
        for (i, a) in corners.iter().enumerate() {
            for b in &corners[i + 1..] {
                let d = ((a.x as f64 - b.x as f64).powi(2) + (a.y as f64 - b.y as f64).powi(2)).sqrt();
                assert!(d >= config.min_distance);
            }
        }
    }
}

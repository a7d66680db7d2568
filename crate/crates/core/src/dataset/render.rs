//! Sprite compositing with exact ground truth.
//!
//! World coordinates coincide with the pixel coordinates of frame 0 (pixel
//! centers at integers). A frame seen through camera motion `M` shows world
//! point `w` at pixel `M(w)`. The background is a fixed world texture,
//! mirrored beyond its borders, so every visible pixel moves with `M`.

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use super::DatasetError;
use crate::encoding::{CatalogEntry, ObjectCatalog, OrientedLabel};
use crate::geometry::{frame_rect, visible_in_frame, Obb, Similarity2, Vec2};

/// Object image plus the oriented box of the object in sprite pixels.
#[derive(Debug, Clone)]
pub struct Sprite {
    pub class_id: u32,
    pub image: RgbaImage,
    pub anchor: Obb,
}

impl Sprite {
    pub fn new(class_id: u32, image: RgbaImage, anchor: Obb) -> Result<Self, DatasetError> {
        let bounds = frame_rect(image.width(), image.height());
        if !anchor.vertices().iter().all(|&v| bounds.contains(v)) {
            return Err(DatasetError::InvalidSprite("anchor exceeds sprite bounds"));
        }
        Ok(Self {
            class_id,
            image,
            anchor,
        })
    }

    /// A flat or patterned rectangle with the catalog aspect ratio, drawn
    /// with exact area coverage at its border. Non-symmetric objects get an
    /// arrow glyph pointing along the first edge.
    pub fn procedural(entry: &CatalogEntry, height: f64, seed: u64) -> Self {
        let width = height * entry.ratio;
        let margin = 2.0;
        let w_px = (width + 2.0 * margin).ceil() as u32 + 1;
        let h_px = (height + 2.0 * margin).ceil() as u32 + 1;
        let (x0, y0) = (margin, margin);
        let (x1, y1) = (margin + width, margin + height);

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(entry.id) << 32));
        let base = class_color(entry.id);
        let accent = [255 - base[0], 255 - base[1], 255 - base[2]];
        let textured = entry.group.as_deref() == Some("Textured");
        let stripe = rng.random_range(4.0..9.0);
        let phase: f64 = rng.random_range(0.0..stripe);

        let image = RgbaImage::from_fn(w_px, h_px, |px, py| {
            let (x, y) = (f64::from(px), f64::from(py));
            let cover_x = (x + 0.5).min(x1) - (x - 0.5).max(x0);
            let cover_y = (y + 0.5).min(y1) - (y - 0.5).max(y0);
            let alpha = cover_x.clamp(0.0, 1.0) * cover_y.clamp(0.0, 1.0);
            if alpha <= 0.0 {
                return Rgba([0, 0, 0, 0]);
            }
            // local coordinates in [0, 1]
            let u = (x - x0) / width;
            let v = (y - y0) / height;
            let mut c = base;
            if textured && (((x - x0 + phase) / stripe).floor() as i64 + ((y - y0) / stripe).floor() as i64) % 2 == 0 {
                c = [c[0] / 2 + 40, c[1] / 2 + 40, c[2] / 2 + 40];
            }
            if !entry.symmetric && u > 0.55 && u < 0.9 && (v - 0.5).abs() < 0.35 * (0.9 - u) / 0.35 {
                c = accent;
            }
            Rgba([c[0], c[1], c[2], (alpha * 255.0).round() as u8])
        });
        let anchor = Obb::from_center(
            Vec2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)),
            width,
            height,
            0.0,
        )
        .expect("positive sprite size");
        Self {
            class_id: entry.id,
            image,
            anchor,
        }
    }
}

fn class_color(id: u32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 12] = [
        [30, 30, 30],
        [170, 170, 180],
        [230, 120, 30],
        [240, 240, 235],
        [60, 110, 200],
        [200, 40, 40],
        [20, 20, 60],
        [40, 160, 70],
        [140, 90, 50],
        [235, 205, 40],
        [250, 250, 120],
        [90, 40, 140],
    ];
    PALETTE[id as usize % PALETTE.len()]
}

/// Where a sprite sits in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub sprite: usize,
    pub transform: Similarity2,
}

/// Background plus placed sprites; rendered back to front.
#[derive(Debug, Clone)]
pub struct Scene {
    pub background: RgbImage,
    pub sprites: Vec<Sprite>,
    pub placements: Vec<Placement>,
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub image: RgbImage,
    pub labels: Vec<OrientedLabel>,
}

fn reflect(v: f64, n: u32) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let last = f64::from(n - 1);
    let period = 2.0 * last;
    let m = v.rem_euclid(period);
    if m > last {
        period - m
    } else {
        m
    }
}

fn sample_background(bg: &RgbImage, p: Vec2) -> [f64; 3] {
    let x = reflect(p.x, bg.width());
    let y = reflect(p.y, bg.height());
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(bg.width() - 1);
    let y1 = (y0 + 1).min(bg.height() - 1);
    let px = |xx, yy| bg.get_pixel(xx, yy).0;
    let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let top = f64::from(a[k]) * (1.0 - fx) + f64::from(b[k]) * fx;
        let bottom = f64::from(c[k]) * (1.0 - fx) + f64::from(d[k]) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Bilinear sample of the premultiplied sprite; transparent outside.
fn sample_sprite(img: &RgbaImage, p: Vec2) -> [f64; 4] {
    let (x0, y0) = (p.x.floor(), p.y.floor());
    let (fx, fy) = (p.x - x0, p.y - y0);
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let texel = |xx: i64, yy: i64| -> [f64; 4] {
        if xx < 0 || yy < 0 || xx >= w || yy >= h {
            return [0.0; 4];
        }
        let Rgba([r, g, b, a]) = *img.get_pixel(xx as u32, yy as u32);
        let alpha = f64::from(a) / 255.0;
        [f64::from(r) * alpha, f64::from(g) * alpha, f64::from(b) * alpha, alpha]
    };
    let (ix, iy) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (texel(ix, iy), texel(ix + 1, iy), texel(ix, iy + 1), texel(ix + 1, iy + 1));
    let mut out = [0.0; 4];
    for k in 0..4 {
        let top = a[k] * (1.0 - fx) + b[k] * fx;
        let bottom = c[k] * (1.0 - fx) + d[k] * fx;
        out[k] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

impl Scene {
    /// Sprite anchors seen through `camera`, one per placement, without
    /// visibility filtering.
    pub fn labels_at(&self, camera: &Similarity2) -> Result<Vec<OrientedLabel>, DatasetError> {
        self.placements
            .iter()
            .map(|p| {
                let sprite = self
                    .sprites
                    .get(p.sprite)
                    .ok_or(DatasetError::InvalidSprite("placement refers to a missing sprite"))?;
                Ok(OrientedLabel::new(sprite.anchor.transform(&camera.compose(&p.transform)), sprite.class_id))
            })
            .collect()
    }
}

/// Renders `scene` seen through `camera` into a `size` frame. Labels are the
/// anchors mapped by `camera ∘ placement`, without visibility filtering.
pub fn render_view(scene: &Scene, camera: &Similarity2, size: (u32, u32)) -> Result<FrameRecord, DatasetError> {
    let (width, height) = size;
    struct Layer<'a> {
        image: &'a RgbaImage,
        to_sprite: Similarity2,
        min: Vec2,
        max: Vec2,
    }
    let labels = scene.labels_at(camera)?;
    let mut layers = Vec::with_capacity(scene.placements.len());
    for p in &scene.placements {
        let sprite = scene
            .sprites
            .get(p.sprite)
            .ok_or(DatasetError::InvalidSprite("placement refers to a missing sprite"))?;
        let to_frame = camera.compose(&p.transform);
        let outline = frame_rect(sprite.image.width(), sprite.image.height()).transform(&to_frame);
        let hull = outline.aabb();
        layers.push(Layer {
            image: &sprite.image,
            to_sprite: to_frame.inverse(),
            min: hull.min(),
            max: hull.max(),
        });
    }
    let to_world = camera.inverse();
    let mut buf = vec![0u8; width as usize * height as usize * 3];
    buf.par_chunks_mut(width as usize * 3)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..width as usize {
                let q = Vec2::new(x as f64, y as f64);
                let mut color = sample_background(&scene.background, to_world.apply(q));
                for layer in &layers {
                    if q.x < layer.min.x || q.x > layer.max.x || q.y < layer.min.y || q.y > layer.max.y {
                        continue;
                    }
                    let s = sample_sprite(layer.image, layer.to_sprite.apply(q));
                    if s[3] <= 0.0 {
                        continue;
                    }
                    for k in 0..3 {
                        color[k] = s[k] + (1.0 - s[3]) * color[k];
                    }
                }
                for k in 0..3 {
                    row[x * 3 + k] = color[k].round().clamp(0.0, 255.0) as u8;
                }
            }
        });
    let image = RgbImage::from_raw(width, height, buf).expect("buffer sized to frame");
    Ok(FrameRecord { image, labels })
}

/// Composites the placed sprites over `background` (same frame size, no
/// camera motion).
pub fn render_synthetic_frame(
    background: &RgbImage,
    sprites: &[Sprite],
    placements: &[Placement],
) -> Result<FrameRecord, DatasetError> {
    let scene = Scene {
        background: background.clone(),
        sprites: sprites.to_vec(),
        placements: placements.to_vec(),
    };
    let size = background.dimensions();
    let frame = render_view(&scene, &Similarity2::IDENTITY, size)?;
    for (i, l) in frame.labels.iter().enumerate() {
        if !visible_in_frame(&l.obb, size) {
            return Err(DatasetError::PlacementOutOfFrame { placement: i, frame: 0 });
        }
    }
    Ok(frame)
}

/// Chained camera motions: frame 0 is the identity, frame `i + 1` is
/// `motions[i] ∘ camera_i`.
pub fn chain_motions(motions: &[Similarity2]) -> Vec<Similarity2> {
    let mut cameras = Vec::with_capacity(motions.len() + 1);
    let mut current = Similarity2::IDENTITY;
    cameras.push(current);
    for m in motions {
        current = m.compose(&current);
        cameras.push(current);
    }
    cameras
}

/// Renders `motions.len() + 1` frames of `scene` under chained camera motion.
///
/// Ground truth comes from the chained motion directly. A label is dropped
/// from the first frame where it is entirely outside the image onwards.
pub fn generate_sequence(
    scene: &Scene,
    motions: &[Similarity2],
    size: (u32, u32),
) -> Result<Vec<FrameRecord>, DatasetError> {
    let cameras = chain_motions(motions);
    let mut frames: Vec<FrameRecord> = cameras
        .par_iter()
        .map(|camera| render_view(scene, camera, size))
        .collect::<Result<_, _>>()?;

    let mut alive = vec![true; scene.placements.len()];
    for (index, frame) in frames.iter_mut().enumerate() {
        let mut kept = Vec::new();
        for (i, label) in frame.labels.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            if visible_in_frame(&label.obb, size) {
                kept.push(*label);
            } else if index == 0 {
                return Err(DatasetError::PlacementOutOfFrame { placement: i, frame: 0 });
            } else {
                alive[i] = false;
            }
        }
        frame.labels = kept;
    }
    Ok(frames)
}

/// Camera motions that rotate by `rotation` and scale by `scale` about
/// `center` every frame, each followed by a uniform translation jitter of at
/// most `jitter` pixels per axis.
pub fn lift_rotate_motions(
    frames: usize,
    rotation: f64,
    scale: f64,
    center: Vec2,
    jitter: f64,
    seed: u64,
) -> Vec<Similarity2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Similarity2::about_point(scale, rotation, center);
    (0..frames)
        .map(|_| {
            if jitter > 0.0 {
                let u = Uniform::new_inclusive(-jitter, jitter).expect("finite jitter");
                let shake = Vec2::new(u.sample(&mut rng), u.sample(&mut rng));
                Similarity2::translation(shake).compose(&base)
            } else {
                base
            }
        })
        .collect()
}

/// Cluttered background of random rectangles.
pub fn procedural_background(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::from_pixel(width, height, Rgb([110, 100, 90]));
    let area = u64::from(width) * u64::from(height);
    let count = (area / 300).max(20);
    for _ in 0..count {
        let w = rng.random_range(3..(width / 8).max(4));
        let h = rng.random_range(3..(height / 8).max(4));
        let x0 = rng.random_range(0..width);
        let y0 = rng.random_range(0..height);
        let c = Rgb([rng.random(), rng.random(), rng.random()]);
        for y in y0..(y0 + h).min(height) {
            for x in x0..(x0 + w).min(width) {
                img.put_pixel(x, y, c);
            }
        }
    }
    img
}

/// One sprite per catalog entry, scattered without overlap inside the
/// central `fill` fraction of the frame.
pub fn random_scene(
    catalog: &ObjectCatalog,
    size: (u32, u32),
    object_height: f64,
    fill: f64,
    seed: u64,
) -> Result<Scene, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = procedural_background(size.0, size.1, seed.wrapping_add(1));
    let sprites: Vec<Sprite> = catalog
        .entries()
        .iter()
        .map(|e| Sprite::procedural(e, object_height, seed))
        .collect();
    let (w, h) = (f64::from(size.0), f64::from(size.1));
    let lo = Vec2::new(0.5 * (1.0 - fill) * w, 0.5 * (1.0 - fill) * h);
    let hi = Vec2::new(w - lo.x, h - lo.y);
    let mut placed: Vec<Obb> = Vec::new();
    let mut placements = Vec::new();
    for (i, sprite) in sprites.iter().enumerate() {
        let mut ok = false;
        for _ in 0..500 {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let center = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
            let t = Similarity2::new(1.0, angle, Vec2::ZERO);
            let moved = t.apply(sprite.anchor.center());
            let t = Similarity2::new(1.0, angle, center - moved);
            let obb = sprite.anchor.transform(&t);
            let hull = obb.aabb();
            let inside = hull.min().x >= lo.x && hull.min().y >= lo.y && hull.max().x <= hi.x && hull.max().y <= hi.y;
            let grown = Obb::from_center(obb.center(), obb.width() + 6.0, obb.height() + 6.0, obb.angle())
                .expect("positive size");
            if inside && placed.iter().all(|o| crate::geometry::overlap_area(o, &grown) == 0.0) {
                placed.push(obb);
                placements.push(Placement { sprite: i, transform: t });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(DatasetError::InvalidSprite("could not place every object without overlap"));
        }
    }
    Ok(Scene {
        background,
        sprites,
        placements,
    })
}

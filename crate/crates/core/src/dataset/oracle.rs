use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::encoding::{encode_label, AngleQuantizer, OrientedLabel, UnorientedLabel};
use crate::geometry::{Aabb, Vec2};

/// Error model for [`oracle_detector`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Standard deviation of the hull center offset, pixels per axis.
    pub center_sigma: f64,
    /// Standard deviation of the relative hull side change.
    pub size_sigma: f64,
    /// Probability of reporting a wrong orientation bin.
    pub angle_flip_prob: f64,
    pub miss_prob: f64,
    /// Mean number of spurious boxes per frame.
    pub clutter_rate: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::NONE
    }
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        center_sigma: 0.0,
        size_sigma: 0.0,
        angle_flip_prob: 0.0,
        miss_prob: 0.0,
        clutter_rate: 0.0,
    };

    pub fn validate(&self) -> Result<(), DatasetError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.center_sigma >= 0.0 && self.center_sigma.is_finite()) {
            return Err(DatasetError::InvalidNoise("center_sigma must be finite and >= 0"));
        }
        if !(self.size_sigma >= 0.0 && self.size_sigma.is_finite()) {
            return Err(DatasetError::InvalidNoise("size_sigma must be finite and >= 0"));
        }
        if !prob(self.angle_flip_prob) || !prob(self.miss_prob) {
            return Err(DatasetError::InvalidNoise("probabilities must lie in [0, 1]"));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(DatasetError::InvalidNoise("clutter_rate must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Per-frame seed derived from a run seed (splitmix64 finalizer).
pub fn frame_seed(seed: u64, frame: usize) -> u64 {
    let mut z = seed.wrapping_add((frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Detector stand-in: encodes every ground-truth label and perturbs it.
///
/// Each label is missed with `miss_prob`; otherwise its hull is shifted and
/// resized, and with `angle_flip_prob` it is given another orientation bin
/// of the same object (confidence halved). Confidence is `exp(-m)` where `m`
/// is the center shift relative to the hull size plus the relative size
/// change. A Poisson number of clutter boxes with confidence in `[0, 0.5)`
/// is appended. The same seed always gives the same output.
pub fn oracle_detector(
    labels: &[OrientedLabel],
    frame_size: (u32, u32),
    classes: usize,
    q: &AngleQuantizer,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<UnorientedLabel>, DatasetError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Normal::new(0.0, noise.center_sigma).expect("validated sigma");
    let size = Normal::new(0.0, noise.size_sigma).expect("validated sigma");
    let miss = Bernoulli::new(noise.miss_prob).expect("validated probability");
    let flip = Bernoulli::new(noise.angle_flip_prob).expect("validated probability");
    let bins = q.bins();

    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let encoded = encode_label(q, label);
        // draws happen unconditionally so that one label's outcome does not
        // shift the random stream of the next
        let missed = miss.sample(&mut rng);
        let (dx, dy) = (center.sample(&mut rng), center.sample(&mut rng));
        let (sw, sh) = (size.sample(&mut rng), size.sample(&mut rng));
        let flipped = flip.sample(&mut rng) && bins > 1;
        let other_bin = rng.random_range(1..bins.max(2));
        if missed {
            continue;
        }
        let hull = encoded.aabb;
        let fw = (1.0 + sw).max(0.05);
        let fh = (1.0 + sh).max(0.05);
        let (w, h) = (hull.w * fw, hull.h * fh);
        let c = hull.center() + Vec2::new(dx, dy);
        let aabb = Aabb::new(c.x, c.y, w, h).expect("positive perturbed size");
        let magnitude = Vec2::new(dx, dy).norm() / (hull.w * hull.h).sqrt() + 0.5 * ((fw - 1.0).abs() + (fh - 1.0).abs());
        let mut confidence = (-magnitude).exp();
        let mut expanded = encoded.expanded_class;
        if flipped {
            let (class_id, _) = q.split(expanded);
            let bin = expanded % bins;
            expanded = class_id * bins + (bin + other_bin) % bins;
            confidence *= 0.5;
        }
        out.push(UnorientedLabel {
            aabb,
            expanded_class: expanded,
            confidence,
        });
    }

    if noise.clutter_rate > 0.0 && classes > 0 {
        let count = Poisson::new(noise.clutter_rate).expect("positive rate").sample(&mut rng) as usize;
        let (fw, fh) = (f64::from(frame_size.0), f64::from(frame_size.1));
        let max_side = (0.2 * fw.min(fh)).max(9.0);
        for _ in 0..count {
            let w = rng.random_range(8.0..max_side);
            let h = rng.random_range(8.0..max_side);
            let x = rng.random_range(-0.5..(fw - 0.5 - w).max(0.0)) + 0.5 * w;
            let y = rng.random_range(-0.5..(fh - 0.5 - h).max(0.0)) + 0.5 * h;
            let class_id = rng.random_range(0..classes as u32);
            let bin = rng.random_range(0..bins);
            out.push(UnorientedLabel {
                aabb: Aabb::new(x, y, w, h).expect("positive clutter size"),
                expanded_class: class_id * bins + bin,
                confidence: rng.random_range(0.0..0.5),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{decode_prediction, ObjectCatalog};
    use crate::geometry::{angle_distance, Obb};

    fn labels() -> Vec<OrientedLabel> {
        (0..12)
            .map(|i| {
                let c = Vec2::new(40.0 + 45.0 * (i % 6) as f64, 60.0 + 100.0 * (i / 6) as f64);
                let ratio = ObjectCatalog::desk_objects().entries()[i].ratio;
                OrientedLabel::new(Obb::from_center(c, 14.0 * ratio, 14.0, 0.37 * i as f64).unwrap(), i as u32)
            })
            .collect()
    }

    fn q() -> AngleQuantizer {
        AngleQuantizer::from_degrees(10.0).unwrap()
    }

    #[test]
    fn zero_noise_is_the_encoding() {
        let gt = labels();
        let preds = oracle_detector(&gt, (320, 240), 12, &q(), &NoiseModel::NONE, 5).unwrap();
        assert_eq!(preds.len(), gt.len());
        for (p, l) in preds.iter().zip(&gt) {
            assert_eq!(*p, encode_label(&q(), l));
            assert_eq!(p.confidence, 1.0);
        }
    }

    #[test]
    fn zero_noise_decodes_within_half_step() {
        let catalog = ObjectCatalog::desk_objects();
        let gt = labels();
        let preds = oracle_detector(&gt, (320, 240), 12, &q(), &NoiseModel::NONE, 5).unwrap();
        for (p, l) in preds.iter().zip(&gt) {
            let d = decode_prediction(&q(), &catalog, p).unwrap();
            assert_eq!(d.class_id, l.class_id);
            assert!(angle_distance(d.theta, l.theta) <= q().step() / 2.0 + 1e-9);
        }
    }

    #[test]
    fn certain_miss_is_empty() {
        let noise = NoiseModel {
            miss_prob: 1.0,
            ..NoiseModel::NONE
        };
        assert!(oracle_detector(&labels(), (320, 240), 12, &q(), &noise, 1).unwrap().is_empty());
    }

    #[test]
    fn seeded_output_repeats() {
        let noise = NoiseModel {
            center_sigma: 2.0,
            size_sigma: 0.05,
            angle_flip_prob: 0.1,
            miss_prob: 0.05,
            clutter_rate: 2.0,
        };
        let a = oracle_detector(&labels(), (320, 240), 12, &q(), &noise, 77).unwrap();
        let b = oracle_detector(&labels(), (320, 240), 12, &q(), &noise, 77).unwrap();
        assert_eq!(a, b);
        let c = oracle_detector(&labels(), (320, 240), 12, &q(), &noise, 78).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|p| p.confidence > 0.0 && p.confidence <= 1.0));
    }

    #[test]
    fn flips_keep_the_object() {
        let noise = NoiseModel {
            angle_flip_prob: 1.0,
            ..NoiseModel::NONE
        };
        let gt = labels();
        let preds = oracle_detector(&gt, (320, 240), 12, &q(), &noise, 3).unwrap();
        for (p, l) in preds.iter().zip(&gt) {
            let e = encode_label(&q(), l).expanded_class;
            assert_ne!(p.expanded_class, e);
            assert_eq!(p.expanded_class / q().bins(), l.class_id);
            assert_eq!(p.confidence, 0.5);
        }
    }

    #[test]
    fn rejects_bad_noise() {
        let noise = NoiseModel {
            miss_prob: 1.5,
            ..NoiseModel::NONE
        };
        assert!(oracle_detector(&labels(), (320, 240), 12, &q(), &noise, 0).is_err());
    }

    #[test]
    fn frame_seeds_differ() {
        assert_ne!(frame_seed(1, 0), frame_seed(1, 1));
        assert_ne!(frame_seed(1, 0), frame_seed(2, 0));
        assert_eq!(frame_seed(9, 4), frame_seed(9, 4));
    }
}

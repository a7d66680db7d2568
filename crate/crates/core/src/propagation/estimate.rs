//! Similarity fitting from point correspondences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Similarity2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: Vec2,
    pub dst: Vec2,
}

impl Correspondence {
    pub fn new(src: Vec2, dst: Vec2) -> Self {
        Self { src, dst }
    }

    pub fn residual(&self, t: &Similarity2) -> f64 {
        t.apply(self.src).distance(self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimationError {
    #[error("need at least 2 correspondences, got {0}")]
    InsufficientMatches(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("no consensus: best model has {0} inliers")]
    NoConsensus(usize),
    #[error("invalid ransac config: {0}")]
    InvalidConfig(&'static str),
}

/// Closed-form least-squares similarity (Umeyama without reflection).
///
/// Writing points as complex numbers, the optimal linear part is
/// `a = Σ w·conj(z) / Σ |z|²` over centered coordinates; `scale = |a|` and
/// `rotation = arg(a)`.
pub fn estimate_similarity_lsq(matches: &[Correspondence]) -> Result<Similarity2, EstimationError> {
    if matches.len() < 2 {
        return Err(EstimationError::InsufficientMatches(matches.len()));
    }
    let n = matches.len() as f64;
    let (mut src_c, mut dst_c) = (Vec2::ZERO, Vec2::ZERO);
    for m in matches {
        src_c = src_c + m.src;
        dst_c = dst_c + m.dst;
    }
    src_c = src_c * (1.0 / n);
    dst_c = dst_c * (1.0 / n);

    let (mut re, mut im, mut den) = (0.0, 0.0, 0.0);
    for m in matches {
        let z = m.src - src_c;
        let w = m.dst - dst_c;
        re += w.x * z.x + w.y * z.y;
        im += w.y * z.x - w.x * z.y;
        den += z.norm_squared();
    }
    let spread = den / n;
    if !(spread > 1e-18 * (1.0 + src_c.norm_squared())) {
        return Err(EstimationError::DegenerateConfiguration("source points coincide"));
    }
    let (re, im) = (re / den, im / den);
    let scale = re.hypot(im);
    if !(scale > 1e-12) || !scale.is_finite() {
        return Err(EstimationError::DegenerateConfiguration("target points coincide"));
    }
    let rotation = im.atan2(re);
    let linear = Similarity2::new(scale, rotation, Vec2::ZERO);
    Ok(Similarity2::new(
        scale,
        rotation,
        dst_c - linear.apply(src_c),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Upper bound on sampled hypotheses.
    pub iterations: usize,
    /// Residual (pixels) below which a match counts as an inlier.
    pub inlier_threshold: f64,
    pub seed: u64,
    /// Stop early once an outlier-free sample has been drawn with this
    /// probability, given the best inlier ratio so far. `1.0` disables it.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_threshold: 2.0,
            seed: 0,
            confidence: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEstimate {
    pub transform: Similarity2,
    pub inlier_count: usize,
    pub inlier_rms: f64,
    pub inlier_mask: Vec<bool>,
}

fn consensus(matches: &[Correspondence], t: &Similarity2, threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = Vec::with_capacity(matches.len());
    let (mut count, mut sq) = (0usize, 0.0);
    for m in matches {
        let r = m.residual(t);
        let inlier = r < threshold;
        if inlier {
            count += 1;
            sq += r * r;
        }
        mask.push(inlier);
    }
    (mask, count, sq)
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let good = inlier_ratio * inlier_ratio;
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// RANSAC over two-point minimal samples, refit on the final inlier set.
///
/// Deterministic for a fixed `config.seed` and input order.
pub fn estimate_similarity_ransac(
    matches: &[Correspondence],
    config: &RansacConfig,
) -> Result<SimilarityEstimate, EstimationError> {
    if matches.len() < 2 {
        return Err(EstimationError::InsufficientMatches(matches.len()));
    }
    if config.iterations == 0 {
        return Err(EstimationError::InvalidConfig("iterations must be >= 1"));
    }
    if !(config.inlier_threshold > 0.0) {
        return Err(EstimationError::InvalidConfig("inlier threshold must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = matches.len();
    let mut best: Option<(usize, f64, Similarity2)> = None;
    let mut budget = config.iterations;
    let mut it = 0;
    while it < budget {
        it += 1;
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let sample = [matches[i], matches[j]];
        let Ok(model) = estimate_similarity_lsq(&sample) else {
            continue;
        };
        let (_, count, sq) = consensus(matches, &model, config.inlier_threshold);
        let better = match best {
            None => true,
            Some((c, s, _)) => count > c || (count == c && sq < s),
        };
        if better {
            best = Some((count, sq, model));
            if config.confidence < 1.0 {
                let need = required_iterations(count as f64 / n as f64, config.confidence);
                budget = budget.min(need.max(it));
            }
        }
    }
    let (count, _, mut model) = best.ok_or(EstimationError::NoConsensus(0))?;
    if count < 2 {
        return Err(EstimationError::NoConsensus(count));
    }

    let (mut mask, _, _) = consensus(matches, &model, config.inlier_threshold);
    for _ in 0..10 {
        let inliers: Vec<Correspondence> = matches
            .iter()
            .zip(&mask)
            .filter_map(|(m, &keep)| keep.then_some(*m))
            .collect();
        if inliers.len() < 2 {
            return Err(EstimationError::NoConsensus(inliers.len()));
        }
        model = estimate_similarity_lsq(&inliers)?;
        let (next, _, _) = consensus(matches, &model, config.inlier_threshold);
        if next == mask {
            break;
        }
        mask = next;
    }
    let (mask, count, sq) = consensus(matches, &model, config.inlier_threshold);
    if count < 2 {
        return Err(EstimationError::NoConsensus(count));
    }
    Ok(SimilarityEstimate {
        transform: model,
        inlier_count: count,
        inlier_rms: (sq / count as f64).sqrt(),
        inlier_mask: mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Normal, Uniform};

    fn cloud(n: usize, seed: u64) -> Vec<Vec2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-200.0, 200.0).unwrap();
        (0..n).map(|_| Vec2::new(u.sample(&mut rng), u.sample(&mut rng))).collect()
    }

    fn related(points: &[Vec2], t: &Similarity2) -> Vec<Correspondence> {
        points.iter().map(|&p| Correspondence::new(p, t.apply(p))).collect()
    }

    #[test]
    fn identity_and_translation() {
        let pts = cloud(5, 1);
        let est = estimate_similarity_lsq(&related(&pts, &Similarity2::IDENTITY)).unwrap();
        assert!(est.max_param_diff(&Similarity2::IDENTITY) < 1e-12);

        let shift = Similarity2::translation(Vec2::new(5.0, -3.0));
        let est = estimate_similarity_lsq(&related(&pts, &shift)).unwrap();
        assert_abs_diff_eq!(est.scale, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.rotation, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.translation.x, 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.translation.y, -3.0, epsilon = 1e-9);
    }

    #[test]
    fn recovers_known_similarity() {
        let truth = Similarity2::new(1.1, 30f64.to_radians(), Vec2::new(2.0, 1.0));
        let est = estimate_similarity_lsq(&related(&cloud(50, 2), &truth)).unwrap();
        assert!(est.max_param_diff(&truth) < 1e-9, "{est:?}");
    }

    #[test]
    fn lsq_errors() {
        let p = Vec2::new(1.0, 1.0);
        assert_eq!(
            estimate_similarity_lsq(&[Correspondence::new(p, p)]),
            Err(EstimationError::InsufficientMatches(1))
        );
        let same = vec![Correspondence::new(p, Vec2::ZERO), Correspondence::new(p, Vec2::new(3.0, 0.0))];
        assert!(matches!(
            estimate_similarity_lsq(&same),
            Err(EstimationError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn lsq_is_a_least_squares_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let truth = Similarity2::new(0.95, -0.4, Vec2::new(10.0, -7.0));
        let matches: Vec<_> = cloud(40, 4)
            .into_iter()
            .map(|p| {
                let q = truth.apply(p);
                Correspondence::new(p, Vec2::new(q.x + noise.sample(&mut rng), q.y + noise.sample(&mut rng)))
            })
            .collect();
        let est = estimate_similarity_lsq(&matches).unwrap();
        let cost = |t: &Similarity2| matches.iter().map(|m| m.residual(t).powi(2)).sum::<f64>();
        let base = cost(&est);
        let h = 1e-3;
        for (ds, dr, dx, dy) in [
            (h, 0.0, 0.0, 0.0),
            (-h, 0.0, 0.0, 0.0),
            (0.0, h, 0.0, 0.0),
            (0.0, -h, 0.0, 0.0),
            (0.0, 0.0, h, 0.0),
            (0.0, 0.0, -h, 0.0),
            (0.0, 0.0, 0.0, h),
            (0.0, 0.0, 0.0, -h),
        ] {
            let t = Similarity2::new(
                est.scale + ds,
                est.rotation + dr,
                est.translation + Vec2::new(dx, dy),
            );
            assert!(cost(&t) >= base, "perturbation decreased cost");
        }
    }

    #[test]
    fn ransac_outlier_free_matches_lsq() {
        let truth = Similarity2::new(1.02, 0.1, Vec2::new(3.0, 4.0));
        let matches = related(&cloud(30, 5), &truth);
        let est = estimate_similarity_ransac(&matches, &RansacConfig::default()).unwrap();
        let lsq = estimate_similarity_lsq(&matches).unwrap();
        assert_eq!(est.inlier_count, 30);
        assert!(est.inlier_mask.iter().all(|&b| b));
        assert!(est.transform.max_param_diff(&lsq) < 1e-9);
    }

    #[test]
    fn ransac_rejects_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = Similarity2::new(0.9, 2.0, Vec2::new(-20.0, 12.0));
        let mut matches = related(&cloud(200, 7), &truth);
        let u = Uniform::new(-300.0, 300.0).unwrap();
        for m in matches.iter_mut().take(60) {
            m.dst = Vec2::new(u.sample(&mut rng), u.sample(&mut rng));
        }
        let config = RansacConfig {
            inlier_threshold: 1.0,
            ..RansacConfig::default()
        };
        let est = estimate_similarity_ransac(&matches, &config).unwrap();
        assert!((est.transform.rotation - truth.rotation).abs() < 1e-3);
        assert!((est.transform.translation - truth.translation).norm() < 0.1);
        assert!(est.inlier_count >= 140);
        assert!(est.inlier_mask[60..].iter().all(|&b| b));
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut matches = related(&cloud(80, 8), &Similarity2::new(1.0, 0.5, Vec2::new(1.0, 2.0)));
        for (i, m) in matches.iter_mut().enumerate().take(30) {
            m.dst = Vec2::new(i as f64 * 7.0, -(i as f64) * 3.0);
        }
        let config = RansacConfig {
            seed: 42,
            ..RansacConfig::default()
        };
        let a = estimate_similarity_ransac(&matches, &config).unwrap();
        let b = estimate_similarity_ransac(&matches, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ransac_errors() {
        let one = [Correspondence::new(Vec2::ZERO, Vec2::ZERO)];
        assert_eq!(
            estimate_similarity_ransac(&one, &RansacConfig::default()),
            Err(EstimationError::InsufficientMatches(1))
        );
        let two = [
            Correspondence::new(Vec2::ZERO, Vec2::ZERO),
            Correspondence::new(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0)),
        ];
        let bad = RansacConfig {
            iterations: 0,
            ..RansacConfig::default()
        };
        assert!(matches!(
            estimate_similarity_ransac(&two, &bad),
            Err(EstimationError::InvalidConfig(_))
        ));
    }
}

use std::f64::consts::PI;

use proptest::prelude::*;

use loopkit::propagation::{estimate_similarity_lsq, estimate_similarity_ransac, Correspondence, RansacConfig};
use loopkit::{Similarity2, Vec2};

fn similarity() -> impl Strategy<Value = Similarity2> {
    (0.8..1.25f64, -PI..PI, -50.0..50.0f64, -50.0..50.0f64)
        .prop_map(|(s, r, x, y)| Similarity2::new(s, r, Vec2::new(x, y)))
}

/// Points with bounded noise on the targets.
fn noisy_matches() -> impl Strategy<Value = Vec<Correspondence>> {
    (similarity(), prop::collection::vec((0.0..200.0f64, 0.0..200.0f64, -1.0..1.0f64, -1.0..1.0f64), 3..40)).prop_map(
        |(t, pts)| {
            pts.into_iter()
                .map(|(x, y, nx, ny)| {
                    let p = Vec2::new(x, y);
                    Correspondence::new(p, t.apply(p) + Vec2::new(nx, ny))
                })
                .collect()
        },
    )
}

fn cost(matches: &[Correspondence], t: &Similarity2) -> f64 {
    matches.iter().map(|m| m.residual(t).powi(2)).sum()
}

proptest! {
    #[test]
    fn least_squares_is_a_local_minimum(matches in noisy_matches(), axis in 0usize..4, sign in prop::bool::ANY) {
        let fit = estimate_similarity_lsq(&matches);
        prop_assume!(fit.is_ok());
        let fit = fit.unwrap();
        let base = cost(&matches, &fit);
        let h = if sign { 1e-4 } else { -1e-4 };
        let mut moved = fit;
        match axis {
            0 => moved.scale *= 1.0 + h,
            1 => moved.rotation += h,
            2 => moved.translation.x += h,
            _ => moved.translation.y += h,
        }
        prop_assert!(cost(&matches, &moved) >= base - 1e-9 * (1.0 + base), "{} < {base}", cost(&matches, &moved));
    }

    #[test]
    fn exact_correspondences_are_recovered(t in similarity(), pts in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64), 2..20)) {
        let matches: Vec<_> = pts.iter().map(|&(x, y)| {
            let p = Vec2::new(x, y);
            Correspondence::new(p, t.apply(p))
        }).collect();
        let fit = estimate_similarity_lsq(&matches);
        // coincident points leave the rotation undetermined
        prop_assume!(fit.is_ok());
        let fit = fit.unwrap();
        for m in &matches {
            prop_assert!(m.residual(&fit) < 1e-6);
        }
    }

    #[test]
    fn ransac_is_deterministic(matches in noisy_matches(), seed in any::<u64>()) {
        let config = RansacConfig { seed, ..RansacConfig::default() };
        let a = estimate_similarity_ransac(&matches, &config);
        let b = estimate_similarity_ransac(&matches, &config);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.transform.scale.to_bits(), b.transform.scale.to_bits());
                prop_assert_eq!(a.transform.rotation.to_bits(), b.transform.rotation.to_bits());
                prop_assert_eq!(a.transform.translation.x.to_bits(), b.transform.translation.x.to_bits());
                prop_assert_eq!(a.transform.translation.y.to_bits(), b.transform.translation.y.to_bits());
                prop_assert_eq!(a.inlier_mask, b.inlier_mask);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn ransac_ignores_a_minority_of_outliers(t in similarity(), seed in any::<u64>(),
                                             pts in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64), 30..60),
                                             junk in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64), 0..10)) {
        let mut matches: Vec<_> = pts.iter().map(|&(x, y)| {
            let p = Vec2::new(x, y);
            Correspondence::new(p, t.apply(p))
        }).collect();
        matches.extend(junk.iter().map(|&(x, y)| Correspondence::new(Vec2::new(x, y), Vec2::new(y + 300.0, x - 300.0))));
        let est = estimate_similarity_ransac(&matches, &RansacConfig { seed, ..RansacConfig::default() }).unwrap();
        prop_assert!(est.inlier_count >= pts.len());
        for (m, &inlier) in matches.iter().zip(&est.inlier_mask).take(pts.len()) {
            prop_assert!(inlier);
            prop_assert!(m.residual(&est.transform) < 1e-6);
        }
    }
}

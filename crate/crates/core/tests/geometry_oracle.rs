mod oracles;

use graspswarm::geometry::{rect_iou, signed_angle_delta, MatchCriteria, OverlapMetric};
use graspswarm::{angle_diff, rect_match, GraspRect};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IOU_TOL: f64 = 1e-3;
const RASTER_SPACING: f64 = 0.005;

fn random_pair(rng: &mut ChaCha8Rng) -> (GraspRect, GraspRect) {
    let mut draw = |cx: f64, cy: f64| {
        GraspRect::new(
            cx + rng.random_range(-15.0..15.0),
            cy + rng.random_range(-15.0..15.0),
            rng.random_range(0.0..180.0),
            rng.random_range(8.0..40.0),
            rng.random_range(8.0..40.0),
        )
        .unwrap()
    };
    let a = draw(0.0, 0.0);
    let b = draw(a.x, a.y);
    (a, b)
}

#[test]
fn iou_matches_raster_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for _ in 0..1000 {
        let (a, b) = random_pair(&mut rng);
        let exact = rect_iou(&a, &b);
        let approx = oracles::raster_iou(&a, &b, RASTER_SPACING);
        worst = worst.max((exact - approx).abs());
        overlapping += (exact > 0.0) as usize;
    }
    assert!(worst < IOU_TOL, "worst deviation {worst}");
    assert!(overlapping > 500, "fixture too sparse: {overlapping}");
}

#[test]
fn shifted_squares_one_third() {
    let a = GraspRect::new(0.0, 0.0, 0.0, 10.0, 10.0).unwrap();
    let b = a.translated(5.0, 0.0);
    assert!((rect_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    assert!((oracles::raster_iou(&a, &b, RASTER_SPACING) - 1.0 / 3.0).abs() < IOU_TOL);
}

#[test]
fn angle_diff_wraparound() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let a = rng.random_range(-720.0..720.0);
        let b = rng.random_range(-720.0..720.0);
        let d = angle_diff(a, b);
        assert!((0.0..=90.0).contains(&d));
        assert!((d - oracles::angle_diff_brute(a, b)).abs() < 1e-9, "{a} {b}");
        let k = rng.random_range(-4..=4) as f64;
        assert!((angle_diff(a + 180.0 * k, b) - d).abs() < 1e-9);
        assert!((angle_diff(b, a) - d).abs() < 1e-12);
        assert!((signed_angle_delta(a, b).abs() - d).abs() < 1e-9);
    }
}

#[test]
fn over_label_denominator() {
    let label = GraspRect::new(50.0, 50.0, 0.0, 10.0, 20.0).unwrap();
    let pred = GraspRect::new(50.0, 50.0, 0.0, 10.0, 40.0).unwrap();
    let crit = MatchCriteria {
        metric: OverlapMetric::OverLabel,
        ..MatchCriteria::default()
    };
    assert!((crit.overlap(&pred, &label) - 1.0).abs() < 1e-12);
    assert!((MatchCriteria::default().overlap(&pred, &label) - 0.5).abs() < 1e-12);
}

fn rect_strategy() -> impl Strategy<Value = GraspRect> {
    (-100.0..100.0f64, -100.0..100.0f64, 0.0..180.0f64, 1.0..60.0f64, 1.0..60.0f64)
        .prop_map(|(x, y, t, h, w)| GraspRect::new(x, y, t, h, w).unwrap())
}

proptest! {
    #[test]
    fn corners_centroid_is_center(r in rect_strategy()) {
        let c = r.corners();
        let cx = c.iter().map(|p| p[0]).sum::<f64>() / 4.0;
        let cy = c.iter().map(|p| p[1]).sum::<f64>() / 4.0;
        prop_assert!((cx - r.x).abs() < 1e-9 && (cy - r.y).abs() < 1e-9);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in rect_strategy(), b in rect_strategy()) {
        let ab = rect_iou(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - rect_iou(&b, &a)).abs() < 1e-9);
        prop_assert!((rect_iou(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn match_translation_invariant(a in rect_strategy(), b in rect_strategy(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let ta = a.translated(dx, dy);
        let tb = b.translated(dx, dy);
        prop_assert!((rect_iou(&a, &b) - rect_iou(&ta, &tb)).abs() < 1e-9);
        // avoid flipping exactly at the threshold
        let iou = rect_iou(&a, &b);
        if (iou - 0.2).abs() > 1e-6 && (angle_diff(a.theta, b.theta) - 30.0).abs() > 1e-6 {
            prop_assert_eq!(rect_match(&a, &b), rect_match(&ta, &tb));
        }
    }

    #[test]
    fn quarter_turn_swap_is_same_rect(r in rect_strategy()) {
        let swapped = GraspRect::new(r.x, r.y, r.theta + 90.0, r.w, r.h).unwrap();
        prop_assert!((rect_iou(&r, &swapped) - 1.0).abs() < 1e-9);
    }
}

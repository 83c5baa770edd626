use dummynet_core::image::MaskImage;
use dummynet_core::mask::*;
use dummynet_core::pose::{default_sigma, render_heatmaps, KeypointHeatmaps, Skeleton, NUM_KEYPOINTS};
use dummynet_core::rng::seeded;
use dummynet_core::synth::{person_crop, CropSpec};
use dummynet_core::Error;
use rand::Rng;

fn pair(seed: u64, size: usize) -> (KeypointHeatmaps<f32>, MaskImage<f32>) {
    let spec = CropSpec { size, ..CropSpec::default() };
    let p = person_crop::<f32, _>(&mut seeded(seed), &spec);
    let sk: Skeleton<f32> = p.pose.skeleton((size, size));
    (render_heatmaps(&sk, default_sigma(size) as f32), p.mask)
}

fn skeleton_from(points: &[[f64; 2]], size: usize) -> Skeleton<f64> {
    let mut pts = [[0.0; 2]; NUM_KEYPOINTS];
    let mut vis = [false; NUM_KEYPOINTS];
    for (i, p) in points.iter().enumerate() {
        pts[i] = *p;
        vis[i] = true;
    }
    Skeleton::new(pts, vis, (size, size)).unwrap()
}

fn small() -> UNetConfig {
    UNetConfig { resolution: 32, base_width: 4, depth: 2 }
}

#[test]
fn estimates_are_probabilities_of_the_right_size() {
    let me = MaskEstimator::<f32>::new(small(), 3).unwrap();
    for s in 0..4 {
        let (hm, _) = pair(s, 32);
        let m = me.estimate_mask(&hm).unwrap();
        assert_eq!(m.size(), (32, 32));
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn wrong_resolution_is_rejected() {
    let me = MaskEstimator::<f32>::new(small(), 3).unwrap();
    let (hm, _) = pair(0, 64);
    assert!(matches!(me.estimate_mask(&hm), Err(Error::ResolutionMismatch { expected: (32, 32), found: (64, 64) })));
    assert!(matches!(MaskEstimator::<f32>::new(UNetConfig { resolution: 30, base_width: 4, depth: 2 }, 0), Err(Error::Config(_))));
}

#[test]
fn training_is_deterministic() {
    let data: Vec<_> = (0..8).map(|s| pair(s, 32)).collect();
    let cfg = MaskTrainConfig { net: small(), epochs: 2, batch_size: 4, ..Default::default() };
    let (a, ra) = train_mask_estimator(&data, &cfg).unwrap();
    let (b, rb) = train_mask_estimator(&data, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.estimate_mask(&data[0].0).unwrap(), b.estimate_mask(&data[0].0).unwrap());
}

#[test]
fn memorizes_a_single_pair() {
    let data = vec![pair(5, 32)];
    let cfg = MaskTrainConfig { net: UNetConfig { resolution: 32, base_width: 8, depth: 2 }, epochs: 300, batch_size: 1, learning_rate: 3e-3, ..Default::default() };
    let (me, report) = train_mask_estimator(&data, &cfg).unwrap();
    let m = me.estimate_mask(&data[0].0).unwrap();
    let iou = m.binarize(0.5).iou(&data[0].1);
    assert!(iou >= 0.9, "iou {iou}, best loss {}", report.best_val_loss());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let me = MaskEstimator::<f32>::new(small(), 9).unwrap();
    let path = dir.path().join("me.ckpt");
    me.save(&path).unwrap();
    let back = MaskEstimator::<f32>::load(&path).unwrap();
    let (hm, _) = pair(1, 32);
    assert_eq!(me.estimate_mask(&hm).unwrap(), back.estimate_mask(&hm).unwrap());
}

#[test]
fn hull_of_an_axis_aligned_square() {
    let sk = skeleton_from(&[[10.0, 10.0], [20.0, 10.0], [20.0, 20.0], [10.0, 20.0], [15.0, 15.0]], 32);
    let m = convex_hull_mask(&sk, (32, 32)).unwrap();
    assert_eq!(m.area(), 121.0);
    for y in 0..32 {
        for x in 0..32 {
            let inside = (10..=20).contains(&x) && (10..=20).contains(&y);
            assert_eq!(m.get(y, x), if inside { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn degenerate_hulls_are_rejected() {
    let two = skeleton_from(&[[3.0, 4.0], [10.0, 12.0]], 32);
    assert!(matches!(convex_hull_mask::<f64>(&two, (32, 32)), Err(Error::DegenerateHull)));
    let line = skeleton_from(&[[1.0, 1.0], [5.0, 5.0], [9.0, 9.0]], 32);
    assert!(matches!(convex_hull_mask::<f64>(&line, (32, 32)), Err(Error::DegenerateHull)));
}

fn inside_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    let signs: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        })
        .collect();
    signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0)
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let o = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let (d1, d2, d3, d4) = (o(q1, q2, p1), o(q1, q2, p2), o(p1, p2, q1), o(p1, p2, q2));
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Square-polygon intersection by containment and edge crossings.
fn oracle_touches(poly: &[[f64; 2]], cx: f64, cy: f64) -> bool {
    let sq = [[cx - 0.5, cy - 0.5], [cx + 0.5, cy - 0.5], [cx + 0.5, cy + 0.5], [cx - 0.5, cy + 0.5]];
    if sq.iter().any(|&c| inside_convex(poly, c)) || poly.iter().any(|&p| inside_convex(&sq, p)) {
        return true;
    }
    (0..poly.len()).any(|i| (0..4).any(|j| segments_cross(poly[i], poly[(i + 1) % poly.len()], sq[j], sq[(j + 1) % 4])))
}

#[test]
fn hull_mask_agrees_with_intersection_oracle_and_area_band() {
    let mut r = seeded(17);
    for _ in 0..200 {
        let k = r.random_range(3..=NUM_KEYPOINTS);
        let pts: Vec<[f64; 2]> = (0..k).map(|_| [r.random_range(2.0..30.0), r.random_range(2.0..30.0)]).collect();
        let hull = convex_hull(&pts);
        if hull.len() < 3 {
            continue;
        }
        let m = convex_hull_mask::<f64>(&skeleton_from(&pts, 32), (32, 32)).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(m.get(y, x) == 1.0, oracle_touches(&hull, x as f64, y as f64), "pixel ({x}, {y})");
            }
        }
        // Touched squares cover the hull and their centres lie in the hull grown by half a pixel.
        let area = polygon_area(&hull);
        let perimeter: f64 = (0..hull.len()).map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        }).sum();
        let (xs, ys): (Vec<f64>, Vec<f64>) = hull.iter().map(|p| (p[0], p[1])).unzip();
        let wx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let wy = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let grown_area = area + wx + wy + 1.0;
        let grown_perimeter = perimeter + 4.0;
        let count = m.area();
        assert!(count >= area, "{count} < {area}");
        assert!(count <= grown_area + grown_perimeter / 2.0 + 1.0, "{count} too large for area {area}");
    }
}

#[test]
fn hull_is_counter_clockwise_and_minimal() {
    let h = convex_hull(&[[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [0.0, 3.0], [2.0, 1.0], [2.0, 0.0], [4.0, 1.5]]);
    assert_eq!(h.len(), 4);
    assert_eq!(polygon_area(&h), 12.0);
    let signed: f64 = (0..4).map(|i| h[i][0] * h[(i + 1) % 4][1] - h[(i + 1) % 4][0] * h[i][1]).sum();
    assert!(signed > 0.0);
}

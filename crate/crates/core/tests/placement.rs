use dummynet_core::image::{Image, MaskImage};
use dummynet_core::placement::*;
use dummynet_core::rng::seeded;
use dummynet_core::Error;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn noiseless_lines_are_recovered_exactly() {
    for (a, b) in [(0.5, 20.0), (-0.75, 90.0), (2.0, -3.0), (0.0, 12.5)] {
        let s: Vec<(f64, f64)> = (0..40).map(|i| (i as f64 * 1.5 + 3.0, a * (i as f64 * 1.5 + 3.0) + b)).collect();
        let m = fit_height_model(&s).unwrap();
        assert!((m.a - a).abs() < 1e-12 && (m.b - b).abs() < 1e-10, "{m:?}");
    }
}

#[test]
fn documented_example_height() {
    let s: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 50.0, 0.5 * i as f64 * 50.0 + 20.0)).collect();
    let m = fit_height_model(&s).unwrap();
    assert!((m.height_at(100.0) - 70.0).abs() < 1e-12);
}

#[test]
fn noisy_fit_is_within_three_standard_errors() {
    let (a, b, sigma) = (-0.4, 60.0, 2.0);
    let noise = Normal::new(0.0, sigma).unwrap();
    for seed in 0..20 {
        let mut r = seeded(seed);
        let ys: Vec<f64> = (0..200).map(|_| r.random_range(0.0..100.0)).collect();
        let s: Vec<(f64, f64)> = ys.iter().map(|&y| (y, a * y + b + noise.sample(&mut r))).collect();
        let m = fit_height_model(&s).unwrap();
        let n = ys.len() as f64;
        let my = ys.iter().sum::<f64>() / n;
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let se_a = sigma / syy.sqrt();
        let se_b = sigma * (1.0 / n + my * my / syy).sqrt();
        assert!((m.a - a).abs() < 3.0 * se_a, "seed {seed}: slope {}", m.a);
        assert!((m.b - b).abs() < 3.0 * se_b, "seed {seed}: intercept {}", m.b);
    }
}

#[test]
fn degenerate_fits_are_rejected() {
    assert!(matches!(fit_height_model(&[]), Err(Error::DegenerateFit)));
    assert!(matches!(fit_height_model(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]), Err(Error::DegenerateFit)));
    assert!(matches!(fit_height_model(&[(1.0, f64::NAN), (2.0, 3.0)]), Err(Error::DegenerateFit)));
}

const S: usize = 64;

/// Random 64x64 scene: a walkable lower part with holes and a few people.
fn toy_scene(seed: u64) -> (SceneContext<f32>, HeightModel) {
    let mut r = seeded(seed);
    let horizon = r.random_range(16..40);
    let holes: Vec<(usize, usize, usize)> = (0..r.random_range(0..4)).map(|_| (r.random_range(0..S), r.random_range(horizon..S), r.random_range(2..10))).collect();
    let mut labels = vec![Label::Other; S * S];
    for row in horizon..S {
        for x in 0..S {
            let in_hole = holes.iter().any(|&(hx, hy, rad)| x.abs_diff(hx) < rad && row.abs_diff(hy) < rad);
            if !in_hole {
                labels[row * S + x] = match (row + x / 16) % 3 {
                    0 => Label::Road,
                    1 => Label::Sidewalk,
                    _ => Label::Ground,
                };
            }
        }
    }
    let model = HeightModel { a: -r.random_range(0.2..0.6), b: r.random_range(25.0..40.0) };
    let mut persons = Vec::new();
    for _ in 0..r.random_range(0..4) {
        let row = r.random_range(horizon..S);
        let yb = (S - 1 - row) as f64;
        let h = (model.height_at(yb) * r.random_range(0.6..1.3)).min((row + 1) as f64);
        let w = 0.41 * h;
        let x = r.random_range(w / 2.0..S as f64 - w / 2.0);
        persons.push(PersonBox { x, y_bottom: yb, width: w, height: h });
    }
    (SceneContext::new(Image::zeros(3, S, S), labels, persons).unwrap(), model)
}

fn oracle_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let area = |r: (f64, f64, f64, f64)| (r.2 - r.0) * (r.3 - r.1);
    let u = area(a) + area(b) - iw * ih;
    if u > 0.0 {
        iw * ih / u
    } else {
        0.0
    }
}

/// Validity of standing at the bottom-centre of pixel `(x, row)`, written in top-down rows.
fn oracle_valid(scene: &SceneContext<f32>, m: &HeightModel, cfg: &PlacementConfig, x: usize, row: usize) -> bool {
    if !matches!(scene.semantics[row * S + x], Label::Road | Label::Sidewalk | Label::Ground) {
        return false;
    }
    let h = m.a * (S - 1 - row) as f64 + m.b;
    if h < cfg.min_height {
        return false;
    }
    let w = cfg.aspect * h;
    let cx = x as f64 + 0.5;
    let rect = (cx - w / 2.0, (row + 1) as f64 - h, cx + w / 2.0, (row + 1) as f64);
    if rect.0 < 0.0 || rect.1 < 0.0 || rect.2 > S as f64 {
        return false;
    }
    scene.persons.iter().filter(|p| p.height >= cfg.min_person_height).all(|p| {
        let bottom = S as f64 - p.y_bottom;
        let pr = (p.x - p.width / 2.0, bottom - p.height, p.x + p.width / 2.0, bottom);
        oracle_iou(rect, pr) <= cfg.max_overlap_iou
    })
}

#[test]
fn placement_decisions_match_brute_force_over_1000_seeds() {
    let cfg = PlacementConfig { min_person_height: 15.0, ..Default::default() };
    let mut successes = 0;
    for seed in 0..1000 {
        let (scene, model) = toy_scene(seed);
        let mut any_valid = false;
        for row in 0..S {
            for x in 0..S {
                let ok = oracle_valid(&scene, &model, &cfg, x, row);
                any_valid |= ok;
                assert_eq!(check_placement(&scene, &model, &cfg, x, row).is_some(), ok, "seed {seed} pixel ({x}, {row})");
            }
        }
        let (result, trace) = propose_placement_traced(&scene, &model, &cfg, &mut seeded(seed + 10_000));
        for a in &trace {
            assert_eq!(a.accepted, oracle_valid(&scene, &model, &cfg, a.x, a.row), "seed {seed} attempt {a:?}");
        }
        match result {
            Ok(p) => {
                successes += 1;
                let last = trace.last().unwrap();
                assert!(last.accepted);
                assert_eq!(p.footprint(S), (last.x, last.row));
                assert!((p.height - model.height_at(p.y_bottom)).abs() < 1e-12);
            }
            Err(Error::NoValidPlacement { .. }) => assert!(trace.iter().all(|a| !a.accepted)),
            Err(e) => panic!("seed {seed}: {e}"),
        }
        if !any_valid {
            assert!(result.is_err());
        }
    }
    assert!(successes > 500, "only {successes} successful placements");
}

#[test]
fn proposals_are_reproducible() {
    let (scene, model) = toy_scene(3);
    let cfg = PlacementConfig { min_person_height: 15.0, ..Default::default() };
    let a = propose_placement_traced(&scene, &model, &cfg, &mut seeded(1));
    let b = propose_placement_traced(&scene, &model, &cfg, &mut seeded(1));
    assert_eq!(a.1, b.1);
}

fn plain_scene() -> SceneContext<f32> {
    let img = Image::from_fn(3, S, S, |c, y, x| ((c * 13 + y * 7 + x * 3) % 29) as f32 / 28.0);
    SceneContext::new(img, vec![Label::Ground; S * S], vec![]).unwrap()
}

fn figure(h: usize, w: usize) -> (Image<f32>, MaskImage<f32>) {
    let patch = Image::from_fn(3, h, w, |c, _, _| [0.9, 0.1, 0.5][c]);
    let mask = MaskImage::from_fn(h, w, |y, x| {
        let dy = (y as f64 - h as f64 / 2.0) / (h as f64 / 2.5);
        let dx = (x as f64 - w as f64 / 2.0) / (w as f64 / 3.0);
        if dx * dx + dy * dy <= 1.0 {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();
    (patch, mask)
}

#[test]
fn pixels_outside_the_mask_are_untouched_at_unit_scale() {
    let scene = plain_scene();
    let (patch, mask) = figure(32, 20);
    let (by0, by1) = mask.bounding_box(0.5).map(|b| (b.1, b.3)).unwrap();
    let placement = Placement { x: 30.5, y_bottom: 10.0, height: (by1 - by0 + 1) as f64 };
    let (out, bb) = insert_person(&scene, &patch, &mask, &placement).unwrap();
    let (bx0, _, bx1, _) = mask.bounding_box(0.5).unwrap();
    // At unit scale the patch is pasted with a pure integer offset.
    let oy = (S - 1 - 10) as isize + 1 - (by1 as isize + 1);
    let ox = (30.0 + 0.5 - (bx0 + bx1 + 1) as f64 / 2.0).round() as isize;
    for y in 0..S {
        for x in 0..S {
            let (py, px) = (y as isize - oy, x as isize - ox);
            let inside = py >= 0 && px >= 0 && (py as usize) < 32 && (px as usize) < 20 && mask.get(py as usize, px as usize) > 0.0;
            for c in 0..3 {
                if inside {
                    assert_eq!(out.image.get(c, y, x), patch.get(c, py as usize, px as usize));
                } else {
                    assert_eq!(out.image.get(c, y, x).to_bits(), scene.image.get(c, y, x).to_bits());
                }
            }
        }
    }
    assert_eq!(out.persons.len(), 1);
    assert_eq!((bb.y1 + 1) as f64, S as f64 - placement.y_bottom);
    assert_eq!(bb.y1 - bb.y0 + 1, by1 - by0 + 1);
}

#[test]
fn pixels_outside_the_scaled_mask_are_untouched() {
    let scene = plain_scene();
    let (patch, mask) = figure(64, 40);
    let placement = Placement { x: 20.5, y_bottom: 5.0, height: 30.0 };
    let (out, bb) = insert_person(&scene, &patch, &mask, &placement).unwrap();
    // Resampling softens the silhouette by at most a pixel around the box.
    let mut changed = 0;
    for y in 0..S {
        for x in 0..S {
            let same = (0..3).all(|c| out.image.get(c, y, x).to_bits() == scene.image.get(c, y, x).to_bits());
            if !same {
                changed += 1;
                assert!(x + 1 >= bb.x0 && x <= bb.x1 + 1 && y + 1 >= bb.y0 && y <= bb.y1 + 1, "pixel ({x}, {y}) outside {bb:?}");
            }
        }
    }
    assert!(changed > 0);
    let height = (bb.y1 - bb.y0 + 1) as f64;
    assert!((height - 30.0).abs() <= 1.0, "box height {height}");
}

#[test]
fn full_square_mask_fills_its_box() {
    let scene = plain_scene();
    let patch = Image::filled(3, 10, 5, 0.25f32);
    let mask = MaskImage::ones(10, 5);
    let placement = Placement { x: 12.5, y_bottom: 20.0, height: 10.0 };
    let (out, bb) = insert_person(&scene, &patch, &mask, &placement).unwrap();
    assert_eq!((bb.x1 - bb.x0 + 1, bb.y1 - bb.y0 + 1), (5, 10));
    assert_eq!(bb.y1, S - 1 - 20);
    for y in bb.y0..=bb.y1 {
        for x in bb.x0..=bb.x1 {
            assert_eq!(out.image.get(1, y, x), 0.25);
        }
    }
    let expected = PersonBox { x: 12.5, y_bottom: 20.0, width: 5.0, height: 10.0 };
    assert!((bb.to_person_box(S).iou(&expected) - 1.0).abs() < 1e-12, "{:?}", bb.to_person_box(S));
}

#[test]
fn empty_mask_and_out_of_bounds_are_errors() {
    let scene = plain_scene();
    let (patch, _) = figure(16, 10);
    let placement = Placement { x: 30.5, y_bottom: 10.0, height: 16.0 };
    assert!(matches!(insert_person(&scene, &patch, &MaskImage::zeros(16, 10), &placement), Err(Error::EmptyMask)));
    let far = Placement { x: 2.5, y_bottom: 60.0, height: 40.0 };
    assert!(matches!(insert_person(&scene, &patch, &MaskImage::ones(16, 10), &far), Err(Error::OutOfBounds)));
    assert!(matches!(insert_person(&scene, &patch, &MaskImage::ones(8, 10), &placement), Err(Error::ShapeMismatch(_))));
}

#[test]
fn scene_rejects_inconsistent_inputs() {
    assert!(matches!(SceneContext::new(Image::<f32>::zeros(3, 8, 8), vec![Label::Road; 10], vec![]), Err(Error::ShapeMismatch(_))));
    let off = PersonBox { x: 1.0, y_bottom: 0.0, width: 4.0, height: 4.0 };
    assert!(matches!(SceneContext::new(Image::<f32>::zeros(3, 8, 8), vec![Label::Road; 64], vec![off]), Err(Error::InvalidInput(_))));
}

use dummynet_core::pose::pca::Pca;
use dummynet_core::pose::*;
use dummynet_core::rng::seeded;
use dummynet_core::synth::keypoint_corpus;
use dummynet_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn corpus(seed: u64, n: usize) -> Vec<NormalizedSkeleton<f64>> {
    keypoint_corpus(&mut seeded(seed), n, 64).iter().filter(|s| s.passes_filter()).map(|s| normalize_skeleton(s).unwrap()).collect()
}

fn arbitrary_skeleton() -> impl Strategy<Value = Skeleton<f64>> {
    (proptest::collection::vec((1.0f64..99.0, 1.0f64..99.0), NUM_KEYPOINTS), proptest::collection::vec(any::<bool>(), NUM_KEYPOINTS)).prop_filter_map(
        "needs a torso",
        |(pts, vis)| {
            let mut points = [[0.0; 2]; NUM_KEYPOINTS];
            let mut visible = [false; NUM_KEYPOINTS];
            for k in 0..NUM_KEYPOINTS {
                points[k] = [pts[k].0, pts[k].1];
                visible[k] = vis[k];
            }
            visible[Keypoint::LeftShoulder.index()] = true;
            visible[Keypoint::RightHip.index()] = true;
            let s = Skeleton::new(points, visible, (100, 100)).ok()?;
            let (sh, hp) = torso_anchors(&s).ok()?;
            ((sh[0] - hp[0]).hypot(sh[1] - hp[1]) > 1.0).then_some(s)
        },
    )
}

proptest! {
    #[test]
    fn normalization_ignores_scale_and_translation(s in arbitrary_skeleton(), scale in 0.1f64..10.0, dx in 0.0f64..500.0, dy in 0.0f64..500.0) {
        let moved = s.transformed(scale, dx, dy);
        prop_assert_eq!(moved.visibility(), s.visibility());
        let a = normalize_skeleton(&s).unwrap();
        let b = normalize_skeleton(&moved).unwrap();
        for (x, y) in a.coords.iter().zip(&b.coords) {
            prop_assert!((x - y).abs() <= 1e-9, "{} vs {}", x, y);
        }
    }
}

#[test]
fn normalized_torso_has_unit_height() {
    for n in corpus(1, 200) {
        let mid = |a: Keypoint, b: Keypoint| {
            let (p, q) = (n.point(a.index()), n.point(b.index()));
            match (n.visibility[a.index()], n.visibility[b.index()]) {
                (true, true) => [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0],
                (true, false) => p,
                _ => q,
            }
        };
        let sh = mid(Keypoint::LeftShoulder, Keypoint::RightShoulder);
        let hp = mid(Keypoint::LeftHip, Keypoint::RightHip);
        assert!(((sh[0] - hp[0]).hypot(sh[1] - hp[1]) - 1.0).abs() < 1e-12);
        assert!((sh[0] + hp[0]).abs() < 1e-12 && (sh[1] + hp[1]).abs() < 1e-12);
    }
}

#[test]
fn pca_basis_is_orthonormal() {
    let model = fit_pca(&corpus(2, 400)).unwrap();
    assert_eq!(model.pca_basis.len(), NUM_COMPONENTS);
    for (i, a) in model.pca_basis.iter().enumerate() {
        for (j, b) in model.pca_basis.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expect).abs() <= 1e-6, "({i}, {j}) -> {dot}");
        }
    }
}

#[test]
fn pca_variances_match_svd() {
    let members = corpus(3, 400);
    let rows: Vec<Vec<f64>> = members.iter().map(|m| m.coords.to_vec()).collect();
    let pca = Pca::fit(&rows, NUM_COMPONENTS).unwrap();
    let n = rows.len();
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let mut sv: Vec<f64> = x.svd(false, false).singular_values.iter().map(|s| s * s / n as f64).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (k, (a, b)) in pca.variances.iter().zip(&sv).enumerate() {
        assert!((a - b).abs() <= 1e-8, "component {k}: {a} vs {b}");
    }
    let total: f64 = sv.iter().sum();
    assert!((pca.total_variance - total).abs() <= 1e-8);
}

#[test]
fn draws_stay_inside_component_bounds() {
    let model = fit_pca(&corpus(4, 300)).unwrap();
    let mut rng = seeded(5);
    for _ in 0..10_000 {
        let s = sample_skeleton(&model, &mut rng);
        for (c, (lo, hi)) in model.project(&s.coords).iter().zip(&model.component_bounds) {
            assert!(*c >= lo - 1e-9 && *c <= hi + 1e-9);
        }
    }
}

#[test]
fn member_projections_span_the_bounds() {
    let members = corpus(6, 300);
    let model = fit_pca(&members).unwrap();
    for (k, (lo, hi)) in model.component_bounds.iter().enumerate() {
        let proj: Vec<f64> = members.iter().map(|m| model.project(&m.coords)[k]).collect();
        assert_eq!(proj.iter().cloned().fold(f64::INFINITY, f64::min), *lo);
        assert_eq!(proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max), *hi);
    }
}

#[test]
fn collinear_members_have_one_dominant_component() {
    let mut rng = seeded(7);
    let base = corpus(8, 2);
    let dir: Vec<f64> = (0..2 * NUM_KEYPOINTS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let members: Vec<NormalizedSkeleton<f64>> = (0..50)
        .map(|_| {
            let t: f64 = rng.random_range(-2.0..2.0);
            let mut m = base[0].clone();
            m.coords.iter_mut().zip(&dir).for_each(|(c, d)| *c += t * d);
            m
        })
        .collect();
    let rows: Vec<Vec<f64>> = members.iter().map(|m| m.coords.to_vec()).collect();
    let pca = Pca::fit(&rows, NUM_COMPONENTS).unwrap();
    assert!(pca.explained_ratio()[0] >= 0.999);
    assert!(fit_pca(&members).is_ok());
}

#[test]
fn too_small_cluster_is_rejected() {
    let members = corpus(9, 60);
    let r = fit_pca(&members[..MIN_CLUSTER_MEMBERS - 1]);
    assert!(matches!(r, Err(Error::TooFewMembers { found, required }) if found == MIN_CLUSTER_MEMBERS - 1 && required == MIN_CLUSTER_MEMBERS));
    assert!(fit_pca(&members[..MIN_CLUSTER_MEMBERS]).is_ok());
}

#[test]
fn fitted_model_accounts_for_every_sample() {
    let skeletons = keypoint_corpus(&mut seeded(10), 800, 64);
    let (model, fates) = PoseModel::fit(&skeletons, PoseModelConfig::default()).unwrap();
    assert_eq!(fates.len(), skeletons.len());
    for (s, f) in skeletons.iter().zip(&fates) {
        match f {
            SampleFate::Filtered => assert!(!s.passes_filter()),
            SampleFate::Modeled(i) => assert!(*i < model.clusters.len()),
            SampleFate::SmallCluster { .. } => {}
        }
    }
    let modeled = fates.iter().filter(|f| matches!(f, SampleFate::Modeled(_))).count();
    assert_eq!(modeled, model.clusters.iter().map(|c| c.member_count).sum::<usize>());
    assert!(model.clusters.iter().all(|c| c.member_count >= MIN_CLUSTER_MEMBERS));
    let back = PoseModel::<f64>::from_json(model.to_json()).unwrap();
    assert_eq!(back.clusters.len(), model.clusters.len());
}

#[test]
fn fitting_is_deterministic() {
    let skeletons = keypoint_corpus(&mut seeded(11), 500, 64);
    let a = PoseModel::fit(&skeletons, PoseModelConfig::default()).unwrap();
    let b = PoseModel::fit(&skeletons, PoseModelConfig::default()).unwrap();
    assert_eq!(a, b);
}

fn lone_keypoint(x: f64, y: f64, size: usize) -> Skeleton<f64> {
    let mut points = [[0.0; 2]; NUM_KEYPOINTS];
    let mut visible = [false; NUM_KEYPOINTS];
    points[Keypoint::Nose.index()] = [x, y];
    visible[Keypoint::Nose.index()] = true;
    Skeleton::new(points, visible, (size, size)).unwrap()
}

#[test]
fn heatmap_values_follow_the_gaussian() {
    let hm = render_heatmaps(&lone_keypoint(10.0, 12.0, 32), 2.0);
    let nose = hm.channel(Keypoint::Nose.index());
    let at = |x: usize, y: usize| nose[y * 32 + x];
    assert_eq!(at(10, 12), 1.0);
    assert!((at(12, 12) - (-0.5f64).exp()).abs() < 1e-15);
    assert!((at(11, 13) - (-0.25f64).exp()).abs() < 1e-15);
    assert!((at(10, 16) - (-2.0f64).exp()).abs() < 1e-15);
    for k in 1..NUM_KEYPOINTS {
        assert!(hm.channel(k).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn off_centre_keypoint_peaks_below_one() {
    let hm = render_heatmaps(&lone_keypoint(10.5, 12.0, 32), 2.0);
    let nose = hm.channel(Keypoint::Nose.index());
    let peak = nose.iter().cloned().fold(0.0, f64::max);
    assert!((peak - (-0.25f64 / 8.0).exp()).abs() < 1e-15);
    assert_eq!(nose[12 * 32 + 10], nose[12 * 32 + 11]);
}

#[test]
fn heatmaps_scale_with_sigma() {
    assert_eq!(default_sigma(64), DEFAULT_SIGMA_AT_64);
    assert_eq!(default_sigma(128), 2.0 * DEFAULT_SIGMA_AT_64);
    let hm = render_heatmaps(&lone_keypoint(20.0, 20.0, 40), 4.0);
    assert!((hm.channel(0)[20 * 40 + 24] - (-0.5f64).exp()).abs() < 1e-15);
}

#[test]
fn placement_stands_on_the_foot_line() {
    let members = corpus(12, 50);
    for m in members.iter().filter(|m| m.visibility[Keypoint::LeftAnkle.index()] || m.visibility[Keypoint::RightAnkle.index()]) {
        let s = m.place((400, 400), 200.0, 380.0, 300.0);
        let lowest = [Keypoint::LeftAnkle, Keypoint::RightAnkle]
            .iter()
            .filter(|&&k| m.visibility[k.index()])
            .map(|&k| s.point(k)[1])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((lowest - (380.0 - ANKLE_ABOVE_GROUND * 300.0)).abs() < 1e-9);
    }
}

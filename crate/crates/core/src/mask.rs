//! Foreground mask estimation from keypoint heatmaps.

use std::path::Path;

use dummynet_nn::layers::relu_gain;
use dummynet_nn::{Adam, Array, Bound, Conv2d, ParamStore, ResamplePlan, Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::MaskImage;
use crate::pose::{KeypointHeatmaps, Skeleton, NUM_KEYPOINTS};
use crate::rng;
use crate::train_util::{gather_batch, load_model, minibatches, restore, save_model, split_indices, TrainReport};

pub const MASK_CHECKPOINT_TAG: &str = "me_v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub resolution: usize,
    pub base_width: usize,
    /// Number of 2x downsamplings.
    pub depth: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { resolution: 64, base_width: 16, depth: 4 }
    }
}

#[derive(Clone, Debug)]
struct UNet {
    down: Vec<(Conv2d, Conv2d)>,
    bottleneck: (Conv2d, Conv2d),
    up: Vec<(Conv2d, Conv2d)>,
    head: Conv2d,
}

impl UNet {
    fn build<T: Scalar>(cfg: &UNetConfig, store: &mut ParamStore<T>, seed: u64) -> Self {
        let mut r = rng::stream(seed, "unet-init", 0);
        let g = relu_gain(0.0);
        let width = |i: usize| cfg.base_width << i;
        let mut down = Vec::new();
        let mut cin = NUM_KEYPOINTS;
        for i in 0..cfg.depth {
            let c = width(i);
            down.push((
                Conv2d::new(store, &format!("down{i}.a"), cin, c, 3, 1, 1, true, g, &mut r),
                Conv2d::new(store, &format!("down{i}.b"), c, c, 3, 1, 1, true, g, &mut r),
            ));
            cin = c;
        }
        let cb = width(cfg.depth);
        let bottleneck = (
            Conv2d::new(store, "mid.a", cin, cb, 3, 1, 1, true, g, &mut r),
            Conv2d::new(store, "mid.b", cb, cb, 3, 1, 1, true, g, &mut r),
        );
        let mut up = Vec::new();
        let mut cin = cb;
        for i in (0..cfg.depth).rev() {
            let c = width(i);
            up.push((
                Conv2d::new(store, &format!("up{i}.a"), cin + c, c, 3, 1, 1, true, g, &mut r),
                Conv2d::new(store, &format!("up{i}.b"), c, c, 3, 1, 1, true, g, &mut r),
            ));
            cin = c;
        }
        let head = Conv2d::new(store, "head", cin, 1, 1, 1, 0, true, 1.0, &mut r);
        Self { down, bottleneck, up, head }
    }

    /// Logits `[B, 1, H, W]` for heatmaps `[B, 17, H, W]`.
    fn logits<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let block = |(a, b): &(Conv2d, Conv2d), x: Var<'t, T>| b.forward(p, a.forward(p, x).relu()).relu();
        let mut skips = Vec::new();
        let mut h = x;
        for d in &self.down {
            h = block(d, h);
            skips.push(h);
            h = h.max_pool2();
        }
        h = block(&self.bottleneck, h);
        for u in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let s = skip.shape();
            let plan = ResamplePlan::bilinear((h.shape()[2], h.shape()[3]), (s[2], s[3]));
            h = block(u, Var::concat(&[h.resample(&plan), skip], 1));
        }
        self.head.forward(p, h)
    }
}

/// U-Net mapping 17 keypoint heatmaps to a soft person mask.
#[derive(Clone, Debug)]
pub struct MaskEstimator<T: Scalar> {
    config: UNetConfig,
    net: UNet,
    store: ParamStore<T>,
}

impl<T: Scalar> MaskEstimator<T> {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        let f = 1usize << config.depth;
        if config.resolution == 0 || config.resolution % f != 0 || config.base_width == 0 {
            return Err(Error::Config(format!(
                "mask estimator resolution {} must be a positive multiple of 2^depth = {f}",
                config.resolution
            )));
        }
        let mut store = ParamStore::new();
        let net = UNet::build(&config, &mut store, seed);
        Ok(Self { config, net, store })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Mask probabilities `[B, 1, H, W]` on a tape.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, heatmaps: Var<'t, T>) -> Var<'t, T> {
        self.net.logits(p, heatmaps).sigmoid()
    }

    /// Inference on a batch `[B, 17, R, R]`.
    pub fn estimate_batch(&self, heatmaps: &Array<T>) -> Result<Array<T>> {
        let s = heatmaps.shape();
        let r = self.config.resolution;
        if s.len() != 4 || s[1] != NUM_KEYPOINTS || (s[2], s[3]) != (r, r) {
            return Err(Error::ResolutionMismatch { expected: (r, r), found: (s.get(2).copied().unwrap_or(0), s.get(3).copied().unwrap_or(0)) });
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let out = tape.no_grad(|| self.forward(&p, tape.constant(heatmaps.clone())));
        let v = (*out.value()).clone();
        Ok(v)
    }

    pub fn estimate_mask(&self, heatmaps: &KeypointHeatmaps<T>) -> Result<MaskImage<T>> {
        let (h, w) = heatmaps.size();
        let out = self.estimate_batch(&heatmaps.tensor.clone().reshape(&[1, NUM_KEYPOINTS, h, w]))?;
        MaskImage::new(h, w, out.into_data())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, MASK_CHECKPOINT_TAG, &self.config, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, loaded) = load_model::<T, UNetConfig>(path, MASK_CHECKPOINT_TAG)?;
        let mut m = Self::new(config, 0)?;
        restore(&mut m.store, &loaded)?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskTrainConfig {
    pub net: UNetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for MaskTrainConfig {
    fn default() -> Self {
        Self { net: UNetConfig::default(), epochs: 20, batch_size: 16, learning_rate: 2e-3, val_fraction: 0.1, seed: 0 }
    }
}

/// Mean per-pixel binary cross-entropy of the estimator on a set.
fn mean_bce<T: Scalar>(m: &MaskEstimator<T>, x: &[Array<T>], y: &[Array<T>], idx: &[usize], batch: usize) -> f64 {
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let tape = Tape::new();
        let p = m.store.bind(&tape, false);
        let l = tape.no_grad(|| {
            let probs = m.forward(&p, tape.constant(gather_batch(x, chunk)));
            dummynet_nn::layers::bce(probs, tape.constant(gather_batch(y, chunk)))
        });
        total += l.item().as_f64() * chunk.len() as f64;
    }
    total / idx.len() as f64
}

/// Trains on `(heatmaps, target mask)` pairs with per-pixel binary cross-entropy
/// and Adam; returns the weights with the lowest validation loss.
pub fn train_mask_estimator<T: Scalar>(
    dataset: &[(KeypointHeatmaps<T>, MaskImage<T>)],
    cfg: &MaskTrainConfig,
) -> Result<(MaskEstimator<T>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = MaskEstimator::new(cfg.net.clone(), cfg.seed)?;
    let r = cfg.net.resolution;
    let mut xs = Vec::with_capacity(dataset.len());
    let mut ys = Vec::with_capacity(dataset.len());
    for (hm, m) in dataset {
        if hm.size() != (r, r) || m.size() != (r, r) {
            return Err(Error::ResolutionMismatch { expected: (r, r), found: hm.size() });
        }
        xs.push(hm.tensor.clone());
        ys.push(m.to_array().reshape(&[1, r, r]));
    }
    let mut split_rng = rng::stream(cfg.seed, "mask-split", 0);
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, &mut split_rng);
    let mut opt = Adam::new(&model.store, cfg.learning_rate, 0.9, 0.999);
    let mut report = TrainReport::default();
    let mut best = model.store.clone();
    for epoch in 0..cfg.epochs {
        let mut order_rng = rng::stream(cfg.seed, "mask-epoch", epoch as u64);
        let mut sum = 0.0;
        for b in minibatches(train_idx.len(), cfg.batch_size, &mut order_rng) {
            let chunk: Vec<usize> = b.iter().map(|&i| train_idx[i]).collect();
            let tape = Tape::new();
            let p = model.store.bind(&tape, true);
            let probs = model.forward(&p, tape.constant(gather_batch(&xs, &chunk)));
            let loss = dummynet_nn::layers::bce(probs, tape.constant(gather_batch(&ys, &chunk)));
            let lv = loss.item().as_f64();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss("mask bce"));
            }
            sum += lv * chunk.len() as f64;
            let grads = p.grads(loss);
            drop(p);
            opt.step(&mut model.store, &grads);
        }
        report.train_loss.push(sum / train_idx.len() as f64);
        let val = mean_bce(&model, &xs, &ys, &val_idx, cfg.batch_size);
        if val < report.best_val_loss() {
            report.best_epoch = epoch;
            best = model.store.clone();
        }
        report.val_loss.push(val);
    }
    model.store = best;
    Ok((model, report))
}

/// Monotone-chain convex hull, counter-clockwise, without collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Whether the unit pixel square centred on `(cx, cy)` meets the convex polygon
/// (separating axis test).
fn square_meets_polygon(poly: &[[f64; 2]], cx: f64, cy: f64) -> bool {
    let (xmin, xmax) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[0]), b.max(p[0])));
    let (ymin, ymax) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[1]), b.max(p[1])));
    if xmax < cx - 0.5 || xmin > cx + 0.5 || ymax < cy - 0.5 || ymin > cy + 0.5 {
        return false;
    }
    let corners = [[cx - 0.5, cy - 0.5], [cx + 0.5, cy - 0.5], [cx + 0.5, cy + 0.5], [cx - 0.5, cy + 0.5]];
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        // Outward normal of a counter-clockwise polygon edge (y down or up does not matter for separation).
        let n = [b[1] - a[1], a[0] - b[0]];
        let edge_off = n[0] * a[0] + n[1] * a[1];
        let poly_side = poly.iter().map(|p| n[0] * p[0] + n[1] * p[1] - edge_off).fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
        let all_out = corners.iter().all(|c| {
            let v = n[0] * c[0] + n[1] * c[1] - edge_off;
            v * poly_side < 0.0 || (poly_side == 0.0 && v != 0.0)
        });
        if all_out {
            return false;
        }
    }
    true
}

/// Binary mask of every pixel whose square touches the convex hull of the
/// visible keypoints.
pub fn convex_hull_mask<T: Scalar>(skeleton: &Skeleton<T>, canvas: (usize, usize)) -> Result<MaskImage<T>> {
    let pts: Vec<[f64; 2]> = skeleton.visible_points().map(|[x, y]| [x.as_f64(), y.as_f64()]).collect();
    let hull = convex_hull(&pts);
    if hull.len() < 3 {
        return Err(Error::DegenerateHull);
    }
    let (h, w) = canvas;
    MaskImage::from_fn(h, w, |y, x| if square_meets_polygon(&hull, x as f64, y as f64) { T::one() } else { T::zero() })
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>().abs() / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::NUM_KEYPOINTS;

    fn skeleton_from(points: &[[f64; 2]], size: usize) -> Skeleton<f64> {
        let mut pts = [[0.0; 2]; NUM_KEYPOINTS];
        let mut vis = [false; NUM_KEYPOINTS];
        for (i, p) in points.iter().enumerate() {
            pts[i] = *p;
            vis[i] = true;
        }
        Skeleton::new(pts, vis, (size, size)).unwrap()
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let h = convex_hull(&[[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 2.0], [1.0, 0.0]]);
        assert_eq!(h.len(), 4);
        assert_eq!(polygon_area(&h), 4.0);
    }

    #[test]
    fn square_hull_mask() {
        let s = skeleton_from(&[[3.0, 3.0], [6.0, 3.0], [6.0, 6.0], [3.0, 6.0]], 10);
        let m = convex_hull_mask(&s, (10, 10)).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let inside = (3..=6).contains(&x) && (3..=6).contains(&y);
                assert_eq!(m.get(y, x) == 1.0, inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn degenerate_hulls() {
        let two = skeleton_from(&[[1.0, 1.0], [5.0, 5.0]], 8);
        assert!(matches!(convex_hull_mask(&two, (8, 8)), Err(Error::DegenerateHull)));
        let line = skeleton_from(&[[1.0, 1.0], [3.0, 3.0], [5.0, 5.0]], 8);
        assert!(matches!(convex_hull_mask(&line, (8, 8)), Err(Error::DegenerateHull)));
    }

    #[test]
    fn resolution_mismatch() {
        let m = MaskEstimator::<f32>::new(UNetConfig { resolution: 16, base_width: 2, depth: 2 }, 0).unwrap();
        let hm = KeypointHeatmaps { tensor: Array::zeros(&[NUM_KEYPOINTS, 8, 8]), sigma: 1.0 };
        assert!(matches!(m.estimate_mask(&hm), Err(Error::ResolutionMismatch { .. })));
        let hm = KeypointHeatmaps { tensor: Array::zeros(&[NUM_KEYPOINTS, 16, 16]), sigma: 1.0 };
        let out = m.estimate_mask(&hm).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

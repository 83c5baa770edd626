//! Tiny person/background classifier and the detection metrics used to
//! measure augmentation benefit.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use dummynet_nn::layers::{bce_with_logits, relu_gain};
use dummynet_nn::{Array, Bound, Conv2d, Linear, ParamStore, Scalar, Sgd, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::train_util::{gather_batch, load_model, minibatches, restore, save_model, split_indices, TrainReport};

pub const CLASSIFIER_CHECKPOINT_TAG: &str = "cls_v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: Label,
}

/// Four 3x3 stride-2 convolutions with ReLU; 2x max pooling after the first
/// two, global max pooling after the last; one linear unit with sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub widths: [usize; 4],
    pub input_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { widths: [5, 10, 16, 32], input_size: 64 }
    }
}

impl ClassifierConfig {
    pub fn parameter_count(&self) -> usize {
        let mut cin = 3;
        let mut n = 0;
        for &c in &self.widths {
            n += cin * c * 9 + c;
            cin = c;
        }
        n + cin + 1
    }
}

#[derive(Clone, Debug)]
pub struct Classifier<T: Scalar> {
    config: ClassifierConfig,
    convs: Vec<Conv2d>,
    fc: Linear,
    store: ParamStore<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        if config.widths.contains(&0) || config.input_size < 16 {
            return Err(Error::Config(format!("invalid classifier config {config:?}")));
        }
        let mut r = rng::stream(seed, "cls-init", 0);
        let mut store = ParamStore::new();
        let mut cin = 3;
        let mut convs = Vec::new();
        for (i, &c) in config.widths.iter().enumerate() {
            convs.push(Conv2d::new(&mut store, &format!("conv{i}"), cin, c, 3, 2, 1, true, relu_gain(0.0), &mut r));
            cin = c;
        }
        let fc = Linear::new(&mut store, "fc", cin, 1, 1.0, &mut r);
        Ok(Self { config, convs, fc, store })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Logits `[B]` for images `[B, 3, S, S]`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let mut h = x.add_scalar(T::lit(-0.5));
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(p, h).relu();
            if i < 2 && h.shape()[2] % 2 == 0 && h.shape()[3] % 2 == 0 {
                h = h.max_pool2();
            }
        }
        while h.shape()[2] > 1 && h.shape()[2] % 2 == 0 && h.shape()[3] % 2 == 0 {
            h = h.max_pool2();
        }
        if h.shape()[2] * h.shape()[3] > 1 {
            h = h.mean_hw();
        }
        let b = h.shape()[0];
        self.fc.forward(p, h.reshape(&[b, self.config.widths[3]])).reshape(&[b])
    }

    fn check(&self, im: &Image<T>) -> Result<()> {
        let s = self.config.input_size;
        if im.channels() != 3 || im.size() != (s, s) {
            return Err(Error::ResolutionMismatch { expected: (s, s), found: im.size() });
        }
        Ok(())
    }

    /// Person probabilities. Images of the wrong size are rejected.
    pub fn score(&self, images: &[Image<T>]) -> Result<Vec<f64>> {
        for im in images {
            self.check(im)?;
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let tape = Tape::new();
            let p = self.store.bind(&tape, false);
            let x = Array::stack(&chunk.iter().map(|im| im.to_array().reshape(&[3, im.height(), im.width()])).collect::<Vec<_>>());
            let y = tape.no_grad(|| self.forward(&p, tape.constant(x)).sigmoid());
            out.extend(y.value().data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }

    /// [`Self::score`] split over `workers` threads.
    pub fn score_parallel(&self, images: &[Image<T>], workers: usize) -> Result<Vec<f64>>
    where
        T: Send + Sync,
    {
        let workers = workers.max(1);
        if workers == 1 || images.len() < 2 * workers {
            return self.score(images);
        }
        let per = images.len().div_ceil(workers);
        let parts: Vec<Result<Vec<f64>>> =
            std::thread::scope(|s| images.chunks(per).map(|c| s.spawn(move || self.score(c))).collect::<Vec<_>>().into_iter().map(|h| h.join().expect("scoring thread")).collect());
        let mut out = Vec::with_capacity(images.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, CLASSIFIER_CHECKPOINT_TAG, &self.config, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, loaded) = load_model::<T, ClassifierConfig>(path, CLASSIFIER_CHECKPOINT_TAG)?;
        let mut c = Self::new(config, 0)?;
        restore(&mut c.store, &loaded)?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub classifier: ClassifierConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            epochs: 1000,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// SGD on binary cross-entropy. Positives and negatives are split into
/// train/validation separately; the weights with the lowest validation loss
/// are returned.
pub fn train_classifier<T: Scalar>(pos: &[Image<T>], neg: &[Image<T>], cfg: &ClassifierTrainConfig) -> Result<(Classifier<T>, TrainReport)> {
    train_classifier_augmented(pos, &[], neg, cfg)
}

/// Like [`train_classifier`], with `extra_pos` added to the training portion
/// only. The validation split is drawn from `pos` and `neg` exactly as without
/// extras, so runs with and without extras select checkpoints on the same data.
pub fn train_classifier_augmented<T: Scalar>(
    pos: &[Image<T>],
    extra_pos: &[Image<T>],
    neg: &[Image<T>],
    cfg: &ClassifierTrainConfig,
) -> Result<(Classifier<T>, TrainReport)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut clf = Classifier::new(cfg.classifier.clone(), cfg.seed)?;
    let n = pos.len() + neg.len() + extra_pos.len();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for (set, y) in [(pos, T::one()), (neg, T::zero()), (extra_pos, T::one())] {
        for im in set {
            clf.check(im)?;
            xs.push(im.to_array().reshape(&[3, im.height(), im.width()]));
            ys.push(Array::new(&[1], vec![y]));
        }
    }
    let mut split = rng::stream(cfg.seed, "cls-split", 0);
    let (tp, vp) = split_indices(pos.len(), cfg.val_fraction, &mut split);
    let (tn, vn) = split_indices(neg.len(), cfg.val_fraction, &mut split);
    let extra = (pos.len() + neg.len())..n;
    let train: Vec<usize> = tp.into_iter().chain(tn.into_iter().map(|i| i + pos.len())).chain(extra).collect();
    let val: Vec<usize> = vp.into_iter().chain(vn.into_iter().map(|i| i + pos.len())).collect();
    let mut opt = Sgd::new(&clf.store, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut report = TrainReport::default();
    let mut best = clf.store.clone();
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, "cls-epoch", epoch as u64);
        let mut sum = 0.0;
        for b in minibatches(train.len(), cfg.batch_size, &mut r) {
            let idx: Vec<usize> = b.iter().map(|&i| train[i]).collect();
            let tape = Tape::new();
            let p = clf.store.bind(&tape, true);
            let loss = batch_loss(&clf, &p, &tape, &xs, &ys, &idx);
            let l = loss.item().as_f64();
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss("classifier"));
            }
            sum += l * idx.len() as f64;
            let grads = p.grads(loss);
            drop(p);
            opt.step(&mut clf.store, &grads);
        }
        report.train_loss.push(sum / train.len() as f64);
        let mut vsum = 0.0;
        for chunk in val.chunks(256) {
            let tape = Tape::new();
            let p = clf.store.bind(&tape, false);
            vsum += tape.no_grad(|| batch_loss(&clf, &p, &tape, &xs, &ys, chunk).item().as_f64()) * chunk.len() as f64;
        }
        let v = vsum / val.len() as f64;
        if v < report.best_val_loss() {
            report.best_epoch = epoch;
            best = clf.store.clone();
        }
        report.val_loss.push(v);
    }
    clf.store = best;
    Ok((clf, report))
}

fn batch_loss<'t, T: Scalar>(clf: &Classifier<T>, p: &Bound<'t, T>, tape: &'t Tape<T>, xs: &[Array<T>], ys: &[Array<T>], idx: &[usize]) -> Var<'t, T> {
    let logits = clf.forward(p, tape.constant(gather_batch(xs, idx)));
    bce_with_logits(logits, tape.constant(gather_batch(ys, idx).reshape(&[idx.len()])))
}

/// Pairs scores with labels: positives first, then negatives.
pub fn scored(pos: &[f64], neg: &[f64]) -> Vec<ScoredSample> {
    pos.iter()
        .map(|&score| ScoredSample { score, label: Label::Positive })
        .chain(neg.iter().map(|&score| ScoredSample { score, label: Label::Negative }))
        .collect()
}

fn split_scores(samples: &[ScoredSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in samples {
        if !s.score.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite score {}", s.score)));
        }
        match s.label {
            Label::Positive => pos.push(s.score),
            Label::Negative => neg.push(s.score),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok((pos, neg))
}

/// Fraction of positives scored at or below the smallest threshold whose
/// false-positive rate (negatives strictly above it) is at most `fpr`.
pub fn miss_rate_at_fpr(samples: &[ScoredSample], fpr: f64) -> Result<f64> {
    let (pos, mut neg) = split_scores(samples)?;
    if !(0.0..1.0).contains(&fpr) {
        return Err(Error::InvalidInput(format!("fpr must lie in [0, 1), got {fpr}")));
    }
    neg.sort_by(|a, b| b.total_cmp(a));
    let allowed = fpr * neg.len() as f64;
    // Walk thresholds from the highest negative score downwards; the count
    // of negatives strictly above the candidate only grows.
    let mut t = neg[0];
    let mut i = 0;
    while i < neg.len() {
        let v = neg[i];
        // `i` is the first index holding `v`, so `i` negatives lie strictly above it.
        if (i as f64) > allowed {
            break;
        }
        t = v;
        while i < neg.len() && neg[i] == v {
            i += 1;
        }
    }
    Ok(pos.iter().filter(|&&s| s <= t).count() as f64 / pos.len() as f64)
}

/// Threshold sweep: `(threshold, fpr, miss_rate)` for every distinct score,
/// ascending, classifying scores strictly above the threshold as positive.
pub fn roc_sweep(samples: &[ScoredSample]) -> Result<Vec<(f64, f64, f64)>> {
    let (pos, neg) = split_scores(samples)?;
    let mut ts: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    Ok(ts
        .into_iter()
        .map(|t| {
            let fp = neg.iter().filter(|&&s| s > t).count() as f64 / neg.len() as f64;
            let miss = pos.iter().filter(|&&s| s <= t).count() as f64 / pos.len() as f64;
            (t, fp, miss)
        })
        .collect())
}

pub fn write_roc_csv(mut w: impl Write, sweep: &[(f64, f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "threshold,fpr,miss_rate")?;
    for (t, f, m) in sweep {
        writeln!(w, "{t},{f},{m}")?;
    }
    Ok(())
}

/// `[x0, y0, x1, y1]` in continuous image coordinates.
pub type Box4 = [f64; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: Box4,
    pub score: f64,
}

pub fn box_iou(a: &Box4, b: &Box4) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &Box4| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Greedy matching in descending score order; each detection claims the
/// unmatched ground-truth box of highest overlap if it reaches `iou_threshold`.
/// Returns `(score, is_true_positive)` sorted by descending score.
pub fn match_detections(detections: &[Detection], ground_truth: &HashMap<String, Vec<Box4>>, iou_threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut taken: HashMap<&str, Vec<bool>> = ground_truth.iter().map(|(k, v)| (k.as_str(), vec![false; v.len()])).collect();
    order
        .into_iter()
        .map(|i| {
            let d = &detections[i];
            let hit = match (ground_truth.get(&d.image_id), taken.get_mut(d.image_id.as_str())) {
                (Some(gts), Some(used)) => {
                    let best = gts
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| !used[*j])
                        .map(|(j, g)| (j, box_iou(&d.bbox, g)))
                        .filter(|&(_, o)| o >= iou_threshold)
                        .max_by(|a, b| a.1.total_cmp(&b.1));
                    match best {
                        Some((j, _)) => {
                            used[j] = true;
                            true
                        }
                        None => false,
                    }
                }
                _ => false,
            };
            (d.score, hit)
        })
        .collect()
}

/// False positives per image reference points of the log-average miss rate.
pub fn lamr_reference_points() -> [f64; 9] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + 0.25 * i as f64))
}

/// Log-average miss rate over `num_images` images: geometric mean of the miss
/// rate at nine FPPI points log-spaced in `[0.01, 1]`. Each point takes the
/// operating point with the largest FPPI not above it; beyond the largest
/// FPPI reached the lowest miss rate is used.
pub fn lamr(detections: &[Detection], ground_truth: &HashMap<String, Vec<Box4>>, num_images: usize, iou_threshold: f64) -> Result<f64> {
    let n_gt: usize = ground_truth.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    if num_images == 0 {
        return Err(Error::InvalidInput("num_images must be positive".into()));
    }
    let matched = match_detections(detections, ground_truth, iou_threshold);
    // Operating points after each group of equal scores; the empty detector
    // (FPPI 0, miss rate 1) comes first.
    let mut curve = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(s, hit)) in matched.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if matched.get(i + 1).is_none_or(|n| n.0 != s) {
            curve.push((fp as f64 / num_images as f64, 1.0 - tp as f64 / n_gt as f64));
        }
    }
    Ok(log_average(&curve))
}

/// Geometric mean of the miss rate sampled at the reference FPPI points of a
/// `(fppi, miss_rate)` curve ordered by increasing FPPI.
pub fn log_average(curve: &[(f64, f64)]) -> f64 {
    let refs = lamr_reference_points();
    let logs: f64 = refs
        .iter()
        .map(|&r| {
            let mr = curve.iter().rev().find(|p| p.0 <= r).map_or(1.0, |p| p.1);
            mr.max(1e-10).ln()
        })
        .sum();
    (logs / refs.len() as f64).exp()
}

/// Window classification as detection: every window is an image with one
/// full-window detection, and positive windows carry one ground-truth box.
pub fn window_lamr(samples: &[ScoredSample]) -> Result<f64> {
    let full = [0.0, 0.0, 1.0, 1.0];
    let mut gt = HashMap::new();
    let dets: Vec<Detection> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let id = i.to_string();
            if s.label == Label::Positive {
                gt.insert(id.clone(), vec![full]);
            }
            Detection { image_id: id, bbox: full, score: s.score }
        })
        .collect();
    lamr(&dets, &gt, samples.len(), 0.5)
}

pub fn read_detections(r: impl BufRead) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<detections>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_detections(mut w: impl Write, detections: &[Detection]) -> Result<()> {
    for d in detections {
        writeln!(w, "{}", serde_json::to_string(d)?).map_err(|e| Error::io("<detections>", e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mr_at_1fpr: f64,
    pub mr_at_10fpr: f64,
    pub lamr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl MetricsReport {
    pub fn from_samples(samples: &[ScoredSample]) -> Result<Self> {
        let (pos, neg) = split_scores(samples)?;
        Ok(Self {
            mr_at_1fpr: miss_rate_at_fpr(samples, 0.01)?,
            mr_at_10fpr: miss_rate_at_fpr(samples, 0.10)?,
            lamr: window_lamr(samples)?,
            n_pos: pos.len(),
            n_neg: neg.len(),
        })
    }
}

/// Miss rate against false positives per image on log-log axes.
pub fn plot_miss_rate_curve(curve: &[(f64, f64)], path: &Path) -> Result<()> {
    let (w, h) = (360u32, 280u32);
    let (left, right, top, bottom) = (40.0, 10.0, 10.0, 30.0);
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let pw = w as f64 - left - right;
    let ph = h as f64 - top - bottom;
    let (x_lo, x_hi, y_lo, y_hi) = (-3.0f64, 1.0f64, -2.0f64, 0.0f64);
    let to_px = |fppi: f64, mr: f64| {
        let lx = fppi.max(1e-3).log10().clamp(x_lo, x_hi);
        let ly = mr.max(1e-2).log10().clamp(y_lo, y_hi);
        (left + (lx - x_lo) / (x_hi - x_lo) * pw, top + (y_hi - ly) / (y_hi - y_lo) * ph)
    };
    let mut put = |x: f64, y: f64, c: [u8; 3]| {
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        if xi >= 0 && yi >= 0 && (xi as u32) < w && (yi as u32) < h {
            img.put_pixel(xi as u32, yi as u32, image::Rgb(c));
        }
    };
    let grey = [200, 200, 200];
    for d in (x_lo as i32)..=(x_hi as i32) {
        let (x, _) = to_px(10f64.powi(d), 1.0);
        for y in 0..(ph as i64) {
            put(x, top + y as f64, grey);
        }
    }
    for d in (y_lo as i32)..=(y_hi as i32) {
        let (_, y) = to_px(1.0, 10f64.powi(d));
        for x in 0..(pw as i64) {
            put(left + x as f64, y, grey);
        }
    }
    for p in curve.windows(2) {
        let (a, b) = (to_px(p[0].0, p[0].1), to_px(p[1].0, p[1].1));
        // Step plot: horizontal then vertical.
        let steps = ((b.0 - a.0).abs() + (b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            put(a.0 + (b.0 - a.0) * t, a.1, [200, 30, 30]);
            put(b.0, a.1 + (b.1 - a.1) * t, [200, 30, 30]);
        }
    }
    img.save(path).map_err(Error::from)
}

/// `(fppi, miss_rate)` operating points of window classification.
pub fn window_curve(samples: &[ScoredSample]) -> Result<Vec<(f64, f64)>> {
    let sweep = roc_sweep(samples)?;
    let n = samples.len() as f64;
    let (pos, neg) = split_scores(samples)?;
    let mut curve: Vec<(f64, f64)> = sweep.iter().rev().map(|&(_, f, m)| (f * neg.len() as f64 / n, m)).collect();
    if pos.iter().chain(&neg).all(|&s| s <= sweep[0].0) {
        curve.insert(0, (0.0, 1.0));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realized_parameter_count() {
        let c = Classifier::<f32>::new(ClassifierConfig::default(), 0).unwrap();
        assert_eq!(c.num_parameters(), 6729);
        assert_eq!(ClassifierConfig::default().parameter_count(), 6729);
    }

    #[test]
    fn separable_and_tied_scores() {
        let s = scored(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(miss_rate_at_fpr(&s, 0.1).unwrap(), 0.0);
        let t = scored(&[0.5; 3], &[0.5; 4]);
        assert_eq!(miss_rate_at_fpr(&t, 0.5).unwrap(), 1.0);
        assert!(matches!(miss_rate_at_fpr(&scored(&[0.5], &[]), 0.1), Err(Error::NoSamples)));
    }

    #[test]
    fn lamr_extremes() {
        let mut gt = HashMap::new();
        gt.insert("a".to_string(), vec![[0.0, 0.0, 10.0, 20.0]]);
        gt.insert("b".to_string(), vec![[5.0, 5.0, 15.0, 25.0]]);
        let perfect = vec![
            Detection { image_id: "a".into(), bbox: [0.0, 0.0, 10.0, 20.0], score: 1.0 },
            Detection { image_id: "b".into(), bbox: [5.0, 5.0, 15.0, 25.0], score: 1.0 },
        ];
        assert!(lamr(&perfect, &gt, 2, 0.5).unwrap() < 1e-9);
        assert_eq!(lamr(&[], &gt, 2, 0.5).unwrap(), 1.0);
        assert!(matches!(lamr(&perfect, &HashMap::new(), 2, 0.5), Err(Error::NoGroundTruth)));
    }
}

//! Where and how large to insert a person into a full scene.
//!
//! Vertical positions of footprints (`y_bottom`) are measured in pixels from
//! the bottom image row, increasing upward: row `r` of an `H` row image has
//! `y_bottom = H - 1 - r`.

use dummynet_nn::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compositor::composite;
use crate::error::{Error, Result};
use crate::image::{Image, MaskImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Other = 0,
    Ground = 1,
    Road = 2,
    Sidewalk = 3,
}

impl Label {
    /// Labels a person may stand on.
    pub fn walkable(self) -> bool {
        matches!(self, Label::Ground | Label::Road | Label::Sidewalk)
    }
}

/// Person box: horizontal centre, footprint height above the bottom row, size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonBox {
    pub x: f64,
    pub y_bottom: f64,
    pub width: f64,
    pub height: f64,
}

impl PersonBox {
    /// `(left, top, right, bottom)` in top-down image coordinates for an image
    /// with `image_height` rows; `bottom` is one past the footprint row.
    pub fn ltrb(&self, image_height: usize) -> (f64, f64, f64, f64) {
        let bottom = image_height as f64 - self.y_bottom;
        (self.x - self.width / 2.0, bottom - self.height, self.x + self.width / 2.0, bottom)
    }

    pub fn from_ltrb(l: f64, t: f64, r: f64, b: f64, image_height: usize) -> Self {
        Self { x: (l + r) / 2.0, y_bottom: image_height as f64 - b, width: r - l, height: b - t }
    }

    pub fn iou(&self, other: &Self) -> f64 {
        // Any consistent image height works for overlap.
        let (a, b) = (self.ltrb(0), other.ltrb(0));
        let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
        let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
        let inter = iw * ih;
        let union = self.width * self.height + other.width * other.height - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneContext<T> {
    pub image: Image<T>,
    /// Row-major label map with the image's size.
    pub semantics: Vec<Label>,
    pub persons: Vec<PersonBox>,
}

impl<T: Scalar> SceneContext<T> {
    pub fn new(image: Image<T>, semantics: Vec<Label>, persons: Vec<PersonBox>) -> Result<Self> {
        let (h, w) = image.size();
        if semantics.len() != h * w {
            return Err(Error::ShapeMismatch(format!("label map of {} for a {h}x{w} image", semantics.len())));
        }
        for p in &persons {
            let (l, t, r, b) = p.ltrb(h);
            if l < 0.0 || t < 0.0 || r > w as f64 || b > h as f64 {
                return Err(Error::InvalidInput(format!("person box {p:?} outside {h}x{w} scene")));
            }
        }
        Ok(Self { image, semantics, persons })
    }

    pub fn size(&self) -> (usize, usize) {
        self.image.size()
    }

    pub fn label(&self, row: usize, x: usize) -> Label {
        self.semantics[row * self.image.width() + x]
    }
}

/// `h = a * y_bottom + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightModel {
    pub a: f64,
    pub b: f64,
}

impl HeightModel {
    pub fn height_at(&self, y_bottom: f64) -> f64 {
        self.a * y_bottom + self.b
    }
}

/// Least-squares line through `(y_bottom, height)` samples.
pub fn fit_height_model(samples: &[(f64, f64)]) -> Result<HeightModel> {
    let n = samples.len() as f64;
    if samples.len() < 2 || samples.iter().any(|(y, h)| !y.is_finite() || !h.is_finite()) {
        return Err(Error::DegenerateFit);
    }
    let my = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mh = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let syy: f64 = samples.iter().map(|s| (s.0 - my).powi(2)).sum();
    let syh: f64 = samples.iter().map(|s| (s.0 - my) * (s.1 - mh)).sum();
    if !(syy > 0.0) || samples.iter().all(|s| s.0 == samples[0].0) {
        return Err(Error::DegenerateFit);
    }
    let a = syh / syy;
    Ok(HeightModel { a, b: mh - a * my })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    /// Existing persons at least this tall attract placements and must not be occluded.
    pub min_person_height: f64,
    /// Half-width of the horizontal window around an existing person, in multiples of its height.
    pub neighborhood: f64,
    pub attempts: usize,
    /// A placement is rejected when its box has IoU above this with a protected person.
    pub max_overlap_iou: f64,
    /// Box width as a fraction of height for proposed placements.
    pub aspect: f64,
    /// Smallest height worth inserting.
    pub min_height: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self { min_person_height: 50.0, neighborhood: 2.0, attempts: 50, max_overlap_iou: 0.0, aspect: 0.41, min_height: 8.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: f64,
    pub y_bottom: f64,
    pub height: f64,
}

impl Placement {
    pub fn footprint(&self, image_height: usize) -> (usize, usize) {
        (self.x.floor() as usize, image_height - 1 - self.y_bottom as usize)
    }
}

/// Accept/reject decision for a footprint pixel `(x, row)`.
pub fn check_placement<T: Scalar>(scene: &SceneContext<T>, model: &HeightModel, cfg: &PlacementConfig, x: usize, row: usize) -> Option<Placement> {
    let (h, w) = scene.size();
    if x >= w || row >= h || !scene.label(row, x).walkable() {
        return None;
    }
    let y_bottom = (h - 1 - row) as f64;
    let height = model.height_at(y_bottom);
    if !(height >= cfg.min_height) {
        return None;
    }
    let cand = PersonBox { x: x as f64 + 0.5, y_bottom, width: cfg.aspect * height, height };
    let (l, t, r, _) = cand.ltrb(h);
    if l < 0.0 || t < 0.0 || r > w as f64 {
        return None;
    }
    let blocked = scene.persons.iter().any(|p| p.height >= cfg.min_person_height && cand.iou(p) > cfg.max_overlap_iou);
    if blocked {
        return None;
    }
    Some(Placement { x: x as f64 + 0.5, y_bottom, height })
}

/// One evaluated candidate during a placement search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attempt {
    pub x: usize,
    pub row: usize,
    pub accepted: bool,
}

/// Like [`propose_placement`], also returning every candidate tried.
pub fn propose_placement_traced<T: Scalar, R: Rng + ?Sized>(
    scene: &SceneContext<T>,
    model: &HeightModel,
    cfg: &PlacementConfig,
    rng: &mut R,
) -> (Result<Placement>, Vec<Attempt>) {
    let (h, w) = scene.size();
    let mut trace = Vec::new();
    let anchors: Vec<&PersonBox> = scene.persons.iter().filter(|p| p.height >= cfg.min_person_height).collect();
    let walkable: Vec<usize> = (0..h * w).filter(|&i| scene.semantics[i].walkable()).collect();
    if walkable.is_empty() {
        return (Err(Error::NoValidPlacement { attempts: 0 }), trace);
    }
    // Half of the budget goes to neighbourhoods of existing persons when there are any.
    let near_budget = if anchors.is_empty() { 0 } else { cfg.attempts.div_ceil(2) };
    for i in 0..cfg.attempts {
        let (x, row) = if i < near_budget {
            let p = anchors[rng.random_range(0..anchors.len())];
            let half = cfg.neighborhood * p.height;
            let xf = p.x + rng.random_range(-half..=half);
            let row_f = h as f64 - 1.0 - p.y_bottom + rng.random_range(-0.1..=0.1) * p.height;
            if xf < 0.0 || xf >= w as f64 || row_f < 0.0 || row_f >= h as f64 {
                continue;
            }
            (xf as usize, row_f.round().min(h as f64 - 1.0) as usize)
        } else {
            let idx = walkable[rng.random_range(0..walkable.len())];
            (idx % w, idx / w)
        };
        let decision = check_placement(scene, model, cfg, x, row);
        trace.push(Attempt { x, row, accepted: decision.is_some() });
        if let Some(p) = decision {
            return (Ok(p), trace);
        }
    }
    (Err(Error::NoValidPlacement { attempts: cfg.attempts }), trace)
}

pub fn propose_placement<T: Scalar, R: Rng + ?Sized>(
    scene: &SceneContext<T>,
    model: &HeightModel,
    cfg: &PlacementConfig,
    rng: &mut R,
) -> Result<Placement> {
    propose_placement_traced(scene, model, cfg, rng).0
}

/// Annotation emitted for an inserted person, in pixels (inclusive bounds).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxAnnotation {
    pub fn to_person_box(self, image_height: usize) -> PersonBox {
        PersonBox::from_ltrb(self.x0 as f64, self.y0 as f64, self.x1 as f64 + 1.0, self.y1 as f64 + 1.0, image_height)
    }
}

/// Rescales `patch` so the mask's vertical extent matches the placement
/// height, aligns the bottom of the mask with the footprint row and the mask's
/// horizontal centre with `x`, and composites. Pixels where the scaled mask is
/// zero keep their original values.
pub fn insert_person<T: Scalar>(
    scene: &SceneContext<T>,
    patch: &Image<T>,
    patch_mask: &MaskImage<T>,
    placement: &Placement,
) -> Result<(SceneContext<T>, BoxAnnotation)> {
    if patch.size() != patch_mask.size() {
        return Err(Error::ShapeMismatch(format!("patch {:?} vs mask {:?}", patch.size(), patch_mask.size())));
    }
    let half = T::lit(0.5);
    let (bx0, by0, bx1, by1) = patch_mask.bounding_box(half).ok_or(Error::EmptyMask)?;
    let extent = (by1 - by0 + 1) as f64;
    let scale = placement.height / extent;
    let (ph, pw) = patch.size();
    let (sh, sw) = (((ph as f64) * scale).round().max(1.0) as usize, ((pw as f64) * scale).round().max(1.0) as usize);
    let (patch, mask) = (patch.resize(sh, sw), patch_mask.resize(sh, sw));
    let (h, w) = scene.size();
    let (fx, frow) = placement.footprint(h);
    // Offsets of the scaled patch inside the scene.
    let sy_bottom = (by1 as f64 + 1.0) * scale;
    let sx_center = (bx0 + bx1 + 1) as f64 / 2.0 * scale;
    let oy = (frow as f64 + 1.0 - sy_bottom).round() as isize;
    let ox = (fx as f64 + 0.5 - sx_center).round() as isize;
    for y in 0..sh {
        for x in 0..sw {
            let (ty, tx) = (oy + y as isize, ox + x as isize);
            let outside = ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize;
            if outside && mask.get(y, x) > T::zero() {
                return Err(Error::OutOfBounds);
            }
        }
    }
    // Clip the patch to the scene and composite inside that window.
    let (y0, x0) = (oy.max(0) as usize, ox.max(0) as usize);
    let (y1, x1) = (((oy + sh as isize).min(h as isize)) as usize, ((ox + sw as isize).min(w as isize)) as usize);
    if y1 <= y0 || x1 <= x0 {
        return Err(Error::OutOfBounds);
    }
    let (wh, ww) = (y1 - y0, x1 - x0);
    let (cy, cx) = ((y0 as isize - oy) as usize, (x0 as isize - ox) as usize);
    let win_mask = MaskImage::from_fn(wh, ww, |y, x| mask.get(cy + y, cx + x))?;
    let win_gen = patch.crop(cy as isize, cx as isize, wh, ww);
    let win_bg = scene.image.crop(y0 as isize, x0 as isize, wh, ww);
    let blended = composite(&win_mask, &win_gen, &win_bg)?;
    let mut image = scene.image.clone();
    let mut bb: Option<BoxAnnotation> = None;
    for y in 0..wh {
        for x in 0..ww {
            let m = win_mask.get(y, x);
            if m > T::zero() {
                for c in 0..image.channels() {
                    image.set(c, y0 + y, x0 + x, blended.get(c, y, x));
                }
            }
            if m > half {
                let (gx, gy) = (x0 + x, y0 + y);
                bb = Some(match bb {
                    None => BoxAnnotation { x0: gx, y0: gy, x1: gx, y1: gy },
                    Some(b) => BoxAnnotation { x0: b.x0.min(gx), y0: b.y0.min(gy), x1: b.x1.max(gx), y1: b.y1.max(gy) },
                });
            }
        }
    }
    let bb = bb.ok_or(Error::EmptyMask)?;
    let mut persons = scene.persons.clone();
    persons.push(bb.to_person_box(h));
    Ok((SceneContext { image, semantics: scene.semantics.clone(), persons }, bb))
}

/// One line of the augmentation manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub scene_path: String,
    pub placement: (f64, f64, f64),
    pub pose_cluster_id: Option<usize>,
    pub appearance_source: String,
    pub seed: u64,
    pub out_path: String,
    pub r#box: BoxAnnotation,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_fit() {
        let s: Vec<(f64, f64)> = (0..10).map(|y| (y as f64, 2.0 * y as f64 + 10.0)).collect();
        let m = fit_height_model(&s).unwrap();
        assert!((m.a - 2.0).abs() < 1e-12 && (m.b - 10.0).abs() < 1e-12);
        assert!(matches!(fit_height_model(&[(3.0, 1.0), (3.0, 5.0)]), Err(Error::DegenerateFit)));
        assert!(matches!(fit_height_model(&[(3.0, 1.0)]), Err(Error::DegenerateFit)));
    }

    #[test]
    fn box_iou() {
        let a = PersonBox { x: 10.0, y_bottom: 0.0, width: 4.0, height: 10.0 };
        let b = PersonBox { x: 12.0, ..a };
        assert!((a.iou(&b) - 20.0 / 60.0).abs() < 1e-12);
        let c = PersonBox { x: 14.0, ..a };
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn no_walkable_pixels() {
        let scene = SceneContext::<f64>::new(Image::zeros(3, 8, 8), vec![Label::Other; 64], vec![]).unwrap();
        let m = HeightModel { a: 0.0, b: 4.0 };
        let mut rng = crate::rng::seeded(0);
        assert!(matches!(propose_placement(&scene, &m, &PlacementConfig::default(), &mut rng), Err(Error::NoValidPlacement { .. })));
    }
}

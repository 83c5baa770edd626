//! Procedural toy world: pedestrians with known keypoints and exact masks,
//! street backgrounds with semantic labels, and classifier windows.
//!
//! Everything is drawn analytically, so ground truth (masks, keypoints,
//! clean backgrounds) is available for every rendered person.

use dummynet_nn::Scalar;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{Image, MaskImage};
use crate::placement::Label;
use crate::pose::{Keypoint, Skeleton, NUM_KEYPOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Front,
    Back,
    /// Facing towards negative x.
    SideLeft,
    /// Facing towards positive x.
    SideRight,
}

impl View {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        match rng.random_range(0..4) {
            0 => View::Front,
            1 => View::Back,
            2 => View::SideLeft,
            _ => View::SideRight,
        }
    }
}

/// Full pose of a procedural person: every joint position plus annotated visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyPose {
    pub view: View,
    /// Pixel coordinates for all 17 joints, whether or not annotated visible.
    pub joints: [[f64; 2]; NUM_KEYPOINTS],
    pub visible: [bool; NUM_KEYPOINTS],
    pub height: f64,
}

fn kp(k: Keypoint) -> usize {
    k.index()
}

/// Random walking pose of a `height` pixel person standing on `(cx, foot_y)`.
pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, view: View, cx: f64, foot_y: f64, height: f64) -> BodyPose {
    use Keypoint::*;
    let h = height;
    let up = |f: f64| foot_y - f * h;
    // Unit vector towards the person's left side and forward direction on screen.
    let (left, fwd, lateral) = match view {
        View::Front => (1.0, 0.0, 1.0),
        View::Back => (-1.0, 0.0, 1.0),
        View::SideLeft => (1.0, -1.0, 0.25),
        View::SideRight => (-1.0, 1.0, 0.25),
    };
    let swing_dir = if fwd == 0.0 { 0.25 } else { fwd };
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let stride: f64 = rng.random_range(0.0..0.45);
    let lean: f64 = rng.random_range(-0.05..0.05) + 0.04 * fwd;
    let mut j = [[0.0; 2]; NUM_KEYPOINTS];
    let hip_y = up(0.50);
    let sh_y = up(0.80);
    let torso_x = |y: f64| cx + lean * (hip_y - y);
    let sw = 0.11 * lateral;
    let hw = 0.07 * lateral;
    j[kp(LeftShoulder)] = [torso_x(sh_y) + left * sw * h, sh_y];
    j[kp(RightShoulder)] = [torso_x(sh_y) - left * sw * h, sh_y];
    j[kp(LeftHip)] = [cx + left * hw * h, hip_y];
    j[kp(RightHip)] = [cx - left * hw * h, hip_y];
    // Legs swing in antiphase.
    let leg = |hip: [f64; 2], s: f64| -> ([f64; 2], [f64; 2]) {
        let theta = stride * s;
        let bend = (0.25 * (1.0 - s)).max(0.0) * stride * 2.0;
        let knee = [hip[0] + swing_dir * 0.22 * h * theta.sin(), hip[1] + 0.22 * h * theta.cos()];
        let shin = theta - bend;
        let ankle = [knee[0] + swing_dir * 0.23 * h * shin.sin(), knee[1] + 0.23 * h * shin.cos()];
        (knee, ankle)
    };
    let (lk, la) = leg(j[kp(LeftHip)], phase.sin());
    let (rk, ra) = leg(j[kp(RightHip)], -phase.sin());
    j[kp(LeftKnee)] = lk;
    j[kp(LeftAnkle)] = la;
    j[kp(RightKnee)] = rk;
    j[kp(RightAnkle)] = ra;
    // Arms swing against the legs; occasionally one is raised.
    let raise = if rng.random_bool(0.1) { rng.random_range(0.6..2.2) } else { 0.0 };
    let raised_left = rng.random_bool(0.5);
    let arm = |sh: [f64; 2], s: f64, out: f64, raise: f64| -> ([f64; 2], [f64; 2]) {
        let theta = 0.8 * stride * s + raise;
        let dir = if raise > 0.0 { out } else { swing_dir };
        let elbow = [sh[0] + dir * 0.18 * h * theta.sin() + out * 0.01 * h, sh[1] + 0.18 * h * theta.cos()];
        let fore = theta + 0.3 * stride.max(0.1) + 0.3 * raise;
        let wrist = [elbow[0] + dir * 0.17 * h * fore.sin() + out * 0.01 * h, elbow[1] + 0.17 * h * fore.cos()];
        (elbow, wrist)
    };
    let (le, lw) = arm(j[kp(LeftShoulder)], -phase.sin(), left, if raised_left { raise } else { 0.0 });
    let (re, rw) = arm(j[kp(RightShoulder)], phase.sin(), -left, if raised_left { 0.0 } else { raise });
    j[kp(LeftElbow)] = le;
    j[kp(LeftWrist)] = lw;
    j[kp(RightElbow)] = re;
    j[kp(RightWrist)] = rw;
    // Head.
    let head_x = torso_x(up(0.91)) + fwd * 0.03 * h;
    j[kp(Nose)] = [head_x + fwd * 0.03 * h, up(0.90)];
    j[kp(LeftEye)] = [head_x + left * 0.022 * h * lateral + fwd * 0.02 * h, up(0.92)];
    j[kp(RightEye)] = [head_x - left * 0.022 * h * lateral + fwd * 0.02 * h, up(0.92)];
    j[kp(LeftEar)] = [head_x + left * 0.05 * h * lateral - fwd * 0.01 * h, up(0.915)];
    j[kp(RightEar)] = [head_x - left * 0.05 * h * lateral - fwd * 0.01 * h, up(0.915)];
    // Ground the lower foot.
    let lowest = j[kp(LeftAnkle)][1].max(j[kp(RightAnkle)][1]);
    let dy = up(0.05) - lowest;
    for p in &mut j {
        p[1] += dy;
    }

    let mut visible = [true; NUM_KEYPOINTS];
    match view {
        View::Front => {}
        View::Back => {
            for k in [Nose, LeftEye, RightEye] {
                visible[kp(k)] = false;
            }
        }
        View::SideLeft | View::SideRight => {
            // The far side is the person's right when facing left on screen.
            let far_left = view == View::SideRight;
            let far = |l: Keypoint, r: Keypoint| if far_left { l } else { r };
            visible[kp(far(LeftEye, RightEye))] = false;
            visible[kp(far(LeftEar, RightEar))] = false;
            for (l, r, p) in [(LeftElbow, RightElbow, 0.6), (LeftWrist, RightWrist, 0.6), (LeftShoulder, RightShoulder, 0.4), (LeftHip, RightHip, 0.4)] {
                if rng.random_bool(p) {
                    visible[kp(far(l, r))] = false;
                }
            }
        }
    }
    for k in [LeftElbow, RightElbow, LeftWrist, RightWrist, LeftKnee, RightKnee, LeftAnkle, RightAnkle] {
        if rng.random_bool(0.06) {
            visible[kp(k)] = false;
        }
    }
    BodyPose { view, joints: j, visible, height }
}

impl BodyPose {
    /// Annotated skeleton on a canvas; joints outside it become invisible.
    pub fn skeleton<T: Scalar>(&self, canvas: (usize, usize)) -> Skeleton<T> {
        let pts = self.joints.map(|[x, y]| [T::lit(x), T::lit(y)]);
        Skeleton::clipped(pts, self.visible, canvas)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.joints {
            p[0] += dx;
            p[1] += dy;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Region {
    Shirt,
    Sleeve,
    Pants,
    Skin,
    Hair,
    Shoes,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Capsule { a: [f64; 2], b: [f64; 2], r: f64 },
    /// Convex quad dilated by `r`.
    Quad { p: [[f64; 2]; 4], r: f64 },
}

fn seg_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (qx * qx + qy * qy, t)
}

impl Shape {
    /// Normalized distance to the shape axis: `< 1` means inside.
    fn depth(&self, p: [f64; 2]) -> f64 {
        match *self {
            Shape::Capsule { a, b, r } => seg_dist2(p, a, b).0.sqrt() / r,
            Shape::Quad { p: q, r } => {
                let mut inside = true;
                let mut sign = 0.0;
                for i in 0..4 {
                    let (a, b) = (q[i], q[(i + 1) % 4]);
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    if cross != 0.0 {
                        if sign == 0.0 {
                            sign = cross.signum();
                        } else if cross.signum() != sign {
                            inside = false;
                        }
                    }
                }
                if inside {
                    return 0.0;
                }
                let d = (0..4).map(|i| seg_dist2(p, q[i], q[(i + 1) % 4]).0).fold(f64::INFINITY, f64::min).sqrt();
                d / r
            }
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Capsule { a, b, r } => (a[0].min(b[0]) - r, a[1].min(b[1]) - r, a[0].max(b[0]) + r, a[1].max(b[1]) + r),
            Shape::Quad { p, r } => {
                let xs = p.iter().map(|v| v[0]);
                let ys = p.iter().map(|v| v[1]);
                (
                    xs.clone().fold(f64::INFINITY, f64::min) - r,
                    ys.clone().fold(f64::INFINITY, f64::min) - r,
                    xs.fold(f64::NEG_INFINITY, f64::max) + r,
                    ys.fold(f64::NEG_INFINITY, f64::max) + r,
                )
            }
        }
    }
}

/// Body parts in painting order (later parts are drawn on top).
fn body_parts(pose: &BodyPose, long_sleeves: bool) -> Vec<(Shape, Region)> {
    use Keypoint::*;
    let j = |k: Keypoint| pose.joints[kp(k)];
    let h = pose.height;
    let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    let cap = |a, b, r: f64| Shape::Capsule { a, b, r: r * h };
    let foot = |ankle: [f64; 2]| {
        let dir = match pose.view {
            View::SideLeft => -1.0,
            View::SideRight => 1.0,
            _ => 0.0,
        };
        cap(ankle, [ankle[0] + dir * 0.04 * h, ankle[1] + 0.03 * h], 0.025)
    };
    let fore_region = if long_sleeves { Region::Sleeve } else { Region::Skin };
    let leg = |hip, knee, ankle| {
        vec![(cap(hip, knee, 0.045), Region::Pants), (cap(knee, ankle, 0.037), Region::Pants), (foot(ankle), Region::Shoes)]
    };
    let arm = |sh, el, wr| {
        vec![
            (cap(sh, el, 0.032), Region::Sleeve),
            (cap(el, wr, 0.027), fore_region),
            (cap(wr, wr, 0.022), Region::Skin),
        ]
    };
    let left_leg = leg(j(LeftHip), j(LeftKnee), j(LeftAnkle));
    let right_leg = leg(j(RightHip), j(RightKnee), j(RightAnkle));
    let left_arm = arm(j(LeftShoulder), j(LeftElbow), j(LeftWrist));
    let right_arm = arm(j(RightShoulder), j(RightElbow), j(RightWrist));
    let sc = mid(j(LeftShoulder), j(RightShoulder));
    let hc = mid(j(LeftHip), j(RightHip));
    let torso = vec![
        (Shape::Quad { p: [j(LeftShoulder), j(RightShoulder), j(RightHip), j(LeftHip)], r: 0.035 * h }, Region::Shirt),
        (cap(sc, hc, 0.06), Region::Shirt),
        (cap(hc, hc, 0.075), Region::Pants),
    ];
    let ears = mid(j(LeftEar), j(RightEar));
    let head_c = [ears[0] * 0.6 + j(Nose)[0] * 0.4, j(Nose)[1] - 0.015 * h];
    let head = vec![
        (cap(sc, [head_c[0], head_c[1] + 0.04 * h], 0.028), Region::Skin),
        (cap(head_c, head_c, 0.062), Region::Skin),
        (cap([head_c[0], head_c[1] - 0.03 * h], [head_c[0] - 0.01 * h * (pose.view == View::Back) as u8 as f64, head_c[1] - 0.02 * h], 0.05), Region::Hair),
    ];
    let mut parts = Vec::new();
    // Far limbs first for side views.
    let (far_arm, far_leg, near_arm, near_leg) = match pose.view {
        View::SideRight => (left_arm, left_leg, right_arm, right_leg),
        _ => (right_arm, right_leg, left_arm, left_leg),
    };
    let front_or_back = matches!(pose.view, View::Front | View::Back);
    parts.extend(far_leg);
    parts.extend(near_leg);
    if !front_or_back {
        parts.extend(far_arm.clone());
    }
    parts.extend(torso);
    if front_or_back {
        parts.extend(far_arm);
    }
    parts.extend(near_arm);
    parts.extend(head);
    parts
}

/// Exact person silhouette: 2x2 supersampled coverage, thresholded at one half.
pub fn body_mask<T: Scalar>(pose: &BodyPose, canvas: (usize, usize)) -> MaskImage<T> {
    let parts = body_parts(pose, true);
    let (h, w) = canvas;
    let mut cover = vec![0u8; h * w];
    for (shape, _) in &parts {
        let (x0, y0, x1, y1) = shape.bounds();
        let (xa, xb) = ((x0.floor().max(0.0)) as usize, (x1.ceil().min(w as f64)).max(0.0) as usize);
        let (ya, yb) = ((y0.floor().max(0.0)) as usize, (y1.ceil().min(h as f64)).max(0.0) as usize);
        for y in ya..yb {
            for x in xa..xb {
                let mut bits = cover[y * w + x];
                for (s, (ox, oy)) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)].iter().enumerate() {
                    if shape.depth([x as f64 + ox - 0.5, y as f64 + oy - 0.5]) < 1.0 {
                        bits |= 1 << s;
                    }
                }
                cover[y * w + x] = bits;
            }
        }
    }
    MaskImage::new(h, w, cover.iter().map(|b| if b.count_ones() >= 2 { T::one() } else { T::zero() }).collect())
        .expect("binary mask is valid")
}

/// Clothing and skin colours of one person.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Appearance {
    pub shirt: [f64; 3],
    pub pants: [f64; 3],
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub shoes: [f64; 3],
    pub long_sleeves: bool,
}

fn random_color<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    let base: f64 = rng.random_range(lo..hi);
    let tint = [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)];
    [0, 1, 2].map(|c| (base + tint[c]).clamp(0.02, 0.98))
}

impl Appearance {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let skin_tone: f64 = rng.random_range(0.25..0.9);
        Self {
            shirt: random_color(rng, 0.1, 0.9),
            pants: random_color(rng, 0.05, 0.6),
            skin: [skin_tone, skin_tone * 0.78, skin_tone * 0.62],
            hair: random_color(rng, 0.02, 0.45),
            shoes: random_color(rng, 0.02, 0.35),
            long_sleeves: rng.random_bool(0.5),
        }
    }

    /// Every colour scaled by `f` (night scenes).
    pub fn darkened(&self, f: f64) -> Self {
        let d = |c: [f64; 3]| c.map(|v| v * f);
        Self { shirt: d(self.shirt), pants: d(self.pants), skin: d(self.skin), hair: d(self.hair), shoes: d(self.shoes), ..*self }
    }

    fn color(&self, r: Region) -> [f64; 3] {
        match r {
            Region::Shirt | Region::Sleeve => self.shirt,
            Region::Pants => self.pants,
            Region::Skin => self.skin,
            Region::Hair => self.hair,
            Region::Shoes => self.shoes,
        }
    }
}

/// Paints a person over `background` (in place) and returns its exact mask.
pub fn paint_person<T: Scalar, R: Rng + ?Sized>(rng: &mut R, background: &mut Image<T>, pose: &BodyPose, look: &Appearance) -> MaskImage<T> {
    let (h, w) = background.size();
    let mask = body_mask::<T>(pose, (h, w));
    let parts = body_parts(pose, look.long_sleeves);
    let noise = Normal::new(0.0, 0.025).expect("valid sigma");
    let light: f64 = rng.random_range(0.85..1.1);
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == T::zero() {
                continue;
            }
            let p = [x as f64, y as f64];
            // Topmost part covering the pixel, or the nearest one along the boundary.
            let mut best: Option<(Region, f64)> = None;
            let mut nearest = (Region::Shirt, f64::INFINITY);
            for (shape, region) in &parts {
                let d = shape.depth(p);
                if d < 1.0 {
                    best = Some((*region, d));
                }
                if d < nearest.1 {
                    nearest = (*region, d);
                }
            }
            let (region, d) = best.unwrap_or(nearest);
            let shade = light * (1.0 - 0.35 * d.min(1.0).powi(2));
            let col = look.color(region);
            let n: f64 = noise.sample(rng);
            for c in 0..3 {
                background.set(c, y, x, T::lit((col[c] * shade + n).clamp(0.0, 1.0)));
            }
        }
    }
    mask
}

/// A rendered street background with per-pixel labels.
#[derive(Clone, Debug)]
pub struct Street<T> {
    pub image: Image<T>,
    pub labels: Vec<Label>,
    /// Row of the horizon line.
    pub horizon: usize,
}

fn fill<T: Scalar>(img: &mut Image<T>, y0: usize, y1: usize, x0: usize, x1: usize, col: [f64; 3]) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            for c in 0..3 {
                img.set(c, y, x, T::lit(col[c]));
            }
        }
    }
}

/// Street scene: sky and buildings above the horizon, then sidewalk, road and
/// sometimes a grass strip, plus poles, trees and clutter.
pub fn street<T: Scalar, R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, brightness: f64) -> Street<T> {
    let (h, w) = (height, width);
    let mut img = Image::<T>::zeros(3, h, w);
    let mut labels = vec![Label::Other; h * w];
    let horizon = ((h as f64) * rng.random_range(0.3..0.5)) as usize;
    let sky = random_color(rng, 0.55, 0.95);
    fill(&mut img, 0, horizon, 0, w, sky);
    // Buildings.
    let mut x = 0usize;
    while x < w {
        let bw = rng.random_range(w / 8..w / 3 + 2).max(2);
        let top = rng.random_range(0..horizon.max(1));
        let col = random_color(rng, 0.2, 0.8);
        fill(&mut img, top, horizon, x, x + bw, col);
        // Windows.
        let win = random_color(rng, 0.05, 0.9);
        let step = (h / 16).max(3);
        let mut wy = top + 2;
        while wy + 2 < horizon {
            let mut wx = x + 1;
            while wx + 2 < x + bw {
                fill(&mut img, wy, wy + (step / 2).max(1), wx, wx + (step / 2).max(1), win);
                wx += step;
            }
            wy += step;
        }
        x += bw;
    }
    // Ground bands below the horizon.
    let mut y = horizon;
    let bands = [(Label::Sidewalk, 0.12..0.3), (Label::Road, 0.25..0.5), (Label::Sidewalk, 0.15..0.3), (Label::Ground, 0.1..0.3)];
    let start = rng.random_range(0..2);
    let mut i = start;
    while y < h {
        let (label, ref frac) = bands[i % bands.len()];
        let bh = (((h - horizon) as f64) * rng.random_range(frac.clone())).ceil() as usize;
        let col = match label {
            Label::Sidewalk => random_color(rng, 0.45, 0.75),
            Label::Road => random_color(rng, 0.15, 0.4).map(|v| v * 0.7 + 0.1),
            Label::Ground => {
                let g: f64 = rng.random_range(0.25..0.55);
                [g * 0.6, g, g * 0.4]
            }
            Label::Other => unreachable!(),
        };
        fill(&mut img, y, y + bh, 0, w, col);
        for yy in y..(y + bh).min(h) {
            for xx in 0..w {
                labels[yy * w + xx] = label;
            }
        }
        if label == Label::Road {
            // Lane markings.
            let my = y + bh / 2;
            let mut mx = rng.random_range(0..w / 4 + 1);
            while mx < w {
                fill(&mut img, my, my + (h / 64).max(1), mx, mx + (w / 12).max(2), [0.9, 0.9, 0.85]);
                mx += w / 5 + 1;
            }
        }
        y += bh.max(1);
        i += 1;
    }
    // Clutter: poles, trees, boxes and blobs; labelled as other.
    let n = rng.random_range(1..4 + w / 64);
    for _ in 0..n {
        let kind = rng.random_range(0..4);
        let cx = rng.random_range(0..w) as f64;
        let base = rng.random_range(horizon..h) as f64;
        let size = (h as f64) * rng.random_range(0.15..0.7);
        let col = random_color(rng, 0.05, 0.9);
        let mut shapes: Vec<(Shape, [f64; 3])> = Vec::new();
        match kind {
            0 => shapes.push((Shape::Capsule { a: [cx, base - size], b: [cx, base], r: size * 0.03 + 0.6 }, col)),
            1 => {
                shapes.push((Shape::Capsule { a: [cx, base - size * 0.5], b: [cx, base], r: size * 0.05 + 0.6 }, [0.35, 0.25, 0.15]));
                let g: f64 = rng.random_range(0.2..0.6);
                shapes.push((Shape::Capsule { a: [cx, base - size * 0.8], b: [cx, base - size * 0.6], r: size * 0.25 }, [g * 0.5, g, g * 0.4]));
            }
            2 => {
                let bw = size * rng.random_range(0.2..0.6);
                let p = [[cx - bw, base - size * 0.5], [cx + bw, base - size * 0.5], [cx + bw, base], [cx - bw, base]];
                shapes.push((Shape::Quad { p, r: 0.5 }, col));
            }
            _ => {
                // Upright person-sized blob.
                shapes.push((Shape::Capsule { a: [cx, base - size * 0.8], b: [cx, base - size * 0.2], r: size * 0.15 }, col));
            }
        }
        for (shape, col) in shapes {
            let (x0, y0, x1, y1) = shape.bounds();
            for yy in (y0.max(0.0) as usize)..(y1.ceil().max(0.0) as usize).min(h) {
                for xx in (x0.max(0.0) as usize)..(x1.ceil().max(0.0) as usize).min(w) {
                    let d = shape.depth([xx as f64, yy as f64]);
                    if d < 1.0 {
                        let shade = 1.0 - 0.3 * d * d;
                        for c in 0..3 {
                            img.set(c, yy, xx, T::lit(col[c] * shade));
                        }
                        labels[yy * w + xx] = Label::Other;
                    }
                }
            }
        }
    }
    // Sensor noise and global illumination.
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    for v in img.data_mut() {
        *v = T::lit((v.as_f64() * brightness + noise.sample(rng)).clamp(0.0, 1.0));
    }
    Street { image: img, labels, horizon }
}

/// A single rendered person with its ground truth.
#[derive(Clone, Debug)]
pub struct PersonSample<T> {
    /// Scene with the person painted in.
    pub image: Image<T>,
    /// The same scene without the person.
    pub background: Image<T>,
    pub mask: MaskImage<T>,
    pub pose: BodyPose,
    pub appearance: Appearance,
}

/// Options for [`person_crop`].
#[derive(Clone, Copy, Debug)]
pub struct CropSpec {
    pub size: usize,
    /// Range of person height as a fraction of the crop size.
    pub height_frac: (f64, f64),
    /// Maximum horizontal offset of the person from the crop centre, as a fraction of size.
    pub jitter: f64,
    pub brightness: (f64, f64),
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { size: 64, height_frac: (0.78, 0.92), jitter: 0.06, brightness: (0.5, 1.1) }
    }
}

/// A `size x size` crop around one standing person over a street background.
pub fn person_crop<T: Scalar, R: Rng + ?Sized>(rng: &mut R, spec: &CropSpec) -> PersonSample<T> {
    let s = spec.size;
    let brightness = rng.random_range(spec.brightness.0..=spec.brightness.1);
    let bg = street::<T, _>(rng, s, s, brightness).image;
    let height = s as f64 * rng.random_range(spec.height_frac.0..=spec.height_frac.1);
    let cx = s as f64 / 2.0 + s as f64 * rng.random_range(-spec.jitter..=spec.jitter);
    let foot_y = s as f64 - (s as f64 - height) / 2.0 + rng.random_range(-0.03..0.03) * s as f64;
    let view = View::random(rng);
    let pose = random_pose(rng, view, cx, foot_y, height);
    let appearance = Appearance::random(rng).darkened(brightness.min(1.0));
    let mut image = bg.clone();
    let mask = paint_person(rng, &mut image, &pose, &appearance);
    PersonSample { image, background: bg, mask, pose, appearance }
}

/// A person-free window from a street scene.
pub fn background_window<T: Scalar, R: Rng + ?Sized>(rng: &mut R, size: usize, brightness: (f64, f64)) -> Image<T> {
    let b = rng.random_range(brightness.0..=brightness.1);
    street(rng, size, size, b).image
}

/// Annotated keypoints for a batch of procedural people (the pose model's
/// training corpus).
pub fn keypoint_corpus<R: Rng + ?Sized>(rng: &mut R, n: usize, canvas: usize) -> Vec<Skeleton<f64>> {
    (0..n)
        .map(|_| {
            let h = canvas as f64 * rng.random_range(0.6..0.9);
            let view = View::random(rng);
            let pose = random_pose(rng, view, canvas as f64 / 2.0, canvas as f64 * 0.95, h);
            pose.skeleton((canvas, canvas))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::normalize_skeleton;

    #[test]
    fn poses_are_annotatable() {
        let mut rng = crate::rng::seeded(3);
        for _ in 0..200 {
            let view = View::random(&mut rng);
            let p = random_pose(&mut rng, view, 32.0, 60.0, 50.0);
            let s = p.skeleton::<f64>((64, 64));
            assert!(s.passes_filter());
            normalize_skeleton(&s).unwrap();
            let lowest = p.joints[15][1].max(p.joints[16][1]);
            assert!((lowest - (60.0 - 2.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_covers_visible_joints_and_is_person_sized() {
        let mut rng = crate::rng::seeded(5);
        for _ in 0..50 {
            let s = person_crop::<f64, _>(&mut rng, &CropSpec::default());
            let area = s.mask.area();
            assert!(area > 200.0 && area < 2000.0, "area {area}");
            for k in [Keypoint::LeftShoulder, Keypoint::RightHip, Keypoint::Nose] {
                let [x, y] = s.pose.joints[k.index()];
                assert_eq!(s.mask.get(y.round() as usize, x.round() as usize), 1.0);
            }
            for i in 0..s.mask.data().len() {
                if s.mask.data()[i] == 0.0 {
                    for c in 0..3 {
                        assert_eq!(s.image.data()[c * 4096 + i], s.background.data()[c * 4096 + i]);
                    }
                }
            }
        }
    }

    #[test]
    fn street_labels_cover_walkable_bands() {
        let mut rng = crate::rng::seeded(9);
        let st = street::<f64, _>(&mut rng, 64, 128, 1.0);
        assert!(st.labels.iter().any(|l| l.walkable()));
        assert!(st.labels[..128 * st.horizon].iter().all(|&l| l == Label::Other));
        assert!(st.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

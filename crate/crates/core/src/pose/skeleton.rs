use std::io::BufRead;

use dummynet_nn::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 17;

/// COCO keypoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Keypoint {
    Nose,
    LeftEye,
    RightEye,
    LeftEar,
    RightEar,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
}

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

impl Keypoint {
    pub const ALL: [Keypoint; NUM_KEYPOINTS] = [
        Keypoint::Nose,
        Keypoint::LeftEye,
        Keypoint::RightEye,
        Keypoint::LeftEar,
        Keypoint::RightEar,
        Keypoint::LeftShoulder,
        Keypoint::RightShoulder,
        Keypoint::LeftElbow,
        Keypoint::RightElbow,
        Keypoint::LeftWrist,
        Keypoint::RightWrist,
        Keypoint::LeftHip,
        Keypoint::RightHip,
        Keypoint::LeftKnee,
        Keypoint::RightKnee,
        Keypoint::LeftAnkle,
        Keypoint::RightAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        KEYPOINT_NAMES[self as usize]
    }

    /// The same joint on the other body side (identity for the nose).
    pub fn mirrored(self) -> Keypoint {
        use Keypoint::*;
        match self {
            Nose => Nose,
            LeftEye => RightEye,
            RightEye => LeftEye,
            LeftEar => RightEar,
            RightEar => LeftEar,
            LeftShoulder => RightShoulder,
            RightShoulder => LeftShoulder,
            LeftElbow => RightElbow,
            RightElbow => LeftElbow,
            LeftWrist => RightWrist,
            RightWrist => LeftWrist,
            LeftHip => RightHip,
            RightHip => LeftHip,
            LeftKnee => RightKnee,
            RightKnee => LeftKnee,
            LeftAnkle => RightAnkle,
            RightAnkle => LeftAnkle,
        }
    }
}

/// Limb segments used for drawing skeletons and analytic body masks.
pub const LIMBS: [(Keypoint, Keypoint); 12] = [
    (Keypoint::LeftShoulder, Keypoint::RightShoulder),
    (Keypoint::LeftShoulder, Keypoint::LeftElbow),
    (Keypoint::LeftElbow, Keypoint::LeftWrist),
    (Keypoint::RightShoulder, Keypoint::RightElbow),
    (Keypoint::RightElbow, Keypoint::RightWrist),
    (Keypoint::LeftShoulder, Keypoint::LeftHip),
    (Keypoint::RightShoulder, Keypoint::RightHip),
    (Keypoint::LeftHip, Keypoint::RightHip),
    (Keypoint::LeftHip, Keypoint::LeftKnee),
    (Keypoint::LeftKnee, Keypoint::LeftAnkle),
    (Keypoint::RightHip, Keypoint::RightKnee),
    (Keypoint::RightKnee, Keypoint::RightAnkle),
];

/// 17 COCO keypoints in pixel coordinates (`x` right, `y` down) of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton<T> {
    points: [[T; 2]; NUM_KEYPOINTS],
    visible: [bool; NUM_KEYPOINTS],
    /// `(height, width)` in pixels.
    image_size: (usize, usize),
}

impl<T: Scalar> Skeleton<T> {
    /// Validates that visible keypoints are finite and inside the image.
    pub fn new(points: [[T; 2]; NUM_KEYPOINTS], visible: [bool; NUM_KEYPOINTS], image_size: (usize, usize)) -> Result<Self> {
        let (h, w) = image_size;
        for k in 0..NUM_KEYPOINTS {
            if !visible[k] {
                continue;
            }
            let [x, y] = points[k];
            let inside = x.is_finite()
                && y.is_finite()
                && x >= T::zero()
                && y >= T::zero()
                && x < T::lit(w as f64)
                && y < T::lit(h as f64);
            if !inside {
                return Err(Error::InvalidInput(format!(
                    "visible keypoint {} at ({x}, {y}) outside {h}x{w} image",
                    KEYPOINT_NAMES[k]
                )));
            }
        }
        Ok(Self { points, visible, image_size })
    }

    /// Like [`Skeleton::new`] but marks keypoints outside the image invisible.
    pub fn clipped(points: [[T; 2]; NUM_KEYPOINTS], visible: [bool; NUM_KEYPOINTS], image_size: (usize, usize)) -> Self {
        let (h, w) = image_size;
        let mut vis = visible;
        for k in 0..NUM_KEYPOINTS {
            let [x, y] = points[k];
            let inside = x.is_finite()
                && y.is_finite()
                && x >= T::zero()
                && y >= T::zero()
                && x < T::lit(w as f64)
                && y < T::lit(h as f64);
            vis[k] &= inside;
        }
        Self { points, visible: vis, image_size }
    }

    pub fn point(&self, k: Keypoint) -> [T; 2] {
        self.points[k.index()]
    }

    pub fn is_visible(&self, k: Keypoint) -> bool {
        self.visible[k.index()]
    }

    pub fn points(&self) -> &[[T; 2]; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn visibility(&self) -> &[bool; NUM_KEYPOINTS] {
        &self.visible
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn visible_points(&self) -> impl Iterator<Item = [T; 2]> + '_ {
        self.points.iter().zip(&self.visible).filter(|(_, &v)| v).map(|(p, _)| *p)
    }

    /// Training-sample filter: at least 6 visible keypoints including at
    /// least one hip and one shoulder.
    pub fn passes_filter(&self) -> bool {
        use Keypoint::*;
        self.visible_count() >= 6
            && (self.is_visible(LeftHip) || self.is_visible(RightHip))
            && (self.is_visible(LeftShoulder) || self.is_visible(RightShoulder))
    }

    /// Uniform scale about the origin followed by a translation; image size scales too.
    pub fn transformed(&self, scale: T, dx: T, dy: T) -> Self {
        let mut points = self.points;
        for p in &mut points {
            p[0] = p[0] * scale + dx;
            p[1] = p[1] * scale + dy;
        }
        let s = scale.as_f64();
        let size = (
            ((self.image_size.0 as f64) * s + dy.as_f64()).ceil().max(1.0) as usize,
            ((self.image_size.1 as f64) * s + dx.as_f64()).ceil().max(1.0) as usize,
        );
        Self::clipped(points, self.visible, size)
    }

    /// Binary visibility vector as `0/1` values.
    pub fn visibility_vector(&self) -> [T; NUM_KEYPOINTS] {
        let mut v = [T::zero(); NUM_KEYPOINTS];
        for k in 0..NUM_KEYPOINTS {
            if self.visible[k] {
                v[k] = T::one();
            }
        }
        v
    }
}

/// One record of the keypoint JSON-lines input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub image_id: serde_json::Value,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    /// 51 numbers: `(x, y, v)` per keypoint in COCO order; `v > 0` is visible.
    pub keypoints: Vec<f64>,
    /// `[height, width]` of the source image, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[usize; 2]>,
}

impl KeypointRecord {
    pub fn from_skeleton<T: Scalar>(image_id: serde_json::Value, s: &Skeleton<T>) -> Self {
        let mut kp = Vec::with_capacity(3 * NUM_KEYPOINTS);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for k in 0..NUM_KEYPOINTS {
            let [x, y] = s.points[k];
            let (x, y) = (x.as_f64(), y.as_f64());
            let v = if s.visible[k] { 2.0 } else { 0.0 };
            if s.visible[k] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                kp.extend_from_slice(&[x, y, v]);
            } else {
                kp.extend_from_slice(&[0.0, 0.0, 0.0]);
            }
        }
        let bbox = if x0 <= x1 { [x0, y0, x1 - x0, y1 - y0] } else { [0.0; 4] };
        Self { image_id, bbox, keypoints: kp, image_size: Some([s.image_size.0, s.image_size.1]) }
    }

    pub fn to_skeleton<T: Scalar>(&self) -> Result<Skeleton<T>> {
        if self.keypoints.len() != 3 * NUM_KEYPOINTS {
            return Err(Error::InvalidInput(format!(
                "keypoint record {} has {} numbers, expected 51",
                self.image_id,
                self.keypoints.len()
            )));
        }
        let mut points = [[T::zero(); 2]; NUM_KEYPOINTS];
        let mut visible = [false; NUM_KEYPOINTS];
        let (mut max_x, mut max_y) = (self.bbox[0] + self.bbox[2], self.bbox[1] + self.bbox[3]);
        for k in 0..NUM_KEYPOINTS {
            let (x, y, v) = (self.keypoints[3 * k], self.keypoints[3 * k + 1], self.keypoints[3 * k + 2]);
            points[k] = [T::lit(x), T::lit(y)];
            visible[k] = v > 0.0;
            if visible[k] {
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
        let size = match self.image_size {
            Some([h, w]) => (h, w),
            None => (max_y.floor() as usize + 1, max_x.floor() as usize + 1),
        };
        Skeleton::new(points, visible, size)
    }
}

/// Parses keypoint JSON lines, skipping blank lines.
pub fn read_keypoint_jsonl(r: impl BufRead) -> Result<Vec<KeypointRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<keypoints line {}>", i + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_visible() -> Skeleton<f64> {
        let mut pts = [[0.0; 2]; NUM_KEYPOINTS];
        for (k, p) in pts.iter_mut().enumerate() {
            *p = [10.0 + k as f64, 5.0 + 2.0 * k as f64];
        }
        Skeleton::new(pts, [true; NUM_KEYPOINTS], (64, 64)).unwrap()
    }

    #[test]
    fn filter_rule() {
        assert!(all_visible().passes_filter());
        let mut vis = [false; NUM_KEYPOINTS];
        for k in [Keypoint::LeftHip, Keypoint::RightShoulder, Keypoint::Nose, Keypoint::LeftEye, Keypoint::LeftKnee, Keypoint::LeftAnkle] {
            vis[k.index()] = true;
        }
        let s = Skeleton::new(*all_visible().points(), vis, (64, 64)).unwrap();
        assert_eq!(s.visible_count(), 6);
        assert!(s.passes_filter());
        let mut vis = [true; NUM_KEYPOINTS];
        vis[Keypoint::LeftHip.index()] = false;
        vis[Keypoint::RightHip.index()] = false;
        for k in 0..5 {
            vis[k] = false;
        }
        let s = Skeleton::new(*all_visible().points(), vis, (64, 64)).unwrap();
        assert_eq!(s.visible_count(), 10);
        assert!(!s.passes_filter());
    }

    #[test]
    fn visible_keypoints_must_lie_inside_image() {
        let mut pts = *all_visible().points();
        pts[3] = [64.0, 1.0];
        assert!(Skeleton::new(pts, [true; NUM_KEYPOINTS], (64, 64)).is_err());
        let mut vis = [true; NUM_KEYPOINTS];
        vis[3] = false;
        assert!(Skeleton::new(pts, vis, (64, 64)).is_ok());
        assert!(!Skeleton::clipped(pts, [true; NUM_KEYPOINTS], (64, 64)).is_visible(Keypoint::LeftEar));
    }

    #[test]
    fn jsonl_round_trip() {
        let s = all_visible();
        let rec = KeypointRecord::from_skeleton(serde_json::json!("img-1"), &s);
        let line = serde_json::to_string(&rec).unwrap();
        let parsed = read_keypoint_jsonl(format!("{line}\n\n{line}\n").as_bytes()).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].to_skeleton::<f64>().unwrap(), s);
        let bad = KeypointRecord { keypoints: vec![0.0; 50], ..rec };
        assert!(bad.to_skeleton::<f64>().is_err());
    }
}

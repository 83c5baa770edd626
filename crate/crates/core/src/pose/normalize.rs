use dummynet_nn::Scalar;

use super::skeleton::{Keypoint, Skeleton, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Ratio of standing body height (feet to crown) to torso height.
pub const BODY_TO_TORSO: f64 = 10.0 / 3.0;
/// Height of the ankles above the ground, as a fraction of body height.
pub const ANKLE_ABOVE_GROUND: f64 = 0.05;
/// Height of the torso centre above the ground, as a fraction of body height.
pub const TORSO_CENTER_ABOVE_GROUND: f64 = 0.65;

/// Torso-centred, torso-height-scaled pose: 17 x values then 17 y values.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSkeleton<T> {
    pub coords: [T; 2 * NUM_KEYPOINTS],
    pub visibility: [bool; NUM_KEYPOINTS],
}

impl<T: Scalar> NormalizedSkeleton<T> {
    pub fn point(&self, k: usize) -> [T; 2] {
        [self.coords[k], self.coords[NUM_KEYPOINTS + k]]
    }

    pub fn cast<U: Scalar>(&self) -> NormalizedSkeleton<U> {
        NormalizedSkeleton { coords: self.coords.map(|v| U::lit(v.as_f64())), visibility: self.visibility }
    }

    /// Places the pose in a `canvas` so the person is `height` pixels tall and
    /// stands on `(center_x, foot_y)`. The lowest visible ankle is put just above
    /// `foot_y`; without visible ankles the torso centre is anchored instead.
    pub fn place(&self, canvas: (usize, usize), center_x: T, foot_y: T, height: T) -> Skeleton<T> {
        let torso = height / T::lit(BODY_TO_TORSO);
        let ankles = [Keypoint::LeftAnkle.index(), Keypoint::RightAnkle.index()];
        let lowest = ankles.iter().filter(|&&k| self.visibility[k]).map(|&k| self.coords[NUM_KEYPOINTS + k]).fold(None, |m: Option<T>, y| {
            Some(match m {
                Some(m) if m >= y => m,
                _ => y,
            })
        });
        let oy = match lowest {
            Some(y) => foot_y - height * T::lit(ANKLE_ABOVE_GROUND) - y * torso,
            None => foot_y - height * T::lit(TORSO_CENTER_ABOVE_GROUND),
        };
        let mut points = [[T::zero(); 2]; NUM_KEYPOINTS];
        for (k, p) in points.iter_mut().enumerate() {
            *p = [center_x + self.coords[k] * torso, oy + self.coords[NUM_KEYPOINTS + k] * torso];
        }
        Skeleton::clipped(points, self.visibility, canvas)
    }
}

fn side_center<T: Scalar>(s: &Skeleton<T>, a: Keypoint, b: Keypoint) -> Option<[T; 2]> {
    match (s.is_visible(a), s.is_visible(b)) {
        (true, true) => {
            let (p, q) = (s.point(a), s.point(b));
            let half = T::lit(0.5);
            Some([(p[0] + q[0]) * half, (p[1] + q[1]) * half])
        }
        (true, false) => Some(s.point(a)),
        (false, true) => Some(s.point(b)),
        (false, false) => None,
    }
}

/// Shoulder centre and hip centre; a missing side falls back to the visible one.
pub fn torso_anchors<T: Scalar>(s: &Skeleton<T>) -> Result<([T; 2], [T; 2])> {
    let shoulders = side_center(s, Keypoint::LeftShoulder, Keypoint::RightShoulder)
        .ok_or_else(|| Error::DegeneratePose("no visible shoulder".into()))?;
    let hips =
        side_center(s, Keypoint::LeftHip, Keypoint::RightHip).ok_or_else(|| Error::DegeneratePose("no visible hip".into()))?;
    Ok((shoulders, hips))
}

/// Subtracts the torso centre and divides by the torso height. Invisible
/// keypoints are stored at the origin.
pub fn normalize_skeleton<T: Scalar>(s: &Skeleton<T>) -> Result<NormalizedSkeleton<T>> {
    let (sh, hp) = torso_anchors(s)?;
    let half = T::lit(0.5);
    let center = [(sh[0] + hp[0]) * half, (sh[1] + hp[1]) * half];
    let height = ((sh[0] - hp[0]).powi(2) + (sh[1] - hp[1]).powi(2)).sqrt();
    let scale = center[0].abs() + center[1].abs() + T::one();
    if !(height > T::epsilon() * scale) {
        return Err(Error::DegeneratePose("shoulder centre and hip centre coincide".into()));
    }
    let mut coords = [T::zero(); 2 * NUM_KEYPOINTS];
    for k in 0..NUM_KEYPOINTS {
        if s.visibility()[k] {
            let [x, y] = s.points()[k];
            coords[k] = (x - center[0]) / height;
            coords[NUM_KEYPOINTS + k] = (y - center[1]) / height;
        }
    }
    Ok(NormalizedSkeleton { coords, visibility: *s.visibility() })
}

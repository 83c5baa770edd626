use dummynet_nn::{Array, Scalar};

use super::skeleton::{Skeleton, NUM_KEYPOINTS};

/// Default Gaussian width at a 64 pixel working resolution.
pub const DEFAULT_SIGMA_AT_64: f64 = 2.0;

/// One unit-peak Gaussian channel per keypoint, `[17, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointHeatmaps<T> {
    pub tensor: Array<T>,
    pub sigma: T,
}

impl<T: Scalar> KeypointHeatmaps<T> {
    pub fn size(&self) -> (usize, usize) {
        (self.tensor.shape()[1], self.tensor.shape()[2])
    }

    pub fn channel(&self, k: usize) -> &[T] {
        let (h, w) = self.size();
        &self.tensor.data()[k * h * w..(k + 1) * h * w]
    }

    /// Zeroes one keypoint channel.
    pub fn without_channel(&self, k: usize) -> Self {
        let (h, w) = self.size();
        let mut t = self.tensor.clone();
        t.data_mut()[k * h * w..(k + 1) * h * w].iter_mut().for_each(|v| *v = T::zero());
        Self { tensor: t, sigma: self.sigma }
    }
}

/// Sigma proportional to the canvas height, `DEFAULT_SIGMA_AT_64` at 64 pixels.
pub fn default_sigma(height: usize) -> f64 {
    DEFAULT_SIGMA_AT_64 * height as f64 / 64.0
}

/// Renders heatmaps on the skeleton's own canvas. Pixel `(x, y)` samples the
/// Gaussian at integer coordinates, so a keypoint on a pixel centre peaks at 1.
pub fn render_heatmaps<T: Scalar>(skeleton: &Skeleton<T>, sigma: T) -> KeypointHeatmaps<T> {
    let (h, w) = skeleton.image_size();
    let mut data = vec![T::zero(); NUM_KEYPOINTS * h * w];
    let inv = T::one() / (T::lit(2.0) * sigma * sigma);
    // Beyond 6 sigma the Gaussian is below 1e-15 of the peak.
    let reach = (sigma.as_f64() * 6.0).ceil() as isize + 1;
    for k in 0..NUM_KEYPOINTS {
        if !skeleton.visibility()[k] {
            continue;
        }
        let [kx, ky] = skeleton.points()[k];
        let (cx, cy) = (kx.as_f64().round() as isize, ky.as_f64().round() as isize);
        let plane = &mut data[k * h * w..(k + 1) * h * w];
        for y in (cy - reach).max(0)..(cy + reach + 1).min(h as isize) {
            let dy = T::lit(y as f64) - ky;
            for x in (cx - reach).max(0)..(cx + reach + 1).min(w as isize) {
                let dx = T::lit(x as f64) - kx;
                plane[y as usize * w + x as usize] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    KeypointHeatmaps { tensor: Array::new(&[NUM_KEYPOINTS, h, w], data), sigma }
}

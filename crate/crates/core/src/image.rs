//! Planar images and soft masks with values in `[0, 1]`.

use std::path::Path;

use dummynet_nn::{Array, ResamplePlan, Scalar};

use crate::error::{Error, Result};

/// Channel-major (`C x H x W`) image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: T) -> Self {
        Self { channels, height, width, data: vec![v; channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// `[1, C, H, W]` array.
    pub fn to_array(&self) -> Array<T> {
        Array::new(&[1, self.channels, self.height, self.width], self.data.clone())
    }

    /// Image `i` of an NCHW batch.
    pub fn from_batch(a: &Array<T>, i: usize) -> Self {
        let (_, c, h, w) = a.dims4();
        let n = c * h * w;
        Self { channels: c, height: h, width: w, data: a.data()[i * n..(i + 1) * n].to_vec() }
    }

    pub fn stack(images: &[Image<T>]) -> Result<Array<T>> {
        let first = images.first().ok_or(Error::EmptyDataset)?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if (im.channels, im.height, im.width) != (first.channels, first.height, first.width) {
                return Err(Error::ShapeMismatch("images in a batch differ in size".into()));
            }
            data.extend_from_slice(&im.data);
        }
        Ok(Array::new(&[images.len(), first.channels, first.height, first.width], data))
    }

    /// Bilinear resize to `(height, width)`.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let plan = ResamplePlan::bilinear((self.height, self.width), (height, width));
        let out = plan.apply(&Array::new(&[self.channels, self.height, self.width], self.data.clone()));
        Self { channels: self.channels, height, width, data: out.into_data() }
    }

    /// Area-average downsample (or general box resize) to `(height, width)`.
    pub fn resize_area(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let plan = ResamplePlan::area((self.height, self.width), (height, width));
        let out = plan.apply(&Array::new(&[self.channels, self.height, self.width], self.data.clone()));
        Self { channels: self.channels, height, width, data: out.into_data() }
    }

    /// Crop with zero fill outside the source.
    pub fn crop(&self, y0: isize, x0: isize, height: usize, width: usize) -> Self {
        Self::from_fn(self.channels, height, width, |c, y, x| {
            let (sy, sx) = (y0 + y as isize, x0 + x as isize);
            if sy < 0 || sx < 0 || sy >= self.height as isize || sx >= self.width as isize {
                T::zero()
            } else {
                self.get(c, sy as usize, sx as usize)
            }
        })
    }

    /// Multiplies every channel by the mask (or by `1 - mask` when `invert`).
    pub fn masked(&self, mask: &MaskImage<T>, invert: bool) -> Result<Self> {
        if mask.size() != self.size() {
            return Err(Error::ShapeMismatch(format!("mask {:?} vs image {:?}", mask.size(), self.size())));
        }
        let n = self.height * self.width;
        let mut out = self.clone();
        for c in 0..self.channels {
            for (v, &m) in out.data[c * n..(c + 1) * n].iter_mut().zip(mask.data()) {
                *v *= if invert { T::one() - m } else { m };
            }
        }
        Ok(out)
    }

    pub fn mean_intensity(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.data.iter().copied().sum::<T>() / T::lit(self.data.len() as f64)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).sum()
    }

    /// Writes an 8-bit RGB (3 channels) or grayscale (1 channel) PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: T| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        let n = self.height * self.width;
        match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer matches size")
                    .save(path)?;
            }
            3 => {
                let mut buf = Vec::with_capacity(3 * n);
                for i in 0..n {
                    for c in 0..3 {
                        buf.push(to_u8(self.data[c * n + i]));
                    }
                }
                image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer matches size")
                    .save(path)?;
            }
            c => return Err(Error::ShapeMismatch(format!("cannot write a {c}-channel PNG"))),
        }
        Ok(())
    }

    /// Reads any PNG as an RGB image in `[0, 1]`.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.into_raw();
        Ok(Self::from_fn(3, h, w, |c, y, x| T::lit(raw[(y * w + x) * 3 + c] as f64 / 255.0)))
    }
}

/// Soft foreground mask with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskImage<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> MaskImage<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!("{} values for a {height}x{width} mask", data.len())));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < T::zero() || **v > T::one()) {
            return Err(Error::InvalidInput(format!("mask value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![T::zero(); height * width] }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![T::one(); height * width] }
    }

    pub fn filled(height: usize, width: usize, v: T) -> Result<Self> {
        Self::new(height, width, vec![v; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn to_array(&self) -> Array<T> {
        Array::new(&[1, 1, self.height, self.width], self.data.clone())
    }

    pub fn from_batch(a: &Array<T>, i: usize) -> Result<Self> {
        let (_, c, h, w) = a.dims4();
        if c != 1 {
            return Err(Error::ShapeMismatch(format!("mask batch has {c} channels")));
        }
        Self::new(h, w, a.data()[i * h * w..(i + 1) * h * w].to_vec())
    }

    /// `1 - mask`
    pub fn inverted(&self) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| T::one() - v).collect() }
    }

    /// Sum of mask values.
    pub fn area(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn binarize(&self, threshold: T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v > threshold { T::one() } else { T::zero() }).collect(),
        }
    }

    pub fn resize(&self, height: usize, width: usize) -> Self {
        let plane = Image { channels: 1, height: self.height, width: self.width, data: self.data.clone() };
        let r = plane.resize(height, width);
        Self { height, width, data: r.data.into_iter().map(|v| v.max(T::zero()).min(T::one())).collect() }
    }

    pub fn resize_area(&self, height: usize, width: usize) -> Self {
        let plane = Image { channels: 1, height: self.height, width: self.width, data: self.data.clone() };
        let r = plane.resize_area(height, width);
        Self { height, width, data: r.data.into_iter().map(|v| v.max(T::zero()).min(T::one())).collect() }
    }

    /// Intersection over union of the two masks thresholded at 0.5.
    pub fn iou(&self, other: &Self) -> f64 {
        let half = T::lit(0.5);
        let (mut inter, mut uni) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a > half, b > half);
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// Tight `(x0, y0, x1, y1)` pixel box (inclusive) of values above `threshold`.
    pub fn bounding_box(&self, threshold: T) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) > threshold {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }

    /// 8-bit grayscale PNG, `0..=255` mapping linearly onto `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: Vec<u8> = self.data.iter().map(|v| (v.as_f64() * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer matches size")
            .save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.into_raw().into_iter().map(|v| T::lit(v as f64 / 255.0)).collect();
        Self::new(h, w, data)
    }
}

//! Fixed linear spatial resampling (bilinear, area, nearest) applied
//! independently to every `H x W` plane. Each plan stores its own transpose
//! so the tape can differentiate through it to any order.

use std::rc::Rc;

use crate::{Array, Scalar};

/// Sparse `out_pixels x in_pixels` matrix in CSR form.
#[derive(Debug, Clone)]
struct Csr<T> {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    fn from_rows(rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in rows {
            for (c, w) in row {
                cols.push(c as u32);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols, weights }
    }

    fn transpose(&self, n_cols: usize) -> Self {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n_cols];
        for r in 0..self.offsets.len() - 1 {
            for j in self.offsets[r]..self.offsets[r + 1] {
                rows[self.cols[j] as usize].push((r, self.weights[j]));
            }
        }
        Self::from_rows(rows)
    }
}

#[derive(Debug)]
struct PlanInner<T> {
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    forward: Csr<T>,
    backward: Csr<T>,
}

/// A spatial resampling operator together with its adjoint.
#[derive(Debug, Clone)]
pub struct ResamplePlan<T> {
    inner: Rc<PlanInner<T>>,
    transposed: bool,
}

fn bilinear_taps(out: usize, inp: usize) -> Vec<[(usize, f64); 2]> {
    // half-pixel centres, edge clamped
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            let f = src - i0 as f64;
            [(i0, 1.0 - f), (i1, f)]
        })
        .collect()
}

fn area_taps(out: usize, inp: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < inp {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 1e-12 {
                    taps.push((i, overlap / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

impl<T: Scalar> ResamplePlan<T> {
    fn from_separable(
        in_hw: (usize, usize),
        out_hw: (usize, usize),
        ys: Vec<Vec<(usize, f64)>>,
        xs: Vec<Vec<(usize, f64)>>,
    ) -> Self {
        let mut rows = Vec::with_capacity(out_hw.0 * out_hw.1);
        for ty in &ys {
            for tx in &xs {
                let mut row: Vec<(usize, T)> = Vec::with_capacity(ty.len() * tx.len());
                for &(iy, wy) in ty {
                    for &(ix, wx) in tx {
                        let w = wy * wx;
                        if w == 0.0 {
                            continue;
                        }
                        let c = iy * in_hw.1 + ix;
                        if let Some(e) = row.iter_mut().find(|e| e.0 == c) {
                            e.1 += T::lit(w);
                        } else {
                            row.push((c, T::lit(w)));
                        }
                    }
                }
                rows.push(row);
            }
        }
        let forward = Csr::from_rows(rows);
        let backward = forward.transpose(in_hw.0 * in_hw.1);
        Self { inner: Rc::new(PlanInner { in_hw, out_hw, forward, backward }), transposed: false }
    }

    /// Bilinear interpolation with half-pixel centres and clamped borders.
    pub fn bilinear(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        assert!(in_hw.0 > 0 && in_hw.1 > 0 && out_hw.0 > 0 && out_hw.1 > 0, "empty resample");
        let ys = bilinear_taps(out_hw.0, in_hw.0).into_iter().map(|t| t.to_vec()).collect();
        let xs = bilinear_taps(out_hw.1, in_hw.1).into_iter().map(|t| t.to_vec()).collect();
        Self::from_separable(in_hw, out_hw, ys, xs)
    }

    /// Area averaging (box filter weighted by pixel overlap).
    pub fn area(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        assert!(in_hw.0 > 0 && in_hw.1 > 0 && out_hw.0 > 0 && out_hw.1 > 0, "empty resample");
        Self::from_separable(in_hw, out_hw, area_taps(out_hw.0, in_hw.0), area_taps(out_hw.1, in_hw.1))
    }

    pub fn nearest(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        assert!(in_hw.0 > 0 && in_hw.1 > 0 && out_hw.0 > 0 && out_hw.1 > 0, "empty resample");
        let pick = |out: usize, inp: usize| -> Vec<Vec<(usize, f64)>> {
            (0..out).map(|o| vec![(((o * inp) / out).min(inp - 1), 1.0)]).collect()
        };
        Self::from_separable(in_hw, out_hw, pick(out_hw.0, in_hw.0), pick(out_hw.1, in_hw.1))
    }

    /// The adjoint operator.
    pub fn transpose(&self) -> Self {
        Self { inner: Rc::clone(&self.inner), transposed: !self.transposed }
    }

    pub fn in_hw(&self) -> (usize, usize) {
        if self.transposed { self.inner.out_hw } else { self.inner.in_hw }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        if self.transposed { self.inner.in_hw } else { self.inner.out_hw }
    }

    /// Applies the plan to every trailing `H x W` plane of `x`.
    pub fn apply(&self, x: &Array<T>) -> Array<T> {
        let s = x.shape();
        assert!(s.len() >= 2, "resample needs at least two axes");
        let (ih, iw) = self.in_hw();
        let (oh, ow) = self.out_hw();
        assert_eq!((s[s.len() - 2], s[s.len() - 1]), (ih, iw), "resample input size mismatch");
        let csr = if self.transposed { &self.inner.backward } else { &self.inner.forward };
        let planes = x.len() / (ih * iw);
        let mut out = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            let src = &x.data()[p * ih * iw..(p + 1) * ih * iw];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (r, d) in dst.iter_mut().enumerate() {
                let mut acc = T::zero();
                for j in csr.offsets[r]..csr.offsets[r + 1] {
                    acc += csr.weights[j] * src[csr.cols[j] as usize];
                }
                *d = acc;
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Array::new(&shape, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_downsample_averages_blocks() {
        let x = Array::<f64>::new(&[1, 1, 2, 4], vec![1., 2., 3., 4., 5., 6., 7., 8.]);
        let y = ResamplePlan::area((2, 4), (1, 2)).apply(&x);
        assert_eq!(y.data(), &[3.5, 5.5]);
    }

    #[test]
    fn bilinear_preserves_constants_and_adjoint_identity() {
        let plan = ResamplePlan::<f64>::bilinear((5, 7), (11, 3));
        let ones = Array::ones(&[2, 5, 7]);
        for v in plan.apply(&ones).data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let x = Array::new(&[1, 5, 7], (0..35).map(|i| (i as f64 * 0.3).cos()).collect());
        let g = Array::new(&[1, 11, 3], (0..33).map(|i| (i as f64 * 0.7).sin()).collect());
        let lhs: f64 = plan.apply(&x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = plan.transpose().apply(&g).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn nearest_upsample_duplicates() {
        let x = Array::<f32>::new(&[1, 2, 2], vec![1., 2., 3., 4.]);
        let y = ResamplePlan::nearest((2, 2), (4, 4)).apply(&x);
        assert_eq!(&y.data()[..4], &[1., 1., 2., 2.]);
    }
}

//! Forward kernels on plain arrays. The tape wraps these and expresses every
//! derivative through the same set of kernels.

use crate::array::numel;
use crate::scalar::{gemm, MatRef};
use crate::{Array, Scalar};

/// Spatial geometry of a 2-D convolution, fixed at forward time so that its
/// adjoints reproduce the exact input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_h: usize, in_w: usize, k_h: usize, k_w: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        assert!(
            in_h + 2 * pad >= k_h && in_w + 2 * pad >= k_w,
            "kernel {k_h}x{k_w} larger than padded input {in_h}x{in_w} (pad {pad})"
        );
        let out_h = (in_h + 2 * pad - k_h) / stride + 1;
        let out_w = (in_w + 2 * pad - k_w) / stride + 1;
        Self { in_h, in_w, k_h, k_w, stride, pad, out_h, out_w }
    }

    fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], cin: usize, g: &ConvGeom, col: &mut [T]) {
    let p = g.out_h * g.out_w;
    for ci in 0..cin {
        let plane = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.k_h {
            for kx in 0..g.k_w {
                let row = (ci * g.k_h + ky) * g.k_w + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.in_w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], cin: usize, g: &ConvGeom, x: &mut [T]) {
    let p = g.out_h * g.out_w;
    for ci in 0..cin {
        let plane = &mut x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.k_h {
            for kx in 0..g.k_w {
                let row = (ci * g.k_h + ky) * g.k_w + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            drow[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[n, co] = sum_{ci,k} w[co, ci, k] * x[n, ci, shifted]`, no bias.
pub fn conv2d<T: Scalar>(x: &Array<T>, w: &Array<T>, g: &ConvGeom) -> Array<T> {
    let (n, cin, h, wd) = x.dims4();
    let (cout, wcin, kh, kw) = w.dims4();
    assert_eq!((h, wd), (g.in_h, g.in_w), "conv2d input size does not match geometry");
    assert_eq!((wcin, kh, kw), (cin, g.k_h, g.k_w), "conv2d weight shape mismatch");
    let k = cin * kh * kw;
    let p = g.out_h * g.out_w;
    let mut out = vec![T::zero(); n * cout * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..n {
        let xb = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
        let colref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, cin, g, &mut col);
            &col
        };
        gemm(
            T::one(),
            MatRef::row_major(w.data(), cout, k),
            MatRef::row_major(colref, k, p),
            T::zero(),
            &mut out[b * cout * p..(b + 1) * cout * p],
        );
    }
    Array::new(&[n, cout, g.out_h, g.out_w], out)
}

/// Adjoint of [`conv2d`] with respect to its input.
pub fn conv_transpose2d<T: Scalar>(gy: &Array<T>, w: &Array<T>, g: &ConvGeom) -> Array<T> {
    let (n, cout, oh, ow) = gy.dims4();
    let (wcout, cin, kh, kw) = w.dims4();
    assert_eq!((oh, ow), (g.out_h, g.out_w), "conv_transpose2d size does not match geometry");
    assert_eq!((wcout, kh, kw), (cout, g.k_h, g.k_w), "conv_transpose2d weight shape mismatch");
    let k = cin * kh * kw;
    let p = oh * ow;
    let in_sz = cin * g.in_h * g.in_w;
    let mut out = vec![T::zero(); n * in_sz];
    let mut col = vec![T::zero(); k * p];
    for b in 0..n {
        let gb = &gy.data()[b * cout * p..(b + 1) * cout * p];
        let ob = &mut out[b * in_sz..(b + 1) * in_sz];
        if g.is_pointwise() {
            gemm(T::one(), MatRef::transposed(w.data(), cout, k), MatRef::row_major(gb, cout, p), T::zero(), ob);
        } else {
            gemm(T::one(), MatRef::transposed(w.data(), cout, k), MatRef::row_major(gb, cout, p), T::zero(), &mut col);
            col2im(&col, cin, g, ob);
        }
    }
    Array::new(&[n, cin, g.in_h, g.in_w], out)
}

/// Adjoint of [`conv2d`] with respect to its weights: `sum_n gy_n * col(x_n)^T`.
pub fn conv_weight_grad<T: Scalar>(x: &Array<T>, gy: &Array<T>, g: &ConvGeom) -> Array<T> {
    let (n, cin, h, wd) = x.dims4();
    let (gn, cout, oh, ow) = gy.dims4();
    assert_eq!(n, gn, "conv_weight_grad batch mismatch");
    assert_eq!((h, wd, oh, ow), (g.in_h, g.in_w, g.out_h, g.out_w), "conv_weight_grad geometry mismatch");
    let k = cin * g.k_h * g.k_w;
    let p = oh * ow;
    let mut out = vec![T::zero(); cout * k];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..n {
        let xb = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
        let colref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, cin, g, &mut col);
            &col
        };
        let gb = &gy.data()[b * cout * p..(b + 1) * cout * p];
        gemm(T::one(), MatRef::row_major(gb, cout, p), MatRef::transposed(colref, k, p), T::one(), &mut out);
    }
    Array::new(&[cout, cin, g.k_h, g.k_w], out)
}

pub fn matmul<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Array<T> {
    assert!(a.shape().len() == 2 && b.shape().len() == 2, "matmul expects rank-2 operands");
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dimension mismatch");
    let mut out = vec![T::zero(); m * n];
    gemm(T::one(), MatRef::row_major(a.data(), m, k), MatRef::row_major(b.data(), k, n), T::zero(), &mut out);
    Array::new(&[m, n], out)
}

pub fn transpose2<T: Scalar>(a: &Array<T>) -> Array<T> {
    assert_eq!(a.shape().len(), 2, "transpose expects rank-2 operand");
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Array::new(&[c, r], out)
}

/// Numpy-style broadcast result shape.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `small` viewed inside `big`, zero on broadcast axes.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    assert!(small.len() <= big.len(), "cannot broadcast {small:?} to {big:?}");
    let off = big.len() - small.len();
    let mut strides = vec![0; big.len()];
    let mut acc = 1;
    for i in (0..small.len()).rev() {
        let (s, b) = (small[i], big[i + off]);
        assert!(s == b || s == 1, "cannot broadcast {small:?} to {big:?}");
        strides[i + off] = if s == 1 && b != 1 { 0 } else { acc };
        acc *= s;
    }
    strides
}

/// Visits every multi-index of `big`, yielding (flat big index, flat small offset).
fn for_each_broadcast(small: &[usize], big: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(small, big);
    let total = numel(big);
    if total == 0 {
        return;
    }
    let r = big.len();
    if r == 0 {
        f(0, 0);
        return;
    }
    let inner = big[r - 1];
    let inner_stride = strides[r - 1];
    let mut idx = vec![0usize; r];
    let mut base = 0usize;
    let mut flat = 0usize;
    loop {
        for j in 0..inner {
            f(flat + j, base + j * inner_stride);
        }
        flat += inner;
        // carry into the outer axes
        let mut ax = r - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < big[ax] {
                break;
            }
            base -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub fn broadcast_to<T: Scalar>(a: &Array<T>, shape: &[usize]) -> Array<T> {
    let mut out = vec![T::zero(); numel(shape)];
    let src = a.data();
    for_each_broadcast(a.shape(), shape, |i, j| out[i] = src[j]);
    Array::new(shape, out)
}

/// Sums `a` down to `shape`, the inverse of [`broadcast_to`].
pub fn sum_to<T: Scalar>(a: &Array<T>, shape: &[usize]) -> Array<T> {
    let mut out = vec![T::zero(); numel(shape)];
    let src = a.data();
    for_each_broadcast(shape, a.shape(), |i, j| out[j] += src[i]);
    Array::new(shape, out)
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

pub fn concat<T: Scalar>(parts: &[&Array<T>], axis: usize) -> Array<T> {
    assert!(!parts.is_empty(), "concat of zero arrays");
    let first = parts[0].shape();
    assert!(axis < first.len(), "concat axis out of range");
    let mut shape = first.to_vec();
    shape[axis] = 0;
    for p in parts {
        let s = p.shape();
        assert_eq!(s.len(), first.len(), "concat rank mismatch");
        for (d, (&x, &y)) in s.iter().zip(first).enumerate() {
            assert!(d == axis || x == y, "concat shape mismatch {s:?} vs {first:?}");
        }
        shape[axis] += s[axis];
    }
    let (outer, inner) = outer_inner(&shape, axis);
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let blk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * blk..(o + 1) * blk]);
        }
    }
    Array::new(&shape, out)
}

pub fn narrow<T: Scalar>(a: &Array<T>, axis: usize, start: usize, len: usize) -> Array<T> {
    let s = a.shape();
    assert!(start + len <= s[axis], "narrow out of range");
    let (outer, inner) = outer_inner(s, axis);
    let mut shape = s.to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * s[axis] + start) * inner;
        out.extend_from_slice(&a.data()[base..base + len * inner]);
    }
    Array::new(&shape, out)
}

/// Places `a` at offset `start` along `axis` inside zeros of length `full` on that axis.
pub fn embed<T: Scalar>(a: &Array<T>, axis: usize, start: usize, full: usize) -> Array<T> {
    let s = a.shape();
    let len = s[axis];
    assert!(start + len <= full, "embed out of range");
    let (outer, inner) = outer_inner(s, axis);
    let mut shape = s.to_vec();
    shape[axis] = full;
    let mut out = vec![T::zero(); numel(&shape)];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&a.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Array::new(&shape, out)
}

pub fn gather<T: Scalar>(a: &Array<T>, idx: &[usize], shape: &[usize]) -> Array<T> {
    assert_eq!(idx.len(), numel(shape), "gather index count mismatch");
    Array::new(shape, idx.iter().map(|&i| a.data()[i]).collect())
}

pub fn scatter_add<T: Scalar>(a: &Array<T>, idx: &[usize], shape: &[usize]) -> Array<T> {
    assert_eq!(idx.len(), a.len(), "scatter index count mismatch");
    let mut out = vec![T::zero(); numel(shape)];
    for (&i, &v) in idx.iter().zip(a.data()) {
        out[i] += v;
    }
    Array::new(shape, out)
}

/// Indices of the 2x2/stride-2 max-pooling winners (first maximum wins ties).
pub fn max_pool2_indices<T: Scalar>(a: &Array<T>) -> (Vec<usize>, [usize; 4]) {
    let (n, c, h, w) = a.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    let d = a.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if d[j] > d[best] {
                        best = j;
                    }
                }
                idx.push(best);
            }
        }
    }
    (idx, [n, c, oh, ow])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Array<f64>, w: &Array<f64>, g: &ConvGeom) -> Array<f64> {
        let (n, cin, h, wd) = x.dims4();
        let (cout, _, kh, kw) = w.dims4();
        let mut out = Array::zeros(&[n, cout, g.out_h, g.out_w]);
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.data()[((b * cin + ci) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * cout + co) * g.out_h + oy) * g.out_w + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], k: f64) -> Array<f64> {
        let n = numel(shape);
        Array::new(shape, (0..n).map(|i| ((i as f64) * k).sin()).collect())
    }

    #[test]
    fn conv_matches_naive_for_strides_and_padding() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (2, 0, 4), (1, 0, 1), (2, 1, 4)] {
            let x = ramp(&[2, 3, 7, 6], 0.37);
            let w = ramp(&[4, 3, k, k], 0.91);
            let g = ConvGeom::new(7, 6, k, k, stride, pad);
            let y = conv2d(&x, &w, &g);
            let r = naive_conv(&x, &w, &g);
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_adjoints_satisfy_inner_product_identity() {
        // <conv(x, w), gy> == <x, conv_t(gy, w)> == <w, wgrad(x, gy)>
        let x = ramp(&[2, 3, 9, 8], 0.13);
        let w = ramp(&[5, 3, 3, 3], 0.71);
        let g = ConvGeom::new(9, 8, 3, 3, 2, 1);
        let gy = ramp(&[2, 5, g.out_h, g.out_w], 0.29);
        let y = conv2d(&x, &w, &g);
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
        let gx = conv_transpose2d(&gy, &w, &g);
        let mid: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        let gw = conv_weight_grad(&x, &gy, &g);
        let rhs: f64 = w.data().iter().zip(gw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - mid).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn broadcast_and_sum_to_are_adjoint() {
        let a = ramp(&[3, 1, 2], 0.5);
        let big = [4, 3, 5, 2];
        let b = broadcast_to(&a, &big);
        assert_eq!(b.shape(), &big);
        let g = ramp(&big, 0.21);
        let lhs: f64 = b.data().iter().zip(g.data()).map(|(x, y)| x * y).sum();
        let s = sum_to(&g, a.shape());
        let rhs: f64 = a.data().iter().zip(s.data()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert_eq!(broadcast_shape(&[3, 1], &[1, 4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[3, 2], &[4]), None);
    }

    #[test]
    fn concat_narrow_embed_round_trip() {
        let a = ramp(&[2, 3, 2], 0.3);
        let b = ramp(&[2, 1, 2], 0.7);
        let c = concat(&[&a, &b], 1);
        assert_eq!(c.shape(), &[2, 4, 2]);
        assert_eq!(narrow(&c, 1, 0, 3), a);
        assert_eq!(narrow(&c, 1, 3, 1), b);
        let e = embed(&b, 1, 3, 4);
        assert_eq!(narrow(&e, 1, 3, 1), b);
        assert_eq!(narrow(&e, 1, 0, 3).sum(), 0.0);
    }
}

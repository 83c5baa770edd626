//! Alpha compositing of a generated foreground into a background.

use dummynet_nn::{Scalar, Var};

use crate::error::{Error, Result};
use crate::image::{Image, MaskImage};

/// `mask * gen + (1 - mask) * bg`, per pixel and channel.
pub fn composite<T: Scalar>(mask: &MaskImage<T>, gen: &Image<T>, bg: &Image<T>) -> Result<Image<T>> {
    if gen.size() != mask.size() || bg.size() != mask.size() || gen.channels() != bg.channels() {
        return Err(Error::ShapeMismatch(format!(
            "composite of {}x{:?} over {}x{:?} with mask {:?}",
            gen.channels(),
            gen.size(),
            bg.channels(),
            bg.size(),
            mask.size()
        )));
    }
    let n = mask.data().len();
    let mut out = bg.clone();
    let g = gen.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let m = mask.data()[i % n];
        *v = m * g[i] + (T::one() - m) * *v;
    }
    Ok(out)
}

/// Differentiable batch version over `[B, C, H, W]` images and `[B, 1, H, W]` masks.
pub fn composite_var<'t, T: Scalar>(mask: Var<'t, T>, gen: Var<'t, T>, bg: Var<'t, T>) -> Var<'t, T> {
    mask.mul(gen).add(mask.rsub_scalar(T::one()).mul(bg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> Image<f64> {
        Image::filled(3, 4, 5, v)
    }

    #[test]
    fn shape_mismatch() {
        let m = MaskImage::<f64>::ones(4, 4);
        assert!(matches!(composite(&m, &img(1.0), &img(0.0)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn var_version_matches() {
        let t = dummynet_nn::Tape::<f64>::new();
        let m = MaskImage::from_fn(4, 5, |y, x| (y * 5 + x) as f64 / 20.0).unwrap();
        let g = Image::from_fn(3, 4, 5, |c, y, x| ((c + y + x) % 4) as f64 / 3.0);
        let b = img(0.25);
        let expected = composite(&m, &g, &b).unwrap();
        let out = composite_var(t.constant(m.to_array()), t.constant(g.to_array()), t.constant(b.to_array()));
        for (a, e) in out.value().data().iter().zip(expected.data()) {
            assert!((a - e).abs() < 1e-15);
        }
    }
}

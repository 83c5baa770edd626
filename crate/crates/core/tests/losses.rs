use dummynet_core::appearance::{AppearanceVae, VaeConfig};
use dummynet_core::image::{Image, MaskImage};
use dummynet_core::losses::*;
use dummynet_core::Error;
use dummynet_nn::{Array, Tape, Var};

fn pattern(shape: &[usize], seed: u64) -> Array<f64> {
    let n: usize = shape.iter().product();
    Array::new(
        shape,
        (0..n)
            .map(|i| {
                let mut s = seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
                s ^= s >> 31;
                s = s.wrapping_mul(0xbf58476d1ce4e5b9);
                s ^= s >> 29;
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect(),
    )
}

fn sum_per_sample<'t>(x: Var<'t, f64>) -> Var<'t, f64> {
    let b = x.shape()[0];
    x.sum_to(&[b, 1, 1, 1]).reshape(&[b])
}

#[test]
fn constant_critic_penalty_is_the_weight() {
    for weight in [1.0, 10.0] {
        let tape = Tape::<f64>::new();
        let real = tape.constant(pattern(&[4, 3, 8, 8], 1));
        let fake = tape.constant(pattern(&[4, 3, 8, 8], 2));
        let gp = gradient_penalty(&|x| tape.constant(Array::full(&[x.shape()[0]], -3.0)), real, fake, &[0.0, 0.3, 0.7, 1.0], weight).unwrap();
        assert!((gp.item() - weight).abs() < 1e-9, "{}", gp.item());
    }
}

#[test]
fn sum_critic_penalty_matches_closed_form() {
    let tape = Tape::<f64>::new();
    let real = tape.constant(pattern(&[3, 3, 8, 8], 3));
    let fake = tape.constant(pattern(&[3, 3, 8, 8], 4));
    let gp = gradient_penalty(&|x| sum_per_sample(x), real, fake, &[0.2, 0.5, 0.9], 10.0).unwrap();
    let d = (3 * 8 * 8) as f64;
    let expect = 10.0 * (d.sqrt() - 1.0).powi(2);
    assert!((gp.item() - expect).abs() < 1e-6 * expect, "{} vs {expect}", gp.item());
}

#[test]
fn mismatched_batch_is_rejected() {
    let tape = Tape::<f64>::new();
    let real = tape.constant(pattern(&[2, 3, 4, 4], 1));
    let fake = tape.constant(pattern(&[2, 3, 4, 4], 2));
    let r = gradient_penalty(&|x| sum_per_sample(x), real, fake, &[0.5], 10.0);
    assert!(matches!(r, Err(Error::ShapeMismatch(_))));
}

fn penalty_for(w: &Array<f64>, v: &Array<f64>, real: &Array<f64>, fake: &Array<f64>, eps: &[f64]) -> f64 {
    let tape = Tape::<f64>::new();
    let wv = tape.constant(w.clone());
    let vv = tape.constant(v.clone());
    let gp = gradient_penalty(&|x| sum_per_sample(x.conv2d(wv, 1, 1).tanh().mul(vv)), tape.constant(real.clone()), tape.constant(fake.clone()), eps, 10.0).unwrap();
    gp.item()
}

#[test]
fn penalty_gradient_matches_central_differences() {
    let real = pattern(&[2, 3, 8, 8], 11);
    let fake = pattern(&[2, 3, 8, 8], 12);
    let eps = [0.25, 0.8];
    let w0 = pattern(&[2, 3, 3, 3], 13).map(|v| v - 0.5);
    let v = pattern(&[1, 2, 8, 8], 14).map(|v| v - 0.5);

    let tape = Tape::<f64>::new();
    let w = tape.leaf(w0.clone(), true);
    let vv = tape.constant(v.clone());
    let gp = gradient_penalty(&|x| sum_per_sample(x.conv2d(w, 1, 1).tanh().mul(vv)), tape.constant(real.clone()), tape.constant(fake.clone()), &eps, 10.0).unwrap();
    let analytic = tape.grad(gp, &[w], false).remove(0).unwrap().value();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w0.data().len() {
        let mut plus = w0.clone();
        plus.data_mut()[i] += h;
        let mut minus = w0.clone();
        minus.data_mut()[i] -= h;
        let fd = (penalty_for(&plus, &v, &real, &fake, &eps) - penalty_for(&minus, &v, &real, &fake, &eps)) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - fd).abs() / fd.abs().max(1.0));
    }
    assert!(worst <= 1e-3, "relative error {worst}");
}

fn vae() -> AppearanceVae<f64> {
    AppearanceVae::new(VaeConfig::default(), 5)
}

fn image(seed: u64) -> Image<f64> {
    Image::new(3, 64, 64, pattern(&[3, 64, 64], seed).data().to_vec()).unwrap()
}

#[test]
fn appearance_loss_of_identical_images_is_zero() {
    let v = vae();
    let img = image(1);
    let mask = MaskImage::from_fn(64, 64, |y, x| if (16..48).contains(&y) && (20..44).contains(&x) { 1.0 } else { 0.0 }).unwrap();
    assert_eq!(appearance_loss(&v, &mask, &img, &img).unwrap(), 0.0);
}

#[test]
fn appearance_loss_with_empty_mask_is_zero() {
    let v = vae();
    assert_eq!(appearance_loss(&v, &MaskImage::zeros(64, 64), &image(1), &image(2)).unwrap(), 0.0);
}

#[test]
fn appearance_loss_is_symmetric_and_positive() {
    let v = vae();
    let mask = MaskImage::ones(64, 64);
    let ab = appearance_loss(&v, &mask, &image(1), &image(2)).unwrap();
    let ba = appearance_loss(&v, &mask, &image(2), &image(1)).unwrap();
    assert!(ab > 0.0);
    assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
}

#[test]
fn appearance_loss_rejects_mismatched_sizes() {
    let v = vae();
    let small = Image::zeros(3, 32, 32);
    assert!(matches!(appearance_loss(&v, &MaskImage::ones(64, 64), &image(1), &small), Err(Error::ShapeMismatch(_))));
}

#[test]
fn masked_loss_only_sees_inside_the_mask() {
    // Images differ only on the right half; a left-half mask sees nothing.
    let a = pattern(&[1, 3, 8, 8], 21);
    let mut b = a.clone();
    for c in 0..3 {
        for y in 0..8 {
            for x in 4..8 {
                b.data_mut()[c * 64 + y * 8 + x] += 0.25;
            }
        }
    }
    let left = Array::new(&[1, 1, 8, 8], (0..64).map(|i| if i % 8 < 4 { 1.0 } else { 0.0 }).collect());
    let right = left.map(|v| 1.0 - v);
    let pyramid = RandomConvPyramid::<f64>::default();
    let tape = Tape::<f64>::new();
    let run = |m: &Array<f64>| masked_feature_loss(&|x| IdentityFeatures.features(x), tape.constant(m.clone()), tape.constant(a.clone()), tape.constant(b.clone())).item();
    assert_eq!(run(&left), 0.0);
    assert!((run(&right) - 0.25).abs() < 1e-9);
    let deep = |m: &Array<f64>| masked_feature_loss(&|x| pyramid.features(x), tape.constant(m.clone()), tape.constant(a.clone()), tape.constant(b.clone())).item();
    assert!(deep(&right) > 0.0);
}

#[test]
fn total_is_linear_in_weights_and_components() {
    let c1 = LossComponents { wgan: -0.5, rec_dis: 0.2, rec_vgg: 0.1, appearance: 0.7 };
    let c2 = LossComponents { wgan: 1.5, rec_dis: 0.4, rec_vgg: 0.3, appearance: 0.2 };
    let w = LossWeights::default();
    let sum = LossComponents { wgan: c1.wgan + c2.wgan, rec_dis: c1.rec_dis + c2.rec_dis, rec_vgg: c1.rec_vgg + c2.rec_vgg, appearance: c1.appearance + c2.appearance };
    let lhs = total_loss(&w, &sum).unwrap();
    let rhs = total_loss(&w, &c1).unwrap() + total_loss(&w, &c2).unwrap();
    assert!((lhs - rhs).abs() < 1e-12);
    let doubled = LossWeights { wgan: 2.0, rec_dis: 20.0, rec_vgg: 20.0, appearance: 2.0, gradient_penalty: 10.0 };
    assert!((total_loss(&doubled, &c1).unwrap() - 2.0 * total_loss(&w, &c1).unwrap()).abs() < 1e-12);
    let only_app = LossWeights { wgan: 0.0, rec_dis: 0.0, rec_vgg: 0.0, appearance: 1.0, gradient_penalty: 0.0 };
    assert_eq!(total_loss(&only_app, &c1).unwrap(), 0.7);
}

#[test]
fn total_var_matches_scalar_total() {
    let tape = Tape::<f64>::new();
    let w = LossWeights::default();
    let v = total_loss_var(&w, tape.scalar(-0.5), tape.scalar(0.2), tape.scalar(0.1), tape.scalar(0.7)).unwrap();
    let c = LossComponents { wgan: -0.5, rec_dis: 0.2, rec_vgg: 0.1, appearance: 0.7 };
    assert!((v.item() - total_loss(&w, &c).unwrap()).abs() < 1e-12);
    assert!(matches!(total_loss_var(&w, tape.scalar(f64::INFINITY), tape.scalar(0.0), tape.scalar(0.0), tape.scalar(0.0)), Err(Error::NonFiniteLoss("wgan"))));
}

#[test]
fn training_log_has_header_and_rows() {
    let rows = vec![TrainingLogRow { step: 3, resolution: 32, alpha: 0.5, critic: 1.0, penalty: 0.1, wgan: -0.2, rec_dis: 0.3, rec_vgg: 0.4, appearance: 0.5, total: 6.0 }];
    let mut buf = Vec::new();
    write_training_log(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), TRAINING_LOG_HEADER);
    assert_eq!(lines.next().unwrap().split(',').count(), TRAINING_LOG_HEADER.split(',').count());
}

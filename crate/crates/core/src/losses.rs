//! Training objectives of the conditional generator.

use std::io::Write;
use std::rc::Rc;

use dummynet_nn::layers::{relu_gain, uniform_init};
use dummynet_nn::{Array, ResamplePlan, Scalar, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceVae, ENCODER_INPUT};
use crate::error::{Error, Result};
use crate::image::{Image, MaskImage};
use crate::rng;

/// Weights of the four generator terms plus the critic's gradient penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub wgan: f64,
    pub rec_dis: f64,
    pub rec_vgg: f64,
    pub appearance: f64,
    pub gradient_penalty: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { wgan: 1.0, rec_dis: 10.0, rec_vgg: 10.0, appearance: 1.0, gradient_penalty: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.wgan, self.rec_dis, self.rec_vgg, self.appearance, self.gradient_penalty];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Scalar values of the generator terms for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub wgan: f64,
    pub rec_dis: f64,
    pub rec_vgg: f64,
    pub appearance: f64,
}

pub fn total_loss(w: &LossWeights, c: &LossComponents) -> Result<f64> {
    for (name, v) in [("wgan", c.wgan), ("rec_dis", c.rec_dis), ("rec_vgg", c.rec_vgg), ("appearance", c.appearance)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    Ok(w.wgan * c.wgan + w.rec_dis * c.rec_dis + w.rec_vgg * c.rec_vgg + w.appearance * c.appearance)
}

/// Differentiable weighted sum; fails if any term is non-finite.
pub fn total_loss_var<'t, T: Scalar>(w: &LossWeights, wgan: Var<'t, T>, rec_dis: Var<'t, T>, rec_vgg: Var<'t, T>, appearance: Var<'t, T>) -> Result<Var<'t, T>> {
    let c = LossComponents {
        wgan: wgan.item().as_f64(),
        rec_dis: rec_dis.item().as_f64(),
        rec_vgg: rec_vgg.item().as_f64(),
        appearance: appearance.item().as_f64(),
    };
    total_loss(w, &c)?;
    Ok(wgan
        .scale(T::lit(w.wgan))
        .add(rec_dis.scale(T::lit(w.rec_dis)))
        .add(rec_vgg.scale(T::lit(w.rec_vgg)))
        .add(appearance.scale(T::lit(w.appearance))))
}

/// Reduces critic output with a leading batch axis to one score per sample.
fn per_sample<'t, T: Scalar>(s: Var<'t, T>) -> Var<'t, T> {
    let shape = s.shape();
    let b = shape[0];
    let n: usize = shape[1..].iter().product();
    let mut target = vec![1; shape.len()];
    target[0] = b;
    s.sum_to(&target).scale(T::one() / T::lit(n as f64)).reshape(&[b])
}

pub struct WganTerms<'t, T: Scalar> {
    /// `E[D(fake)] - E[D(real)] + penalty`; minimized by the critic.
    pub critic_loss: Var<'t, T>,
    /// `-E[D(fake)]`; minimized by the generator.
    pub generator_loss: Var<'t, T>,
    pub penalty: Var<'t, T>,
}

/// Penalty on the critic's input-gradient norm at `eps * real + (1 - eps) *
/// fake`, with one `eps` per sample. The critic maps `[B, ...]` to scores
/// with a leading batch axis.
pub fn gradient_penalty<'t, T: Scalar>(critic: &dyn Fn(Var<'t, T>) -> Var<'t, T>, real: Var<'t, T>, fake: Var<'t, T>, eps: &[T], weight: T) -> Result<Var<'t, T>> {
    let tape = real.tape();
    let shape = real.shape();
    if fake.shape() != shape || eps.len() != shape[0] {
        return Err(Error::ShapeMismatch(format!("real {shape:?}, fake {:?}, {} mixing weights", fake.shape(), eps.len())));
    }
    let b = shape[0];
    let per = shape[1..].iter().product::<usize>();
    let (rv, fv) = (real.value(), fake.value());
    let mixed: Vec<T> = (0..b * per)
        .map(|i| {
            let e = eps[i / per];
            e * rv.data()[i] + (T::one() - e) * fv.data()[i]
        })
        .collect();
    let x = tape.leaf(Array::new(&shape, mixed), true);
    let scores = per_sample(critic(x)).sum();
    let mut bshape = vec![1; shape.len()];
    bshape[0] = b;
    let norm = match tape.grad(scores, &[x], true).remove(0) {
        Some(g) => g.square().sum_to(&bshape).add_scalar(T::lit(1e-12)).sqrt().reshape(&[b]),
        None => tape.constant(Array::zeros(&[b])),
    };
    let penalty = norm.add_scalar(-T::one()).square().mean().scale(weight);
    if !penalty.item().as_f64().is_finite() {
        return Err(Error::NonFiniteGradient("gradient penalty"));
    }
    Ok(penalty)
}

/// Wasserstein critic and generator objectives with gradient penalty.
pub fn wgan_gp_loss<'t, T: Scalar>(critic: &dyn Fn(Var<'t, T>) -> Var<'t, T>, real: Var<'t, T>, fake: Var<'t, T>, eps: &[T], gp_weight: T) -> Result<WganTerms<'t, T>> {
    let penalty = gradient_penalty(critic, real.detach(), fake.detach(), eps, gp_weight)?;
    let d_real = per_sample(critic(real)).mean();
    let d_fake = per_sample(critic(fake)).mean();
    let critic_loss = d_fake.sub(d_real).add(penalty);
    let generator_loss = d_fake.neg();
    if !critic_loss.item().as_f64().is_finite() {
        return Err(Error::NonFiniteLoss("critic"));
    }
    Ok(WganTerms { critic_loss, generator_loss, penalty })
}

/// Uniform per-sample mixing weights for [`gradient_penalty`].
pub fn mixing_weights<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.random::<f64>())).collect()
}

fn broadcast_mask<'t, T: Scalar>(mask: Var<'t, T>, like: &[usize]) -> Var<'t, T> {
    let mut s = like.to_vec();
    s[1] = mask.shape()[1];
    assert_eq!(mask.shape(), s, "mask must be [B, 1, H, W] matching the images");
    mask.broadcast_to(like)
}

/// Sum over levels of the mask-weighted mean L1 distance between features of
/// `mask * real` and `mask * generated`. The mask `[B, 1, H, W]` is area
/// averaged to each feature resolution; with identity features and a full
/// mask this is the mean absolute pixel difference.
pub fn masked_feature_loss<'t, T: Scalar>(
    features: &dyn Fn(Var<'t, T>) -> Vec<Var<'t, T>>,
    mask: Var<'t, T>,
    real: Var<'t, T>,
    generated: Var<'t, T>,
) -> Var<'t, T> {
    let shape = real.shape();
    let m = broadcast_mask(mask, &shape);
    let fr = features(real.mul(m));
    let fg = features(generated.mul(m));
    assert_eq!(fr.len(), fg.len());
    let tape = real.tape();
    let mask_value = mask.value();
    let (h, w) = (shape[2], shape[3]);
    let mut total = tape.scalar(T::zero());
    for (a, b) in fr.into_iter().zip(fg) {
        let fs = a.shape();
        let ml = if (fs[2], fs[3]) == (h, w) { (*mask_value).clone() } else { ResamplePlan::area((h, w), (fs[2], fs[3])).apply(&mask_value) };
        let denom = ml.data().iter().fold(T::zero(), |s, &v| s + v) * T::lit(fs[1] as f64) + T::lit(1e-8);
        let ml = Rc::new(dummynet_nn::kernels::broadcast_to(&ml, &fs));
        let term = b.sub(a).abs().mask_mul(ml).sum().scale(T::one() / denom);
        total = total.add(term);
    }
    total
}

/// L1 distance between the appearance means of the masked real and generated
/// images, summed over latent dimensions and averaged over the batch. Images
/// are resized to the encoder input when needed.
pub fn appearance_loss_var<'t, T: Scalar>(
    vae: &AppearanceVae<T>,
    mask: Var<'t, T>,
    real: Var<'t, T>,
    generated: Var<'t, T>,
) -> Var<'t, T> {
    let tape = real.tape();
    let p = vae.store().bind(tape, false);
    let shape = real.shape();
    let m = broadcast_mask(mask, &shape);
    let fit = |x: Var<'t, T>| {
        if shape[2] == ENCODER_INPUT && shape[3] == ENCODER_INPUT {
            x
        } else {
            x.resample(&ResamplePlan::bilinear((shape[2], shape[3]), (ENCODER_INPUT, ENCODER_INPUT)))
        }
    };
    let mu_real = vae.encode_var(&p, fit(real.mul(m))).0.detach();
    let mu_gen = vae.encode_var(&p, fit(generated.mul(m))).0;
    mu_gen.sub(mu_real).abs().sum().scale(T::one() / T::lit(shape[0] as f64))
}

/// Single-image form of [`appearance_loss_var`].
pub fn appearance_loss<T: Scalar>(vae: &AppearanceVae<T>, mask: &MaskImage<T>, real: &Image<T>, generated: &Image<T>) -> Result<f64> {
    if real.size() != generated.size() || real.size() != mask.size() || real.channels() != 3 || generated.channels() != 3 {
        return Err(Error::ShapeMismatch(format!("real {:?}, generated {:?}, mask {:?}", real.size(), generated.size(), mask.size())));
    }
    let tape = Tape::new();
    let v = tape.no_grad(|| {
        appearance_loss_var(vae, tape.constant(mask.to_array()), tape.constant(real.to_array()), tape.constant(generated.to_array()))
    });
    Ok(v.item().as_f64())
}

/// A fixed feature pyramid used for perceptual comparisons.
pub trait FeatureExtractor<T: Scalar> {
    fn features<'t>(&self, x: Var<'t, T>) -> Vec<Var<'t, T>>;
}

/// Returns the input as its only level.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl<T: Scalar> FeatureExtractor<T> for IdentityFeatures {
    fn features<'t>(&self, x: Var<'t, T>) -> Vec<Var<'t, T>> {
        vec![x]
    }
}

/// Frozen, randomly initialized conv pyramid (3x3 conv + ReLU, 2x max pool
/// between levels). Stands in for a pretrained classification network.
#[derive(Clone, Debug)]
pub struct RandomConvPyramid<T> {
    layers: Vec<(Array<T>, Array<T>)>,
}

impl<T: Scalar> RandomConvPyramid<T> {
    pub fn new(widths: &[usize], seed: u64) -> Self {
        let mut r = rng::stream(seed, "perceptual", 0);
        let mut cin = 3;
        let layers = widths
            .iter()
            .map(|&c| {
                let w = uniform_init(&[c, cin, 3, 3], cin * 9, relu_gain(0.0), &mut r);
                cin = c;
                (w, Array::zeros(&[1, c, 1, 1]))
            })
            .collect();
        Self { layers }
    }
}

impl<T: Scalar> Default for RandomConvPyramid<T> {
    fn default() -> Self {
        Self::new(&[8, 16, 32], 0)
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomConvPyramid<T> {
    fn features<'t>(&self, x: Var<'t, T>) -> Vec<Var<'t, T>> {
        let tape = x.tape();
        let mut h = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, (w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.max_pool2();
            }
            h = h.conv2d(tape.constant(w.clone()), 1, 1);
            let s = h.shape();
            h = h.add(tape.constant(b.clone()).broadcast_to(&s)).relu();
            out.push(h);
        }
        out
    }
}

/// One row of the generator training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub step: usize,
    pub resolution: usize,
    pub alpha: f64,
    /// Critic objective including the penalty.
    pub critic: f64,
    pub penalty: f64,
    /// Generator adversarial term.
    pub wgan: f64,
    pub rec_dis: f64,
    pub rec_vgg: f64,
    pub appearance: f64,
    pub total: f64,
}

pub const TRAINING_LOG_HEADER: &str = "step,critic_loss,gen_loss,gp,rec_dis,rec_vgg,app,total,resolution,alpha";

pub fn write_training_log(mut w: impl Write, rows: &[TrainingLogRow]) -> std::io::Result<()> {
    writeln!(w, "{TRAINING_LOG_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step, r.critic, r.wgan, r.penalty, r.rec_dis, r.rec_vgg, r.appearance, r.total, r.resolution, r.alpha
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_critic_penalty_equals_weight() {
        let tape = Tape::<f64>::new();
        let real = tape.constant(Array::full(&[3, 2, 4, 4], 0.7));
        let fake = tape.constant(Array::full(&[3, 2, 4, 4], 0.1));
        let critic = |x: Var<'_, f64>| tape.constant(Array::full(&[x.shape()[0]], 2.5));
        let t = wgan_gp_loss(&critic, real, fake, &[0.1, 0.5, 0.9], 10.0).unwrap();
        assert!((t.penalty.item() - 10.0).abs() < 1e-12);
        assert!((t.critic_loss.item() - 10.0).abs() < 1e-12);
        assert!((t.generator_loss.item() + 2.5).abs() < 1e-12);
    }

    #[test]
    fn identity_features_full_mask_is_mean_l1() {
        let tape = Tape::<f64>::new();
        let a = Array::new(&[1, 3, 2, 2], (0..12).map(|i| i as f64 / 12.0).collect());
        let b = Array::full(&[1, 3, 2, 2], 0.5);
        let expect = a.data().iter().map(|v| (v - 0.5).abs()).sum::<f64>() / 12.0;
        let l = masked_feature_loss(&|x| IdentityFeatures.features(x), tape.constant(Array::full(&[1, 1, 2, 2], 1.0)), tape.constant(a), tape.constant(b));
        assert!((l.item() - expect).abs() < 1e-9);
    }

    #[test]
    fn weights_and_totals() {
        let w = LossWeights::default();
        let c = LossComponents { wgan: 1.0, rec_dis: 0.5, rec_vgg: 0.25, appearance: 2.0 };
        assert!((total_loss(&w, &c).unwrap() - (1.0 + 5.0 + 2.5 + 2.0)).abs() < 1e-12);
        let bad = LossComponents { rec_vgg: f64::NAN, ..c };
        assert!(matches!(total_loss(&w, &bad), Err(Error::NonFiniteLoss("rec_vgg"))));
        assert!(LossWeights { wgan: -1.0, ..w }.validate().is_err());
    }
}

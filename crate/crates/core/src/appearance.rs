//! Variational autoencoder whose encoder summarizes a masked person crop as a
//! 16-dimensional appearance vector.

use std::io::{Read, Write};
use std::path::Path;

use dummynet_nn::layers::{relu_gain, uniform_init};
use dummynet_nn::{Adam, Array, Bound, ConvGeom, Conv2d, Linear, ParamId, ParamStore, Scalar, Tape, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::train_util::{gather_batch, load_model, minibatches, restore, save_model, split_indices, TrainReport};

pub const LATENT_DIM: usize = 16;
pub const ENCODER_INPUT: usize = 64;
pub const VAE_CHECKPOINT_TAG: &str = "vae_v1";

const SLOPE: f64 = 0.2;

/// Distribution parameters and one sample of the appearance latent.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceCode<T> {
    pub mu: [T; LATENT_DIM],
    pub log_var: [T; LATENT_DIM],
    pub z: [T; LATENT_DIM],
}

/// `mu + exp(log_var / 2) * eps` with standard normal `eps`.
pub fn reparametrize<T: Scalar, R: Rng + ?Sized>(mu: &[T; LATENT_DIM], log_var: &[T; LATENT_DIM], rng: &mut R) -> [T; LATENT_DIM] {
    let mut z = [T::zero(); LATENT_DIM];
    for i in 0..LATENT_DIM {
        let eps: f64 = StandardNormal.sample(rng);
        let sd = (log_var[i] * T::lit(0.5)).exp();
        z[i] = if sd == T::zero() { mu[i] } else { mu[i] + sd * T::lit(eps) };
    }
    z
}

/// Closed-form `KL(N(mu, exp(log_var)) || N(0, I))` summed over dimensions.
pub fn kl_divergence<T: Scalar>(mu: &[T], log_var: &[T]) -> T {
    mu.iter().zip(log_var).map(|(&m, &lv)| T::lit(0.5) * (m * m + lv.exp() - T::one() - lv)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Channels after each of the four stride-2 encoder convolutions.
    pub widths: [usize; 4],
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { widths: [8, 16, 32, 32] }
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    fc: Linear,
    /// Transposed 4x4 stride-2 convolutions, weights `[cin, cout, 4, 4]`, plus biases.
    up: Vec<(ParamId, ParamId, usize)>,
}

/// Encoder and decoder sharing one parameter store.
#[derive(Clone, Debug)]
pub struct AppearanceVae<T: Scalar> {
    config: VaeConfig,
    convs: Vec<Conv2d>,
    mu_head: Linear,
    log_var_head: Linear,
    decoder: Decoder,
    store: ParamStore<T>,
}

const BOTTOM: usize = ENCODER_INPUT >> 4;

impl<T: Scalar> AppearanceVae<T> {
    pub fn new(config: VaeConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, "vae-init", 0);
        let mut store = ParamStore::new();
        let g = relu_gain(SLOPE);
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in config.widths.iter().enumerate() {
            convs.push(Conv2d::new(&mut store, &format!("enc{i}"), cin, c, 4, 2, 1, true, g, &mut r));
            cin = c;
        }
        let flat = cin * BOTTOM * BOTTOM;
        let mu_head = Linear::new(&mut store, "enc.mu", flat, LATENT_DIM, 1.0, &mut r);
        let log_var_head = Linear::new(&mut store, "enc.log_var", flat, LATENT_DIM, 0.1, &mut r);
        let fc = Linear::new(&mut store, "dec.fc", LATENT_DIM, flat, g, &mut r);
        let mut up = Vec::new();
        let mut outs: Vec<usize> = config.widths.iter().rev().skip(1).copied().collect();
        outs.push(3);
        let mut cin = config.widths[3];
        for (i, &c) in outs.iter().enumerate() {
            let gain = if i + 1 == outs.len() { 1.0 } else { g };
            let w = store.add(format!("dec{i}.weight"), uniform_init(&[cin, c, 4, 4], cin * 4, gain, &mut r));
            let b = store.add(format!("dec{i}.bias"), Array::zeros(&[1, c, 1, 1]));
            up.push((w, b, c));
            cin = c;
        }
        Self { config, convs, mu_head, log_var_head, decoder: Decoder { fc, up }, store }
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// `(mu, log_var)`, each `[B, 16]`, for images `[B, 3, 64, 64]`.
    pub fn encode_var<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(p, h).leaky_relu(T::lit(SLOPE));
        }
        let b = h.shape()[0];
        let flat = h.reshape(&[b, self.config.widths[3] * BOTTOM * BOTTOM]);
        (self.mu_head.forward(p, flat), self.log_var_head.forward(p, flat))
    }

    /// Reconstruction probabilities `[B, 3, 64, 64]` from latents `[B, 16]`.
    pub fn decode_var<'t>(&self, p: &Bound<'t, T>, z: Var<'t, T>) -> Var<'t, T> {
        let b = z.shape()[0];
        let mut h = self.decoder.fc.forward(p, z).leaky_relu(T::lit(SLOPE)).reshape(&[b, self.config.widths[3], BOTTOM, BOTTOM]);
        let n = self.decoder.up.len();
        for (i, &(w, bias, _)) in self.decoder.up.iter().enumerate() {
            let size = h.shape()[2] * 2;
            let geom = ConvGeom::new(size, size, 4, 4, 2, 1);
            h = h.conv_transpose2d(p.get(w), geom).add(p.get(bias));
            h = if i + 1 == n { h.sigmoid() } else { h.leaky_relu(T::lit(SLOPE)) };
        }
        h
    }

    fn check(image: &Image<T>) -> Result<()> {
        if image.size() != (ENCODER_INPUT, ENCODER_INPUT) || image.channels() != 3 {
            return Err(Error::ResolutionMismatch { expected: (ENCODER_INPUT, ENCODER_INPUT), found: image.size() });
        }
        Ok(())
    }

    /// Deterministic `(mu, log_var)` for a batch `[B, 3, 64, 64]`.
    pub fn encode_batch(&self, images: &Array<T>) -> Result<(Array<T>, Array<T>)> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 || (s[2], s[3]) != (ENCODER_INPUT, ENCODER_INPUT) {
            return Err(Error::ResolutionMismatch { expected: (ENCODER_INPUT, ENCODER_INPUT), found: (s.get(2).copied().unwrap_or(0), s.get(3).copied().unwrap_or(0)) });
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let (mu, lv) = tape.no_grad(|| self.encode_var(&p, tape.constant(images.clone())));
        let out = ((*mu.value()).clone(), (*lv.value()).clone());
        Ok(out)
    }

    /// Encodes one 64x64 background-masked person image and samples `z`.
    pub fn encode<R: Rng + ?Sized>(&self, image: &Image<T>, rng: &mut R) -> Result<AppearanceCode<T>> {
        Self::check(image)?;
        let (mu, lv) = self.encode_batch(&image.to_array())?;
        let mu: [T; LATENT_DIM] = mu.data().try_into().expect("16 means");
        let log_var: [T; LATENT_DIM] = lv.data().try_into().expect("16 log variances");
        let z = reparametrize(&mu, &log_var, rng);
        Ok(AppearanceCode { mu, log_var, z })
    }

    pub fn decode(&self, z: &[T; LATENT_DIM]) -> Image<T> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let out = tape.no_grad(|| self.decode_var(&p, tape.constant(Array::new(&[1, LATENT_DIM], z.to_vec()))));
        let img = Image::from_batch(&out.value(), 0);
        img
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, VAE_CHECKPOINT_TAG, &self.config, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, loaded) = load_model::<T, VaeConfig>(path, VAE_CHECKPOINT_TAG)?;
        let mut m = Self::new(config, 0);
        restore(&mut m.store, &loaded)?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub vae: VaeConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the KL term.
    pub beta: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { vae: VaeConfig::default(), epochs: 20, batch_size: 16, learning_rate: 2e-3, beta: 1.0, val_fraction: 0.1, seed: 0 }
    }
}

/// Per-sample loss terms `(reconstruction BCE summed over pixels, KL)` as batch means.
fn vae_terms<'t, T: Scalar, R: Rng + ?Sized>(
    vae: &AppearanceVae<T>,
    p: &Bound<'t, T>,
    x: Var<'t, T>,
    rng: &mut R,
) -> (Var<'t, T>, Var<'t, T>) {
    let tape = x.tape();
    let (mu, lv) = vae.encode_var(p, x);
    let shape = mu.shape();
    let eps: Vec<T> = (0..shape[0] * shape[1]).map(|_| T::lit(StandardNormal.sample(rng))).collect();
    let z = mu.add(lv.scale(T::lit(0.5)).exp().mul(tape.constant(Array::new(&shape, eps))));
    let recon = vae.decode_var(p, z);
    let b = T::lit(shape[0] as f64);
    let numel = T::lit(x.with_value(|a| a.len()) as f64);
    let rec = dummynet_nn::layers::bce(recon, x).scale(numel / b);
    let kl = mu.square().add(lv.exp()).sub(lv).add_scalar(-T::one()).sum().scale(T::lit(0.5) / b);
    (rec, kl)
}

/// Trains with pixel BCE plus `beta` times KL, keeping the weights with the
/// lowest validation loss. Validation uses fixed noise per epoch.
pub fn train_vae<T: Scalar>(dataset: &[Image<T>], cfg: &VaeTrainConfig) -> Result<(AppearanceVae<T>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for im in dataset {
        AppearanceVae::check(im)?;
    }
    let xs: Vec<Array<T>> = dataset.iter().map(|im| im.to_array().reshape(&[3, ENCODER_INPUT, ENCODER_INPUT])).collect();
    let mut vae = AppearanceVae::new(cfg.vae.clone(), cfg.seed);
    let (train_idx, val_idx) = split_indices(xs.len(), cfg.val_fraction, &mut rng::stream(cfg.seed, "vae-split", 0));
    let mut opt = Adam::new(&vae.store, cfg.learning_rate, 0.9, 0.999);
    let mut report = TrainReport::default();
    let mut best = vae.store.clone();
    let beta = T::lit(cfg.beta);
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, "vae-epoch", epoch as u64);
        let mut sum = 0.0;
        for b in minibatches(train_idx.len(), cfg.batch_size, &mut r) {
            let chunk: Vec<usize> = b.iter().map(|&i| train_idx[i]).collect();
            let tape = Tape::new();
            let p = vae.store.bind(&tape, true);
            let (rec, kl) = vae_terms(&vae, &p, tape.constant(gather_batch(&xs, &chunk)), &mut r);
            let loss = rec.add(kl.scale(beta));
            let lv = loss.item().as_f64();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss("vae"));
            }
            sum += lv * chunk.len() as f64;
            let grads = p.grads(loss);
            drop(p);
            opt.step(&mut vae.store, &grads);
        }
        report.train_loss.push(sum / train_idx.len() as f64);
        let mut vr = rng::stream(cfg.seed, "vae-val", 0);
        let mut vsum = 0.0;
        for chunk in val_idx.chunks(cfg.batch_size.max(1)) {
            let tape = Tape::new();
            let p = vae.store.bind(&tape, false);
            let l = tape.no_grad(|| {
                let (rec, kl) = vae_terms(&vae, &p, tape.constant(gather_batch(&xs, chunk)), &mut vr);
                rec.add(kl.scale(beta)).item().as_f64()
            });
            vsum += l * chunk.len() as f64;
        }
        let val = vsum / val_idx.len() as f64;
        if val < report.best_val_loss() {
            report.best_epoch = epoch;
            best = vae.store.clone();
        }
        report.val_loss.push(val);
    }
    vae.store = best;
    Ok((vae, report))
}

/// Mean per-pixel BCE of the deterministic reconstruction `decode(mu(x))`.
pub fn reconstruction_bce<T: Scalar>(vae: &AppearanceVae<T>, images: &[Image<T>]) -> Result<f64> {
    let mut total = 0.0;
    for im in images {
        AppearanceVae::check(im)?;
        let tape = Tape::new();
        let p = vae.store.bind(&tape, false);
        let l = tape.no_grad(|| {
            let x = tape.constant(im.to_array());
            let (mu, _) = vae.encode_var(&p, x);
            dummynet_nn::layers::bce(vae.decode_var(&p, mu), x).item().as_f64()
        });
        total += l;
    }
    Ok(total / images.len().max(1) as f64)
}

/// Writes latents as consecutive records of 16 little-endian `f32` values.
pub fn write_latents<T: Scalar>(mut w: impl Write, latents: &[[T; LATENT_DIM]]) -> std::io::Result<()> {
    for z in latents {
        for v in z {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_latents<T: Scalar>(mut r: impl Read) -> std::io::Result<Vec<[T; LATENT_DIM]>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % (4 * LATENT_DIM) != 0 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "latent file is not a whole number of records"));
    }
    Ok(buf
        .chunks_exact(4 * LATENT_DIM)
        .map(|rec| {
            let mut z = [T::zero(); LATENT_DIM];
            for (i, c) in rec.chunks_exact(4).enumerate() {
                z[i] = T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
            }
            z
        })
        .collect())
}

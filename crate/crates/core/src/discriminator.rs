//! Conditional patch critic with exposed intermediate features.

use std::path::Path;

use dummynet_nn::layers::{instance_norm, relu_gain};
use dummynet_nn::{Array, Bound, Conv2d, ParamStore, Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ConditioningTensor, COND_CHANNELS};
use crate::image::Image;
use crate::rng;
use crate::train_util::{load_model, restore, save_model};

pub const DISCRIMINATOR_CHECKPOINT_TAG: &str = "dis_v1";
const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Channels of the stride-2 blocks; each block halves the resolution.
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { widths: vec![16, 32, 64, 64] }
    }
}

/// Unbounded per-patch scores and one feature map per block.
#[derive(Clone, Debug)]
pub struct CriticOutput<T> {
    pub patch_scores: Array<T>,
    pub features: Vec<Array<T>>,
}

#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    config: DiscriminatorConfig,
    blocks: Vec<Conv2d>,
    head: Conv2d,
    store: ParamStore<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::Config(format!("invalid critic widths {:?}", config.widths)));
        }
        let mut r = rng::stream(seed, "dis-init", 0);
        let mut store = ParamStore::new();
        let mut cin = 3 + COND_CHANNELS;
        let mut blocks = Vec::new();
        for (i, &c) in config.widths.iter().enumerate() {
            // Normalized blocks need no bias.
            blocks.push(Conv2d::new(&mut store, &format!("block{i}"), cin, c, 4, 2, 1, i == 0, relu_gain(SLOPE), &mut r));
            cin = c;
        }
        let head = Conv2d::new(&mut store, "head", cin, 1, 3, 1, 1, true, 1.0, &mut r);
        Ok(Self { config, blocks, head, store })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_taps(&self) -> usize {
        self.blocks.len()
    }

    /// Patch scores `[B, 1, r / 2^k, ...]` and block features for images
    /// `[B, 3, r, r]` concatenated with conditioning `[B, 20, r, r]`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, image: Var<'t, T>, cond: Var<'t, T>) -> (Var<'t, T>, Vec<Var<'t, T>>) {
        let mut h = Var::concat(&[image, cond], 1);
        let mut taps = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(p, h);
            if i > 0 {
                h = instance_norm(h, 1e-5);
            }
            h = h.leaky_relu(T::lit(SLOPE));
            taps.push(h);
        }
        (self.head.forward(p, h), taps)
    }

    /// Mean patch score per sample, `[B]`.
    pub fn score<'t>(&self, p: &Bound<'t, T>, image: Var<'t, T>, cond: Var<'t, T>) -> Var<'t, T> {
        let s = self.forward(p, image, cond).0;
        let b = s.shape()[0];
        s.mean_hw().reshape(&[b])
    }

    pub fn criticize(&self, image: &Image<T>, cond: &ConditioningTensor<T>) -> Result<CriticOutput<T>> {
        let full = cond.full();
        if image.channels() != 3 || [image.height(), image.width()] != full.shape()[1..] {
            return Err(Error::ShapeMismatch(format!("image {:?} vs conditioning {:?}", image.size(), full.shape())));
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let (h, w) = image.size();
        let c = tape.constant(full.clone().reshape(&[1, COND_CHANNELS, h, w]));
        let (s, f) = tape.no_grad(|| self.forward(&p, tape.constant(image.to_array()), c));
        let out = CriticOutput { patch_scores: (*s.value()).clone(), features: f.iter().map(|v| (*v.value()).clone()).collect() };
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, DISCRIMINATOR_CHECKPOINT_TAG, &self.config, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, loaded) = load_model::<T, DiscriminatorConfig>(path, DISCRIMINATOR_CHECKPOINT_TAG)?;
        let mut d = Self::new(config, 0)?;
        restore(&mut d.store, &loaded)?;
        Ok(d)
    }
}

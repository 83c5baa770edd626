//! Conditional generator: a latent seed at 16 pixels followed by `n` rounds of
//! 2x bilinear upsampling, with a spatially-adaptive residual block at every
//! resolution and a 3x3 conv plus sigmoid per output stage. Output size is
//! `16 * 2^n`.

use std::path::Path;

use dummynet_nn::layers::{instance_norm, relu_gain};
use dummynet_nn::{Array, Bound, Conv2d, Linear, ParamStore, ResamplePlan, Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::appearance::LATENT_DIM;
use crate::error::{Error, Result};
use crate::image::{Image, MaskImage};
use crate::pose::{KeypointHeatmaps, NUM_KEYPOINTS};
use crate::rng;
use crate::train_util::{load_model, restore, save_model};

pub const GENERATOR_CHECKPOINT_TAG: &str = "gen_v1";
/// Side of the latent seed tensor and of the first block's input.
pub const SEED_SIZE: usize = 16;
/// Background RGB plus one heatmap per keypoint.
pub const COND_CHANNELS: usize = 3 + NUM_KEYPOINTS;

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Number of 2x upsampling steps `n`; there are `n + 1` residual blocks.
    pub n_blocks: usize,
    /// Feature-map width `N`.
    pub base_width: usize,
    /// Hidden width of the modulation branch inside each normalization.
    pub spade_hidden: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { n_blocks: 2, base_width: 16, spade_hidden: 16 }
    }
}

impl GeneratorConfig {
    pub fn output_size(&self) -> usize {
        SEED_SIZE << self.n_blocks
    }

    /// Resolution of block `i` and of output stage `i`.
    pub fn block_resolution(&self, i: usize) -> usize {
        SEED_SIZE << i
    }

    fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.n_blocks > 6 || self.base_width == 0 || self.spade_hidden == 0 {
            return Err(Error::Config(format!("invalid generator config {self:?}")));
        }
        Ok(())
    }
}

/// Masked background and heatmaps at every resolution used by the generator:
/// level `i` has side `16 * 2^i`, the last level is the output size.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningTensor<T> {
    /// `[20, r, r]` per level.
    pub levels: Vec<Array<T>>,
}

impl<T: Scalar> ConditioningTensor<T> {
    pub fn full(&self) -> &Array<T> {
        self.levels.last().expect("at least one level")
    }

    pub fn output_size(&self) -> usize {
        self.full().shape()[1]
    }
}

/// `background * (1 - mask)` stacked with the heatmaps, plus area-averaged
/// copies for each coarser level down to 16 pixels.
pub fn build_conditioning<T: Scalar>(background: &Image<T>, mask: &MaskImage<T>, heatmaps: &KeypointHeatmaps<T>) -> Result<ConditioningTensor<T>> {
    let size = background.size();
    if mask.size() != size || heatmaps.size() != size || background.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "background {size:?}, mask {:?}, heatmaps {:?}",
            mask.size(),
            heatmaps.size()
        )));
    }
    let (h, w) = size;
    if h != w || h < SEED_SIZE || !(h / SEED_SIZE).is_power_of_two() || h % SEED_SIZE != 0 {
        return Err(Error::ShapeMismatch(format!("conditioning must be square with side 16*2^n, got {size:?}")));
    }
    let masked = background.masked(mask, true)?;
    let mut data = masked.data().to_vec();
    data.extend_from_slice(heatmaps.tensor.data());
    let full = Array::new(&[COND_CHANNELS, h, w], data);
    let mut levels = vec![full];
    let mut r = h;
    while r > SEED_SIZE {
        r /= 2;
        let plan = ResamplePlan::area((h, w), (r, r));
        levels.push(plan.apply(&levels[0]));
    }
    levels[1..].reverse();
    let first = levels.remove(0);
    levels.push(first);
    Ok(ConditioningTensor { levels })
}

#[derive(Clone, Debug)]
struct Spade {
    shared: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
}

impl Spade {
    fn build<T: Scalar, R: rand::Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, channels: usize, hidden: usize, r: &mut R) -> Self {
        Self {
            shared: Conv2d::new(store, &format!("{name}.shared"), COND_CHANNELS, hidden, 3, 1, 1, true, relu_gain(0.0), r),
            gamma: Conv2d::new(store, &format!("{name}.gamma"), hidden, channels, 3, 1, 1, true, 0.5, r),
            beta: Conv2d::new(store, &format!("{name}.beta"), hidden, channels, 3, 1, 1, true, 0.5, r),
        }
    }

    fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, cond: Var<'t, T>) -> Var<'t, T> {
        let s = self.shared.forward(p, cond).relu();
        let gamma = self.gamma.forward(p, s);
        let beta = self.beta.forward(p, s);
        instance_norm(x, 1e-5).mul(gamma.add_scalar(T::one())).add(beta)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: Spade,
    conv1: Conv2d,
    norm2: Spade,
    conv2: Conv2d,
}

impl ResBlock {
    fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, cond: Var<'t, T>) -> Var<'t, T> {
        let slope = T::lit(SLOPE);
        let h = self.conv1.forward(p, self.norm1.forward(p, x, cond).leaky_relu(slope));
        let h = self.conv2.forward(p, self.norm2.forward(p, h, cond).leaky_relu(slope));
        x.add(h)
    }
}

/// Progressive-growing state: which output stage is active and how far its
/// fade-in has progressed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    /// Output resolution is `16 * 2^level`, `0..=n_blocks`.
    pub level: usize,
    /// Blend weight of the new stage against the upsampled previous one.
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct Generator<T: Scalar> {
    config: GeneratorConfig,
    seed_fc: Linear,
    blocks: Vec<ResBlock>,
    /// One RGB head per stage; the last one produces the final output.
    to_rgb: Vec<Conv2d>,
    store: ParamStore<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "gen-init", 0);
        let mut store = ParamStore::new();
        let n = config.base_width;
        let seed_fc = Linear::new(&mut store, "seed", LATENT_DIM, n * SEED_SIZE * SEED_SIZE, 1.0, &mut r);
        let g = relu_gain(SLOPE);
        let blocks = (0..=config.n_blocks)
            .map(|i| ResBlock {
                norm1: Spade::build(&mut store, &format!("block{i}.norm1"), n, config.spade_hidden, &mut r),
                conv1: Conv2d::new(&mut store, &format!("block{i}.conv1"), n, n, 3, 1, 1, true, g, &mut r),
                norm2: Spade::build(&mut store, &format!("block{i}.norm2"), n, config.spade_hidden, &mut r),
                conv2: Conv2d::new(&mut store, &format!("block{i}.conv2"), n, n, 3, 1, 1, true, 0.5, &mut r),
            })
            .collect();
        let to_rgb = (0..=config.n_blocks)
            .map(|i| Conv2d::new(&mut store, &format!("to_rgb{i}"), n, 3, 3, 1, 1, true, 1.0, &mut r))
            .collect();
        Ok(Self { config, seed_fc, blocks, to_rgb, store })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn final_stage(&self) -> Stage {
        Stage { level: self.config.n_blocks, alpha: 1.0 }
    }

    /// Images `[B, 3, r, r]` with `r = 16 * 2^stage.level`, from latents
    /// `[B, 16]` and conditioning levels `[B, 20, 16 * 2^i, ...]` (at least
    /// the first `stage.level + 1` levels).
    pub fn forward<'t>(&self, p: &Bound<'t, T>, z: Var<'t, T>, cond: &[Var<'t, T>], stage: Stage) -> Var<'t, T> {
        let b = z.shape()[0];
        let n = self.config.base_width;
        let mut h = self.seed_fc.forward(p, z).reshape(&[b, n, SEED_SIZE, SEED_SIZE]);
        let rgb = |i: usize, h: Var<'t, T>| self.to_rgb[i].forward(p, h).sigmoid();
        let mut prev = None;
        h = self.blocks[0].forward(p, h, cond[0]);
        for i in 1..=stage.level {
            if i == stage.level && stage.alpha < 1.0 {
                prev = Some(rgb(i - 1, h));
            }
            let r = self.config.block_resolution(i - 1);
            h = h.resample(&ResamplePlan::bilinear((r, r), (2 * r, 2 * r)));
            h = self.blocks[i].forward(p, h, cond[i]);
        }
        let out = rgb(stage.level, h);
        match prev {
            Some(prev) => {
                let r = self.config.block_resolution(stage.level - 1);
                let up = prev.resample(&ResamplePlan::bilinear((r, r), (2 * r, 2 * r)));
                let a = T::lit(stage.alpha);
                out.scale(a).add(up.scale(T::one() - a))
            }
            None => out,
        }
    }

    fn check_conditioning(&self, c: &ConditioningTensor<T>) -> Result<()> {
        let ok = c.levels.len() == self.config.n_blocks + 1
            && c.levels.iter().enumerate().all(|(i, l)| l.shape() == [COND_CHANNELS, SEED_SIZE << i, SEED_SIZE << i]);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "conditioning levels {:?} do not match a {}-block generator",
                c.levels.iter().map(|l| l.shape().to_vec()).collect::<Vec<_>>(),
                self.config.n_blocks
            )))
        }
    }

    /// Batched inference at the final stage.
    pub fn generate_batch(&self, z: &[[T; LATENT_DIM]], cond: &[ConditioningTensor<T>]) -> Result<Vec<Image<T>>> {
        if z.len() != cond.len() {
            return Err(Error::ShapeMismatch(format!("{} latents for {} conditionings", z.len(), cond.len())));
        }
        if z.is_empty() {
            return Ok(Vec::new());
        }
        for c in cond {
            self.check_conditioning(c)?;
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let zs = Array::new(&[z.len(), LATENT_DIM], z.iter().flatten().copied().collect());
        let levels: Vec<Var<T>> = (0..=self.config.n_blocks)
            .map(|i| tape.constant(Array::stack(&cond.iter().map(|c| c.levels[i].clone()).collect::<Vec<_>>())))
            .collect();
        let out = tape.no_grad(|| self.forward(&p, tape.constant(zs), &levels, self.final_stage()));
        let v = out.value();
        Ok((0..z.len()).map(|i| Image::from_batch(&v, i)).collect())
    }

    pub fn generate(&self, z: &[T; LATENT_DIM], cond: &ConditioningTensor<T>) -> Result<Image<T>> {
        Ok(self.generate_batch(std::slice::from_ref(z), std::slice::from_ref(cond))?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, GENERATOR_CHECKPOINT_TAG, &self.config, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, loaded) = load_model::<T, GeneratorConfig>(path, GENERATOR_CHECKPOINT_TAG)?;
        let mut g = Self::new(config, 0)?;
        restore(&mut g.store, &loaded)?;
        Ok(g)
    }
}

/// Closed-form parameter count of a generator configuration.
pub fn generator_parameter_count(cfg: &GeneratorConfig) -> usize {
    let (n, hd, c) = (cfg.base_width, cfg.spade_hidden, COND_CHANNELS);
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let spade = conv(c, hd, 3) + 2 * conv(hd, n, 3);
    let block = 2 * spade + 2 * conv(n, n, 3);
    let seed = LATENT_DIM * n * SEED_SIZE * SEED_SIZE + n * SEED_SIZE * SEED_SIZE;
    seed + (cfg.n_blocks + 1) * (block + conv(n, 3, 3))
}

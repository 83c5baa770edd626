//! Adversarial training of the generator against the patch critic, and
//! person synthesis with a trained generator.

use std::path::Path;

use dummynet_nn::{Adam, Array, ResamplePlan, Scalar, Tape, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceVae, LATENT_DIM};
use crate::compositor::{composite, composite_var};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{build_conditioning, ConditioningTensor, Generator, GeneratorConfig, Stage};
use crate::image::{Image, MaskImage};
use crate::losses::{
    appearance_loss_var, masked_feature_loss, mixing_weights, total_loss_var, wgan_gp_loss, FeatureExtractor, LossWeights,
    RandomConvPyramid, TrainingLogRow,
};
use crate::pose::KeypointHeatmaps;
use crate::rng;
use crate::train_util::gather_batch;

/// One training person: the crop, its estimated mask and its keypoint heatmaps.
#[derive(Clone, Debug)]
pub struct GanExample<T> {
    pub image: Image<T>,
    pub mask: MaskImage<T>,
    pub heatmaps: KeypointHeatmaps<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub weights: LossWeights,
    pub steps: usize,
    pub batch_size: usize,
    pub generator_lr: f64,
    pub critic_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// Steps spent at each resolution below the final one; 0 trains the
    /// final resolution from the start.
    pub stage_steps: usize,
    /// Steps over which a new stage is blended in.
    pub fade_steps: usize,
    pub perceptual_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            weights: LossWeights::default(),
            steps: 600,
            batch_size: 8,
            generator_lr: 1e-3,
            critic_lr: 1e-3,
            beta1: 0.0,
            beta2: 0.9,
            n_critic: 1,
            stage_steps: 100,
            fade_steps: 50,
            perceptual_widths: vec![8, 16, 32],
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn stage_at(&self, step: usize) -> Stage {
        let n = self.generator.n_blocks;
        if self.stage_steps == 0 {
            return Stage { level: n, alpha: 1.0 };
        }
        let level = (step / self.stage_steps).min(n);
        let alpha = if level == 0 || self.fade_steps == 0 {
            1.0
        } else {
            ((step - level * self.stage_steps + 1) as f64 / self.fade_steps as f64).min(1.0)
        };
        Stage { level, alpha }
    }

    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.n_critic == 0 || self.perceptual_widths.is_empty() {
            return Err(Error::Config("batch_size, n_critic and perceptual_widths must be non-empty".into()));
        }
        Ok(())
    }
}

/// Trained generator and critic.
#[derive(Clone, Debug)]
pub struct DummyNet<T: Scalar> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Scalar> DummyNet<T> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.generator.save(&dir.join("generator.ckpt"))?;
        self.discriminator.save(&dir.join("discriminator.ckpt"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self { generator: Generator::load(&dir.join("generator.ckpt"))?, discriminator: Discriminator::load(&dir.join("discriminator.ckpt"))? })
    }
}

struct Prepared<T: Scalar> {
    real: Vec<Array<T>>,
    mask: Vec<Array<T>>,
    levels: Vec<Vec<Array<T>>>,
    mu: Vec<[T; LATENT_DIM]>,
    log_var: Vec<[T; LATENT_DIM]>,
}

fn prepare<T: Scalar>(examples: &[GanExample<T>], vae: &AppearanceVae<T>, s: usize) -> Result<Prepared<T>> {
    let mut p = Prepared { real: vec![], mask: vec![], levels: vec![], mu: vec![], log_var: vec![] };
    let mut r = rng::seeded(0);
    for ex in examples {
        if ex.image.size() != (s, s) {
            return Err(Error::ResolutionMismatch { expected: (s, s), found: ex.image.size() });
        }
        let cond = build_conditioning(&ex.image, &ex.mask, &ex.heatmaps)?;
        let code = vae.encode(&ex.image.resize(crate::appearance::ENCODER_INPUT, crate::appearance::ENCODER_INPUT).masked(&ex.mask.resize(crate::appearance::ENCODER_INPUT, crate::appearance::ENCODER_INPUT), false)?, &mut r)?;
        p.real.push(ex.image.to_array().reshape(&[3, s, s]));
        p.mask.push(ex.mask.to_array().reshape(&[1, s, s]));
        p.levels.push(cond.levels);
        p.mu.push(code.mu);
        p.log_var.push(code.log_var);
    }
    Ok(p)
}

/// Downsamples to the stage resolution and back, so real images carry the
/// same detail as the generator output at that stage.
fn at_stage<T: Scalar>(x: &Array<T>, s: usize, r: usize) -> Array<T> {
    if r == s {
        return x.clone();
    }
    ResamplePlan::bilinear((r, r), (s, s)).apply(&ResamplePlan::area((s, s), (r, r)).apply(x))
}

fn upsample_to<'t, T: Scalar>(x: Var<'t, T>, s: usize) -> Var<'t, T> {
    let r = x.shape()[2];
    if r == s {
        x
    } else {
        x.resample(&ResamplePlan::bilinear((r, r), (s, s)))
    }
}

/// Adversarial training with the critic's features, a frozen perceptual
/// pyramid and the appearance encoder as reconstruction guides. Returns the
/// trained networks and one log row per step.
pub fn train_dummynet<T: Scalar>(examples: &[GanExample<T>], vae: &AppearanceVae<T>, cfg: &GanTrainConfig) -> Result<(DummyNet<T>, Vec<TrainingLogRow>)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = cfg.generator.output_size();
    let data = prepare(examples, vae, s)?;
    let mut gen = Generator::<T>::new(cfg.generator.clone(), cfg.seed)?;
    let mut dis = Discriminator::<T>::new(cfg.discriminator.clone(), cfg.seed)?;
    let perceptual = RandomConvPyramid::<T>::new(&cfg.perceptual_widths, cfg.seed);
    let mut opt_g = Adam::new(gen.store(), cfg.generator_lr, cfg.beta1, cfg.beta2);
    let mut opt_d = Adam::new(dis.store(), cfg.critic_lr, cfg.beta1, cfg.beta2);
    let gp = T::lit(cfg.weights.gradient_penalty);
    let n_levels = cfg.generator.n_blocks + 1;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut r = rng::stream(cfg.seed, "gan-train", 0);
    let mut order: Vec<usize> = Vec::new();

    let mut next_batch = |r: &mut rng::Rng| -> Vec<usize> {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(data.real.len()) {
            if order.is_empty() {
                order = (0..data.real.len()).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), r);
            }
            idx.push(order.pop().unwrap());
        }
        idx
    };

    for step in 0..cfg.steps {
        let stage = cfg.stage_at(step);
        let res = cfg.generator.block_resolution(stage.level);
        let mut row = TrainingLogRow { step, resolution: res, alpha: stage.alpha, ..Default::default() };

        let batch = |idx: &[usize], r: &mut rng::Rng| {
            let b = idx.len();
            let z: Vec<T> = idx
                .iter()
                .flat_map(|&i| {
                    let (mu, lv) = (data.mu[i], data.log_var[i]);
                    (0..LATENT_DIM)
                        .map(|k| {
                            let e: f64 = StandardNormal.sample(r);
                            mu[k] + T::lit(e) * (lv[k] * T::lit(0.5)).exp()
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            let levels: Vec<Array<T>> =
                (0..n_levels).map(|l| Array::stack(&idx.iter().map(|&i| data.levels[i][l].clone()).collect::<Vec<_>>())).collect();
            let real = at_stage(&gather_batch(&data.real, idx), s, res);
            (Array::new(&[b, LATENT_DIM], z), levels, real, gather_batch(&data.mask, idx))
        };

        for _ in 0..cfg.n_critic {
            let idx = next_batch(&mut r);
            let (z, levels, real, mask) = batch(&idx, &mut r);
            let tape = Tape::new();
            let pg = gen.store().bind(&tape, false);
            let pd = dis.store().bind(&tape, true);
            let lv: Vec<Var<T>> = levels.into_iter().map(|a| tape.constant(a)).collect();
            let cond = lv[n_levels - 1];
            let real = tape.constant(real);
            let fake = tape.no_grad(|| {
                let g = upsample_to(gen.forward(&pg, tape.constant(z), &lv, stage), s);
                composite_var(tape.constant(mask), g, real).detach()
            });
            let eps = mixing_weights::<T, _>(idx.len(), &mut r);
            let terms = wgan_gp_loss(&|x| dis.score(&pd, x, cond), real, fake, &eps, gp)?;
            row.critic = terms.critic_loss.item().as_f64();
            row.penalty = terms.penalty.item().as_f64();
            let grads = pd.grads(terms.critic_loss);
            if grads.iter().any(|g| g.data().iter().any(|v| !v.as_f64().is_finite())) {
                return Err(Error::NonFiniteGradient("critic"));
            }
            drop(pd);
            opt_d.step(dis.store_mut(), &grads);
        }

        let idx = next_batch(&mut r);
        let (z, levels, real, mask) = batch(&idx, &mut r);
        let tape = Tape::new();
        let pg = gen.store().bind(&tape, true);
        let pd = dis.store().bind(&tape, false);
        let lv: Vec<Var<T>> = levels.into_iter().map(|a| tape.constant(a)).collect();
        let cond = lv[n_levels - 1];
        let real = tape.constant(real);
        let mask = tape.constant(mask);
        let g = upsample_to(gen.forward(&pg, tape.constant(z), &lv, stage), s);
        let fake = composite_var(mask, g, real);
        let wgan = dis.score(&pd, fake, cond).mean().neg();
        let rec_dis = masked_feature_loss(&|x| dis.forward(&pd, x, cond).1, mask, real, g);
        let rec_vgg = masked_feature_loss(&|x| perceptual.features(x), mask, real, g);
        let app = appearance_loss_var(vae, mask, real, g);
        let total = total_loss_var(&cfg.weights, wgan, rec_dis, rec_vgg, app)?;
        row.wgan = wgan.item().as_f64();
        row.rec_dis = rec_dis.item().as_f64();
        row.rec_vgg = rec_vgg.item().as_f64();
        row.appearance = app.item().as_f64();
        row.total = total.item().as_f64();
        let grads = pg.grads(total);
        if grads.iter().any(|g| g.data().iter().any(|v| !v.as_f64().is_finite())) {
            return Err(Error::NonFiniteGradient("generator"));
        }
        drop(pg);
        opt_g.step(gen.store_mut(), &grads);
        log.push(row);
    }
    Ok((DummyNet { generator: gen, discriminator: dis }, log))
}

/// Where the appearance code of a synthesized person comes from.
#[derive(Clone, Debug)]
pub enum AppearanceSource<T> {
    Code([T; LATENT_DIM]),
    Gaussian,
}

impl<T: Scalar> AppearanceSource<T> {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [T; LATENT_DIM] {
        match self {
            Self::Code(z) => *z,
            Self::Gaussian => std::array::from_fn(|_| T::lit(StandardNormal.sample(rng))),
        }
    }
}

/// Generates a person with the given mask, pose heatmaps and appearance into
/// `background` and composites it over the background.
pub fn synthesize_person<T: Scalar>(
    generator: &Generator<T>,
    background: &Image<T>,
    mask: &MaskImage<T>,
    heatmaps: &KeypointHeatmaps<T>,
    z: &[T; LATENT_DIM],
) -> Result<Image<T>> {
    let cond = build_conditioning(background, mask, heatmaps)?;
    let g = generator.generate(z, &cond)?;
    composite(mask, &g, background)
}

/// Batched [`synthesize_person`].
pub fn synthesize_batch<T: Scalar>(
    generator: &Generator<T>,
    items: &[(Image<T>, MaskImage<T>, KeypointHeatmaps<T>, [T; LATENT_DIM])],
) -> Result<Vec<Image<T>>> {
    let conds: Vec<ConditioningTensor<T>> = items.iter().map(|(b, m, h, _)| build_conditioning(b, m, h)).collect::<Result<_>>()?;
    let zs: Vec<[T; LATENT_DIM]> = items.iter().map(|it| it.3).collect();
    let gens = generator.generate_batch(&zs, &conds)?;
    items.iter().zip(gens).map(|((b, m, _, _), g)| composite(m, &g, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_grows_and_fades() {
        let cfg = GanTrainConfig { stage_steps: 10, fade_steps: 5, ..Default::default() };
        assert_eq!(cfg.stage_at(0), Stage { level: 0, alpha: 1.0 });
        assert_eq!(cfg.stage_at(10).level, 1);
        assert!((cfg.stage_at(10).alpha - 0.2).abs() < 1e-12);
        assert_eq!(cfg.stage_at(14).alpha, 1.0);
        assert_eq!(cfg.stage_at(1000), Stage { level: 2, alpha: 1.0 });
        let flat = GanTrainConfig { stage_steps: 0, ..Default::default() };
        assert_eq!(flat.stage_at(0), Stage { level: 2, alpha: 1.0 });
    }
}

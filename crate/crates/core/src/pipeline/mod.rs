//! Reproducible end-to-end stages: pose fitting, network pre-training,
//! generator training, sampling, scene augmentation, evaluation and ablations.

pub mod data;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::appearance::{read_latents, train_vae, write_latents, AppearanceVae, VaeTrainConfig, ENCODER_INPUT, LATENT_DIM};
use crate::compositor::composite;
use crate::error::{Error, Result};
use crate::eval::{scored, train_classifier_augmented, window_curve, write_detections, write_roc_csv, roc_sweep, plot_miss_rate_curve, ClassifierTrainConfig, Detection, MetricsReport};
use crate::gan::{train_dummynet, DummyNet, GanExample, GanTrainConfig};
use crate::generator::build_conditioning;
use crate::image::{Image, MaskImage};
use crate::losses::write_training_log;
use crate::mask::{convex_hull_mask, train_mask_estimator, MaskEstimator, MaskTrainConfig};
use crate::placement::{fit_height_model, insert_person, propose_placement, AugmentationRecord, PlacementConfig};
use crate::pose::{default_sigma, read_keypoint_jsonl, render_heatmaps, KeypointHeatmaps, NormalizedSkeleton, PoseModel, PoseModelConfig, SampleFate, Skeleton};
use crate::rng;
use data::{load_image_dir, load_scenes, write_jsonl, LoadedImage, SceneRecord, ToyDataConfig};

pub const DATA_DIR_ENV: &str = "DUMMYNET_DATA_DIR";
pub const MANIFEST_VERSION: u32 = 1;

/// Where generated persons take their appearance code from, and which
/// component is replaced by a simpler stand-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Full system: sampled poses, estimated masks, encoded appearances.
    Default,
    /// Every person uses the mean pose of the largest pose cluster.
    FixedPose,
    /// Convex hull of the keypoints instead of the estimated mask.
    HullMask,
    /// Appearance codes drawn from a standard normal.
    GaussianAppearance,
    /// One appearance code for every person.
    FixedAppearance,
    /// Persons are generated on a single background and cut out into the targets.
    FixedBackground,
}

impl SampleMode {
    pub const ALL: [SampleMode; 6] =
        [Self::Default, Self::FixedPose, Self::HullMask, Self::GaussianAppearance, Self::FixedAppearance, Self::FixedBackground];

    pub fn name(self) -> &'static str {
        match self {
            Self::Default => "default",
            Self::FixedPose => "fixed-pose",
            Self::HullMask => "hull-mask",
            Self::GaussianAppearance => "gaussian-appearance",
            Self::FixedAppearance => "fixed-appearance",
            Self::FixedBackground => "fixed-background",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Generated positives per run.
    pub count: usize,
    /// Person height range as a fraction of the output size.
    pub height_frac: (f64, f64),
    pub jitter: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { count: 200, height_frac: (0.5, 0.95), jitter: 0.12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub modes: Vec<SampleMode>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2, 3, 4], modes: SampleMode::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Only appearance sources with mean intensity at or below this value are used.
    pub max_brightness: Option<f64>,
    pub toy: ToyDataConfig,
    pub pose: PoseModelConfig,
    pub mask: MaskTrainConfig,
    pub vae: VaeTrainConfig,
    pub gan: GanTrainConfig,
    pub sample: SampleConfig,
    pub classifier: ClassifierTrainConfig,
    pub placement: PlacementConfig,
    pub ablation: AblationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            workers: 1,
            max_brightness: None,
            toy: ToyDataConfig::default(),
            pose: PoseModelConfig::default(),
            mask: MaskTrainConfig::default(),
            vae: VaeTrainConfig::default(),
            gan: GanTrainConfig::default(),
            sample: SampleConfig::default(),
            classifier: ClassifierTrainConfig::default(),
            placement: PlacementConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML, resolving relative paths against `base` and applying the
    /// data-directory environment override.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            cfg.data_dir = PathBuf::from(dir);
        }
        for p in [&mut cfg.data_dir, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(t) = self.max_brightness {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("max_brightness must lie in [0, 1], got {t}")));
            }
        }
        let (lo, hi) = self.sample.height_frac;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("invalid sample.height_frac {:?}", self.sample.height_frac)));
        }
        self.gan.weights.validate()
    }
}

/// Content hash in the style of a git blob id, over SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Hashes a file, or every file below a directory (sorted, relative names).
fn hash_path(path: &Path) -> Result<String> {
    if path.is_file() {
        return hash_file(path);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
        h.update(hash_file(&f)?.as_bytes());
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Record written next to a stage's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

/// Metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub name: String,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Per-mode averages over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub mr_at_1fpr: f64,
    pub mr_at_10fpr: f64,
    pub per_seed: Vec<EvalOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, mode: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| mode | MR @ 1% FPR | MR @ 10% FPR |\n|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!("| {} | {:.3} | {:.3} |\n", r.mode, r.mr_at_1fpr, r.mr_at_10fpr));
        }
        s
    }
}

/// One generated positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: String,
    pub pose_cluster_id: Option<usize>,
    pub appearance_source: String,
    pub background: String,
    pub seed: u64,
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

const POSE_MODEL: &str = "pose_model.json";
const MASK_MODEL: &str = "mask_estimator.ckpt";
const VAE_MODEL: &str = "vae.ckpt";
const LATENTS: &str = "latents.bin";
const GAN_DIR: &str = "dummynet";

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    fn data(&self, rel: &str) -> PathBuf {
        self.config.data_dir.join(rel)
    }

    fn require(&self, rel: &str, hint: &str) -> Result<PathBuf> {
        let p = self.out(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact { path: p, hint: format!("run `{hint}` first") })
        }
    }

    fn require_data(&self, rel: &str) -> Result<PathBuf> {
        let p = self.data(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact { path: p, hint: "prepare the dataset (e.g. `dummynet make-toy-data`)".into() })
        }
    }

    /// Runs `body` unless a manifest with identical config hash and input
    /// hashes exists and all of its outputs are present.
    fn stage(&self, name: &str, seed: u64, config: &impl Serialize, inputs: &[PathBuf], body: impl FnOnce() -> Result<Vec<PathBuf>>) -> Result<StageStatus> {
        let cfg_json = serde_json::to_vec(&serde_json::json!({ "stage": name, "seed": seed, "config": config }))?;
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), hash_path(p)?);
        }
        let manifest_path = self.out(&format!("manifests/{name}.json"));
        let config_hash = content_hash(&cfg_json);
        if let Ok(text) = std::fs::read_to_string(&manifest_path) {
            if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
                if m.version == MANIFEST_VERSION && m.config_hash == config_hash && m.inputs == hashes && m.outputs.iter().all(|o| Path::new(o).exists()) {
                    return Ok(StageStatus::UpToDate);
                }
            }
        }
        std::fs::create_dir_all(&self.config.output_dir).map_err(|e| Error::io(&self.config.output_dir, e))?;
        let outputs = body()?;
        let m = RunManifest {
            version: MANIFEST_VERSION,
            stage: name.to_string(),
            seed,
            config_hash,
            inputs: hashes,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let dir = manifest_path.parent().expect("manifest dir");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(&manifest_path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(StageStatus::Ran)
    }

    pub fn fit_poses(&self) -> Result<StageStatus> {
        let input = self.require_data(data::KEYPOINTS_FILE)?;
        self.stage("fit-poses", self.config.seed, &self.config.pose, std::slice::from_ref(&input), || {
            let file = std::fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
            let records = read_keypoint_jsonl(std::io::BufReader::new(file))?;
            let skeletons: Vec<Skeleton<f64>> = records.iter().map(|r| r.to_skeleton()).collect::<Result<_>>()?;
            let (model, fates) = PoseModel::fit(&skeletons, self.config.pose.clone())?;
            let out = self.out(POSE_MODEL);
            model.save(&out)?;
            let summary = serde_json::json!({
                "records": skeletons.len(),
                "filtered": fates.iter().filter(|f| matches!(f, SampleFate::Filtered)).count(),
                "modeled": fates.iter().filter(|f| matches!(f, SampleFate::Modeled(_))).count(),
                "clusters": model.clusters.len(),
            });
            let sp = self.out("pose_summary.json");
            std::fs::write(&sp, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&sp, e))?;
            Ok(vec![out, sp])
        })
    }

    fn heatmaps(skeleton: &Skeleton<f32>) -> KeypointHeatmaps<f32> {
        render_heatmaps(skeleton, default_sigma(skeleton.image_size().0) as f32)
    }

    fn persons(&self) -> Result<Vec<LoadedImage>> {
        let dir = self.require_data(data::PERSONS_DIR)?;
        let items = load_image_dir(&dir)?;
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(items)
    }

    pub fn train_mask(&self) -> Result<StageStatus> {
        let input = self.require_data(data::PERSONS_DIR)?;
        self.stage("train-mask", self.config.seed, &self.config.mask, &[input], || {
            let pairs = self
                .persons()?
                .into_iter()
                .map(|p| {
                    let sk = p.skeleton.ok_or_else(|| Error::InvalidInput(format!("{}: keypoints required", p.path.display())))?;
                    let mask = p.mask.ok_or_else(|| Error::InvalidInput(format!("{}: mask required", p.path.display())))?;
                    Ok((Self::heatmaps(&sk), mask))
                })
                .collect::<Result<Vec<_>>>()?;
            let (me, report) = train_mask_estimator(&pairs, &self.config.mask)?;
            let out = self.out(MASK_MODEL);
            me.save(&out)?;
            let rp = self.out("mask_report.json");
            std::fs::write(&rp, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&rp, e))?;
            Ok(vec![out, rp])
        })
    }

    fn mask_estimator(&self) -> Result<MaskEstimator<f32>> {
        MaskEstimator::load(&self.require(MASK_MODEL, "train-mask")?)
    }

    fn vae(&self) -> Result<AppearanceVae<f32>> {
        AppearanceVae::load(&self.require(VAE_MODEL, "train-vae")?)
    }

    /// Person image masked by the estimated mask, at the encoder resolution.
    fn masked_person(me: &MaskEstimator<f32>, p: &LoadedImage) -> Result<(MaskImage<f32>, Image<f32>)> {
        let sk = p.skeleton.as_ref().ok_or_else(|| Error::InvalidInput(format!("{}: keypoints required", p.path.display())))?;
        let mask = me.estimate_mask(&Self::heatmaps(sk))?;
        let masked = p.image.masked(&mask, false)?.resize(ENCODER_INPUT, ENCODER_INPUT);
        Ok((mask, masked))
    }

    pub fn train_vae(&self) -> Result<StageStatus> {
        let me_path = self.require(MASK_MODEL, "train-mask")?;
        let input = self.require_data(data::PERSONS_DIR)?;
        self.stage("train-vae", self.config.seed, &self.config.vae, &[input, me_path], || {
            let me = self.mask_estimator()?;
            let images: Vec<Image<f32>> = self.persons()?.iter().map(|p| Ok(Self::masked_person(&me, p)?.1)).collect::<Result<_>>()?;
            let (vae, report) = train_vae(&images, &self.config.vae)?;
            let out = self.out(VAE_MODEL);
            vae.save(&out)?;
            let mut r = rng::stream(self.config.seed, "latents", 0);
            let codes: Vec<[f32; LATENT_DIM]> = images.iter().map(|im| Ok(vae.encode(im, &mut r)?.mu)).collect::<Result<_>>()?;
            let lp = self.out(LATENTS);
            let f = std::fs::File::create(&lp).map_err(|e| Error::io(&lp, e))?;
            write_latents(std::io::BufWriter::new(f), &codes).map_err(|e| Error::io(&lp, e))?;
            let rp = self.out("vae_report.json");
            std::fs::write(&rp, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&rp, e))?;
            Ok(vec![out, lp, rp])
        })
    }

    /// Appearance codes stored by `train-vae`.
    pub fn latents(&self) -> Result<Vec<[f32; LATENT_DIM]>> {
        let p = self.require(LATENTS, "train-vae")?;
        let f = std::fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        read_latents(std::io::BufReader::new(f)).map_err(|e| Error::io(&p, e))
    }

    pub fn train_gan(&self) -> Result<StageStatus> {
        let me_path = self.require(MASK_MODEL, "train-mask")?;
        let vae_path = self.require(VAE_MODEL, "train-vae")?;
        let input = self.require_data(data::PERSONS_DIR)?;
        self.stage("train-gan", self.config.seed, &self.config.gan, &[input, me_path, vae_path], || {
            let me = self.mask_estimator()?;
            let vae = self.vae()?;
            let s = self.config.gan.generator.output_size();
            let examples: Vec<GanExample<f32>> = self
                .persons()?
                .iter()
                .map(|p| {
                    let sk = p.skeleton.as_ref().ok_or_else(|| Error::InvalidInput(format!("{}: keypoints required", p.path.display())))?;
                    let hm = Self::heatmaps(sk);
                    let mask = me.estimate_mask(&hm)?;
                    if p.image.size() != (s, s) {
                        return Err(Error::ResolutionMismatch { expected: (s, s), found: p.image.size() });
                    }
                    Ok(GanExample { image: p.image.clone(), mask, heatmaps: hm })
                })
                .collect::<Result<_>>()?;
            let (net, log) = train_dummynet(&examples, &vae, &self.config.gan)?;
            let dir = self.out(GAN_DIR);
            net.save(&dir)?;
            let lp = dir.join("training_log.csv");
            let f = std::fs::File::create(&lp).map_err(|e| Error::io(&lp, e))?;
            write_training_log(std::io::BufWriter::new(f), &log).map_err(|e| Error::io(&lp, e))?;
            Ok(vec![dir.join("generator.ckpt"), dir.join("discriminator.ckpt"), lp])
        })
    }

    pub fn dummynet(&self) -> Result<DummyNet<f32>> {
        DummyNet::load(&self.require(GAN_DIR, "train-gan")?)
    }

    pub fn samples_dir(&self, mode: SampleMode, seed: u64) -> PathBuf {
        self.out(&format!("samples/{}-s{seed}", mode.name()))
    }

    /// Generates `sample.count` positives over task negatives as backgrounds.
    pub fn sample(&self, mode: SampleMode, seed: u64) -> Result<StageStatus> {
        let deps = [self.require(POSE_MODEL, "fit-poses")?, self.require(MASK_MODEL, "train-mask")?, self.require(VAE_MODEL, "train-vae")?, self.require(GAN_DIR, "train-gan")?];
        let pos_dir = self.require_data(&format!("{}/train_pos", data::TASK_DIR))?;
        let neg_dir = self.require_data(&format!("{}/train_neg", data::TASK_DIR))?;
        let mut inputs = deps.to_vec();
        inputs.extend([pos_dir.clone(), neg_dir.clone()]);
        let cfg = serde_json::json!({ "sample": self.config.sample, "mode": mode, "max_brightness": self.config.max_brightness });
        let out_dir = self.samples_dir(mode, seed);
        self.stage(&format!("sample-{}-s{seed}", mode.name()), seed, &cfg, &inputs, || {
            let images = self.generate_positives(mode, seed, &pos_dir, &neg_dir)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let mut records = Vec::with_capacity(images.len());
            for (i, (im, mut rec)) in images.into_iter().enumerate() {
                let name = format!("{i:05}.png");
                im.save_png(&out_dir.join(&name))?;
                rec.image = name;
                records.push(rec);
            }
            let index = out_dir.join(data::INDEX_FILE);
            write_jsonl(&index, &records)?;
            Ok(vec![index])
        })
    }

    fn appearance_sources(&self, me: &MaskEstimator<f32>, vae: &AppearanceVae<f32>, pos_dir: &Path) -> Result<Vec<(String, [f32; LATENT_DIM])>> {
        let mut r = rng::stream(self.config.seed, "appearance", 0);
        let mut out = Vec::new();
        for p in load_image_dir(pos_dir)? {
            if let Some(t) = self.config.max_brightness {
                if f64::from(p.image.mean_intensity()) > t {
                    continue;
                }
            }
            let (_, masked) = Self::masked_person(me, &p)?;
            out.push((p.path.display().to_string(), vae.encode(&masked, &mut r)?.mu));
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("no appearance sources left after the brightness filter".into()));
        }
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn generate_positives(&self, mode: SampleMode, seed: u64, pos_dir: &Path, neg_dir: &Path) -> Result<Vec<(Image<f32>, SampleRecord)>> {
        let pose_model = PoseModel::<f64>::load(&self.out(POSE_MODEL))?;
        let me = self.mask_estimator()?;
        let vae = self.vae()?;
        let net = self.dummynet()?;
        let s = net.generator.config().output_size();
        let sources = self.appearance_sources(&me, &vae, pos_dir)?;
        let backgrounds = load_image_dir(neg_dir)?;
        if backgrounds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for b in &backgrounds {
            if b.image.size() != (s, s) {
                return Err(Error::ResolutionMismatch { expected: (s, s), found: b.image.size() });
            }
        }
        let fixed = pose_model.largest_cluster();
        let sc = &self.config.sample;
        let plan = |i: usize| -> Result<_> {
            let mut r = rng::stream(seed, &format!("sample-{}", mode.name()), i as u64);
            // Re-draw poses whose hull would be degenerate after placement.
            for _ in 0..20 {
                let (cluster, ns): (usize, NormalizedSkeleton<f64>) = match mode {
                    SampleMode::FixedPose => (fixed, pose_model.clusters[fixed].mean_pose()),
                    _ => pose_model.sample(&mut r),
                };
                let sf = s as f64;
                let height = sf * r.random_range(sc.height_frac.0..=sc.height_frac.1);
                let cx = sf / 2.0 + sf * r.random_range(-sc.jitter..=sc.jitter);
                let foot_y = sf - (sf - height) / 2.0 + r.random_range(-0.03..0.03) * sf;
                let sk = ns.cast::<f32>().place((s, s), cx as f32, foot_y as f32, height as f32);
                let hm = Self::heatmaps(&sk);
                let mask = match mode {
                    SampleMode::HullMask => match convex_hull_mask(&sk, (s, s)) {
                        Ok(m) => m,
                        Err(Error::DegenerateHull) => continue,
                        Err(e) => return Err(e),
                    },
                    _ => me.estimate_mask(&hm)?,
                };
                if mask.area() <= 0.0 {
                    continue;
                }
                let (src_name, z) = match mode {
                    SampleMode::GaussianAppearance => ("gaussian".to_string(), gaussian_code(&mut r)),
                    SampleMode::FixedAppearance => sources[0].clone(),
                    _ => sources[r.random_range(0..sources.len())].clone(),
                };
                let bg = r.random_range(0..backgrounds.len());
                return Ok(Some((hm, mask, z, bg, Some(cluster), src_name)));
            }
            Ok(None)
        };
        let plans: Vec<_> = (0..sc.count).map(plan).collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
        let gen_bg = |bg: usize| if mode == SampleMode::FixedBackground { 0 } else { bg };
        let render = |chunk: &[_]| -> Result<Vec<Image<f32>>> {
            let items: Vec<(Image<f32>, MaskImage<f32>, KeypointHeatmaps<f32>, [f32; LATENT_DIM])> = chunk
                .iter()
                .map(|(hm, mask, z, bg, _, _): &(KeypointHeatmaps<f32>, MaskImage<f32>, [f32; LATENT_DIM], usize, Option<usize>, String)| {
                    (backgrounds[gen_bg(*bg)].image.clone(), mask.clone(), hm.clone(), *z)
                })
                .collect();
            let conds = items.iter().map(|(b, m, h, _)| build_conditioning(b, m, h)).collect::<Result<Vec<_>>>()?;
            let zs: Vec<_> = items.iter().map(|it| it.3).collect();
            let gens = net.generator.generate_batch(&zs, &conds)?;
            chunk.iter().zip(gens).map(|(p, g)| composite(&p.1, &g, &backgrounds[gen_bg(p.3)].image)).collect()
        };
        let workers = self.config.workers.max(1);
        let per = plans.len().div_ceil(workers).max(1);
        let rendered: Vec<Result<Vec<Image<f32>>>> = if workers == 1 {
            plans.chunks(16).map(render).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = plans.chunks(per).map(|c| scope.spawn(move || c.chunks(16).map(render).collect::<Vec<_>>())).collect();
                handles.into_iter().flat_map(|h| h.join().expect("sampling thread")).collect()
            })
        };
        let mut images = Vec::with_capacity(plans.len());
        for r in rendered {
            images.extend(r?);
        }
        Ok(images
            .into_iter()
            .zip(plans)
            .enumerate()
            .map(|(i, (im, (_, _, _, bg, cluster, src)))| {
                let rec = SampleRecord {
                    image: String::new(),
                    pose_cluster_id: cluster,
                    appearance_source: src,
                    background: backgrounds[gen_bg(bg)].path.display().to_string(),
                    seed: rng::derive_seed(seed, &format!("sample-{}", mode.name()), i as u64),
                };
                (im, rec)
            })
            .collect())
    }

    /// Trains the classifier on the task's training positives, optionally
    /// extended with generated samples, and scores the test split.
    pub fn eval(&self, samples: Option<SampleMode>, seed: u64) -> Result<EvalOutcome> {
        let task = self.require_data(data::TASK_DIR)?;
        let name = match samples {
            Some(m) => format!("{}-s{seed}", m.name()),
            None => format!("baseline-s{seed}"),
        };
        let mut inputs = vec![task.clone()];
        if let Some(m) = samples {
            let d = self.samples_dir(m, seed);
            if !d.join(data::INDEX_FILE).exists() {
                return Err(Error::MissingArtifact { path: d, hint: format!("run `sample --mode {}` first", m.name()) });
            }
            inputs.push(d);
        }
        let dir = self.out(&format!("eval/{name}"));
        let report_path = dir.join("report.json");
        let cfg = ClassifierTrainConfig { seed, ..self.config.classifier.clone() };
        self.stage(&format!("eval-{name}"), seed, &cfg, &inputs, || {
            let pos: Vec<Image<f32>> = load_image_dir(&task.join("train_pos"))?.into_iter().map(|p| p.image).collect();
            let generated: Vec<Image<f32>> = match samples {
                Some(m) => load_image_dir(&self.samples_dir(m, seed))?.into_iter().map(|p| p.image).collect(),
                None => Vec::new(),
            };
            let neg: Vec<Image<f32>> = load_image_dir(&task.join("train_neg"))?.into_iter().map(|p| p.image).collect();
            let (clf, train_report) = train_classifier_augmented(&pos, &generated, &neg, &cfg)?;
            let test_pos = load_image_dir(&task.join("test_pos"))?;
            let test_neg = load_image_dir(&task.join("test_neg"))?;
            let images: Vec<Image<f32>> = test_pos.iter().chain(&test_neg).map(|p| p.image.clone()).collect();
            let scores = clf.score_parallel(&images, self.config.workers)?;
            let (sp, sn) = scores.split_at(test_pos.len());
            let samples = scored(sp, sn);
            let report = MetricsReport::from_samples(&samples)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            std::fs::write(&report_path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&report_path, e))?;
            let roc = dir.join("roc.csv");
            let f = std::fs::File::create(&roc).map_err(|e| Error::io(&roc, e))?;
            write_roc_csv(std::io::BufWriter::new(f), &roc_sweep(&samples)?).map_err(|e| Error::io(&roc, e))?;
            let det = dir.join("detections.jsonl");
            let dets: Vec<Detection> = test_pos
                .iter()
                .chain(&test_neg)
                .zip(&scores)
                .map(|(p, &score)| {
                    let (h, w) = p.image.size();
                    Detection { image_id: p.path.display().to_string(), bbox: [0.0, 0.0, w as f64, h as f64], score }
                })
                .collect();
            let f = std::fs::File::create(&det).map_err(|e| Error::io(&det, e))?;
            write_detections(std::io::BufWriter::new(f), &dets)?;
            let tr = dir.join("train_report.json");
            std::fs::write(&tr, serde_json::to_string_pretty(&train_report)?).map_err(|e| Error::io(&tr, e))?;
            let plot = dir.join("miss_rate.png");
            plot_miss_rate_curve(&window_curve(&samples)?, &plot)?;
            clf.save(&dir.join("classifier.ckpt"))?;
            Ok(vec![report_path.clone(), roc, det, tr, plot, dir.join("classifier.ckpt")])
        })?;
        let text = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        Ok(EvalOutcome { name, seed, report: serde_json::from_str(&text)? })
    }

    /// Baseline plus every requested mode, each over all ablation seeds.
    pub fn ablate(&self, modes: &[SampleMode]) -> Result<AblationReport> {
        let seeds = self.config.ablation.seeds.clone();
        if seeds.is_empty() {
            return Err(Error::Config("ablation.seeds is empty".into()));
        }
        let mut rows = Vec::new();
        let mut push = |mode: String, runs: Vec<EvalOutcome>| {
            let n = runs.len() as f64;
            rows.push(AblationRow {
                mode,
                mr_at_1fpr: runs.iter().map(|r| r.report.mr_at_1fpr).sum::<f64>() / n,
                mr_at_10fpr: runs.iter().map(|r| r.report.mr_at_10fpr).sum::<f64>() / n,
                per_seed: runs,
            });
        };
        push("baseline".into(), seeds.iter().map(|&s| self.eval(None, s)).collect::<Result<_>>()?);
        for &m in modes {
            let runs = seeds
                .iter()
                .map(|&s| {
                    self.sample(m, s)?;
                    self.eval(Some(m), s)
                })
                .collect::<Result<_>>()?;
            push(m.name().into(), runs);
        }
        let report = AblationReport { seeds, rows };
        let dir = self.out("ablate");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let p = dir.join("report.json");
        std::fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
        let md = dir.join("report.md");
        std::fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))?;
        Ok(report)
    }

    /// Inserts one generated person into every scene.
    pub fn augment(&self, seed: u64) -> Result<StageStatus> {
        let deps = [self.require(POSE_MODEL, "fit-poses")?, self.require(MASK_MODEL, "train-mask")?, self.require(VAE_MODEL, "train-vae")?, self.require(GAN_DIR, "train-gan")?];
        let scenes_dir = self.require_data(data::SCENES_DIR)?;
        let pos_dir = self.require_data(&format!("{}/train_pos", data::TASK_DIR))?;
        let mut inputs = deps.to_vec();
        inputs.extend([scenes_dir.clone(), pos_dir.clone()]);
        let cfg = serde_json::json!({ "placement": self.config.placement, "sample": self.config.sample, "max_brightness": self.config.max_brightness });
        let out_dir = self.out(&format!("augment-s{seed}"));
        self.stage(&format!("augment-s{seed}"), seed, &cfg, &inputs, || {
            let scenes = load_scenes(&scenes_dir)?;
            let fit: Vec<(f64, f64)> = scenes.iter().flat_map(|(_, s)| s.persons.iter().map(|p| (p.y_bottom, p.height))).collect();
            let model = fit_height_model(&fit)?;
            let pose_model = PoseModel::<f64>::load(&self.out(POSE_MODEL))?;
            let me = self.mask_estimator()?;
            let vae = self.vae()?;
            let net = self.dummynet()?;
            let s = net.generator.config().output_size();
            let sources = self.appearance_sources(&me, &vae, &pos_dir)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let mut manifest = Vec::new();
            let mut index = Vec::new();
            for (i, (path, scene)) in scenes.iter().enumerate() {
                let item_seed = rng::derive_seed(seed, "augment", i as u64);
                let mut r = rng::seeded(item_seed);
                let placement = propose_placement(scene, &model, &self.config.placement, &mut r)?;
                let (cluster, ns) = pose_model.sample(&mut r);
                // Generate on the scene region around the footprint, rescaled so
                // the person spans most of the generator canvas.
                let frac = 0.85;
                let side = placement.height / frac;
                let (h, _) = scene.size();
                let (fx, frow) = placement.footprint(h);
                let top = frow as f64 + 1.0 - side + (1.0 - frac) / 2.0 * side;
                let left = fx as f64 - side / 2.0;
                let side_px = side.ceil().max(1.0) as usize;
                let bg = scene.image.crop(top.floor() as isize, left.floor() as isize, side_px, side_px).resize(s, s);
                let sf = s as f64;
                let sk = ns.cast::<f32>().place((s, s), (sf / 2.0) as f32, (sf * (1.0 - (1.0 - frac) / 2.0)) as f32, (sf * frac) as f32);
                let hm = Self::heatmaps(&sk);
                let mask = me.estimate_mask(&hm)?;
                let (src, z) = sources[r.random_range(0..sources.len())].clone();
                let cond = build_conditioning(&bg, &mask, &hm)?;
                let patch = net.generator.generate(&z, &cond)?;
                let (augmented, bx) = insert_person(scene, &patch, &mask.binarize(0.5), &placement)?;
                let name = format!("{i:04}.png");
                let out_path = out_dir.join(&name);
                augmented.image.save_png(&out_path)?;
                let lname = format!("{i:04}_labels.png");
                data::save_labels(&augmented.semantics, augmented.size(), &out_dir.join(&lname))?;
                index.push(SceneRecord { image: name, labels: lname, persons: augmented.persons.clone() });
                manifest.push(AugmentationRecord {
                    scene_path: path.display().to_string(),
                    placement: (placement.x, placement.y_bottom, placement.height),
                    pose_cluster_id: Some(cluster),
                    appearance_source: src,
                    seed: item_seed,
                    out_path: out_path.display().to_string(),
                    r#box: bx,
                });
            }
            let mp = out_dir.join("manifest.jsonl");
            write_jsonl(&mp, &manifest)?;
            let ip = out_dir.join(data::INDEX_FILE);
            write_jsonl(&ip, &index)?;
            Ok(vec![mp, ip])
        })
    }

    pub fn make_toy_data(&self) -> Result<()> {
        data::write_toy_data(&self.config.data_dir, &self.config.toy, self.config.seed)
    }
}

/// Draws a standard-normal appearance code.
pub fn gaussian_code<R: Rng + ?Sized>(rng: &mut R) -> [f32; LATENT_DIM] {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

//! On-disk dataset layout and a generator for the procedural toy world.
//!
//! ```text
//! <data_dir>/keypoints.jsonl          pose corpus, one keypoint record per line
//! <data_dir>/persons/index.jsonl      person crops with masks and keypoints
//! <data_dir>/task/{train_pos,train_neg,test_pos,test_neg}/index.jsonl
//! <data_dir>/scenes/index.jsonl       street scenes with label maps and person boxes
//! ```
//! Paths inside index files are relative to the index file's directory.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, MaskImage};
use crate::placement::{Label, PersonBox, SceneContext};
use crate::pose::{KeypointRecord, Skeleton};
use crate::rng;
use crate::synth::{self, random_pose, CropSpec, View};

pub const KEYPOINTS_FILE: &str = "keypoints.jsonl";
pub const PERSONS_DIR: &str = "persons";
pub const TASK_DIR: &str = "task";
pub const SCENES_DIR: &str = "scenes";
pub const INDEX_FILE: &str = "index.jsonl";

/// One image entry of an index file. Extra fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    /// 51 numbers, COCO `(x, y, v)` triplets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<f64>>,
}

/// One street scene of an index file. Extra fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image: String,
    /// Grayscale PNG whose values are label ids.
    pub labels: String,
    pub persons: Vec<PersonBox>,
}

pub fn read_jsonl<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_jsonl<R: Serialize>(path: &Path, records: &[R]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A loaded image entry.
#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub path: PathBuf,
    pub image: Image<f32>,
    pub mask: Option<MaskImage<f32>>,
    pub skeleton: Option<Skeleton<f32>>,
}

fn skeleton_from(kp: &[f64], size: (usize, usize), index: &Path) -> Result<Skeleton<f32>> {
    let rec = KeypointRecord { image_id: serde_json::Value::Null, bbox: [0.0; 4], keypoints: kp.to_vec(), image_size: Some([size.0, size.1]) };
    rec.to_skeleton().map_err(|e| Error::InvalidInput(format!("{}: {e}", index.display())))
}

/// Loads every entry of `<dir>/index.jsonl`.
pub fn load_image_dir(dir: &Path) -> Result<Vec<LoadedImage>> {
    let index = dir.join(INDEX_FILE);
    if !index.exists() {
        return Err(Error::MissingArtifact { path: index, hint: "prepare the dataset (e.g. `dummynet make-toy-data`)".into() });
    }
    read_jsonl::<ImageRecord>(&index)?
        .into_iter()
        .map(|r| {
            let path = dir.join(&r.image);
            let image = Image::load_png(&path)?;
            let mask = r.mask.as_ref().map(|m| MaskImage::load_png(&dir.join(m))).transpose()?;
            let skeleton = r.keypoints.as_ref().map(|k| skeleton_from(k, image.size(), &index)).transpose()?;
            Ok(LoadedImage { path, image, mask, skeleton })
        })
        .collect()
}

pub fn load_scenes(dir: &Path) -> Result<Vec<(PathBuf, SceneContext<f32>)>> {
    let index = dir.join(INDEX_FILE);
    if !index.exists() {
        return Err(Error::MissingArtifact { path: index, hint: "prepare the dataset (e.g. `dummynet make-toy-data`)".into() });
    }
    read_jsonl::<SceneRecord>(&index)?
        .into_iter()
        .map(|r| {
            let path = dir.join(&r.image);
            let image = Image::<f32>::load_png(&path)?;
            let lp = dir.join(&r.labels);
            let labels = image::open(&lp)?.to_luma8();
            let semantics = labels
                .pixels()
                .map(|p| match p.0[0] {
                    1 => Label::Ground,
                    2 => Label::Road,
                    3 => Label::Sidewalk,
                    _ => Label::Other,
                })
                .collect();
            Ok((path, SceneContext::new(image, semantics, r.persons)?))
        })
        .collect()
}

pub fn save_labels(labels: &[Label], size: (usize, usize), path: &Path) -> Result<()> {
    let buf: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    let img = image::GrayImage::from_raw(size.1 as u32, size.0 as u32, buf).ok_or_else(|| Error::ShapeMismatch("label map size".into()))?;
    img.save(path).map_err(Error::from)
}

/// Sizes of the procedural toy dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDataConfig {
    pub keypoint_records: usize,
    pub source_persons: usize,
    pub train_pos: usize,
    pub train_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
    pub scenes: usize,
    pub scene_size: [usize; 2],
    pub crop_size: usize,
    /// Person height range as a fraction of the crop size.
    pub height_frac: (f64, f64),
    pub jitter: f64,
    pub brightness: (f64, f64),
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            keypoint_records: 3000,
            source_persons: 400,
            train_pos: 100,
            train_neg: 400,
            test_pos: 300,
            test_neg: 600,
            scenes: 8,
            scene_size: [128, 192],
            crop_size: 64,
            height_frac: (0.5, 0.95),
            jitter: 0.12,
            brightness: (0.3, 1.1),
        }
    }
}

impl ToyDataConfig {
    pub fn crop_spec(&self) -> CropSpec {
        CropSpec { size: self.crop_size, height_frac: self.height_frac, jitter: self.jitter, brightness: self.brightness }
    }
}

fn keypoints_of(s: &Skeleton<f64>) -> Vec<f64> {
    KeypointRecord::from_skeleton(serde_json::Value::Null, s).keypoints
}

fn write_crops(dir: &Path, n: usize, spec: &CropSpec, seed: u64, label: &str, with_person: bool, with_mask: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, label, i as u64);
        let name = format!("{i:05}.png");
        if with_person {
            let s = synth::person_crop::<f32, _>(&mut r, spec);
            s.image.save_png(&dir.join(&name))?;
            let mask = if with_mask {
                let m = format!("{i:05}_mask.png");
                s.mask.save_png(&dir.join(&m))?;
                Some(m)
            } else {
                None
            };
            let sk = s.pose.skeleton::<f64>((spec.size, spec.size));
            records.push(ImageRecord { image: name, mask, keypoints: Some(keypoints_of(&sk)) });
        } else {
            synth::background_window::<f32, _>(&mut r, spec.size, spec.brightness).save_png(&dir.join(&name))?;
            records.push(ImageRecord { image: name, mask: None, keypoints: None });
        }
    }
    write_jsonl(&dir.join(INDEX_FILE), &records)
}

/// Street scene with a few people whose height grows linearly towards the
/// bottom of the image.
fn toy_scene(seed: u64, i: usize, size: [usize; 2], brightness: (f64, f64)) -> (Image<f32>, Vec<Label>, Vec<PersonBox>) {
    use rand::Rng;
    let mut r = rng::stream(seed, "scene", i as u64);
    let [h, w] = size;
    let b = r.random_range(brightness.0..=brightness.1);
    let st = synth::street::<f32, _>(&mut r, h, w, b);
    let mut image = st.image;
    let mut persons = Vec::new();
    let count = r.random_range(1..=3);
    for _ in 0..count {
        let row = r.random_range((st.horizon + 8).min(h - 1)..h);
        let y_bottom = (h - 1 - row) as f64;
        let height = 0.5 * (h as f64 - y_bottom) + 6.0;
        let cx = r.random_range(0.1..0.9) * w as f64;
        let view = View::random(&mut r);
        let pose = random_pose(&mut r, view, cx, row as f64 + 0.5 + 0.05 * height, height);
        let look = synth::Appearance::random(&mut r).darkened(b.min(1.0));
        let mask = synth::paint_person(&mut r, &mut image, &pose, &look);
        if let Some((x0, y0, x1, y1)) = mask.bounding_box(0.5) {
            persons.push(PersonBox::from_ltrb(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0, h));
        }
    }
    (image, st.labels, persons)
}

/// Writes the complete toy dataset to `dir`.
pub fn write_toy_data(dir: &Path, cfg: &ToyDataConfig, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut r = rng::stream(seed, "keypoints", 0);
    let corpus = synth::keypoint_corpus(&mut r, cfg.keypoint_records, cfg.crop_size);
    let kp: Vec<KeypointRecord> = corpus.iter().enumerate().map(|(i, s)| KeypointRecord::from_skeleton(serde_json::json!(i), s)).collect();
    write_jsonl(&dir.join(KEYPOINTS_FILE), &kp)?;
    let spec = cfg.crop_spec();
    write_crops(&dir.join(PERSONS_DIR), cfg.source_persons, &spec, seed, "persons", true, true)?;
    let task = dir.join(TASK_DIR);
    write_crops(&task.join("train_pos"), cfg.train_pos, &spec, seed, "train_pos", true, false)?;
    write_crops(&task.join("train_neg"), cfg.train_neg, &spec, seed, "train_neg", false, false)?;
    write_crops(&task.join("test_pos"), cfg.test_pos, &spec, seed, "test_pos", true, false)?;
    write_crops(&task.join("test_neg"), cfg.test_neg, &spec, seed, "test_neg", false, false)?;
    let sd = dir.join(SCENES_DIR);
    std::fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
    let mut scenes = Vec::new();
    for i in 0..cfg.scenes {
        let (image, labels, persons) = toy_scene(seed, i, cfg.scene_size, cfg.brightness);
        let (name, lname) = (format!("{i:04}.png"), format!("{i:04}_labels.png"));
        image.save_png(&sd.join(&name))?;
        save_labels(&labels, image.size(), &sd.join(&lname))?;
        scenes.push(SceneRecord { image: name, labels: lname, persons });
    }
    write_jsonl(&sd.join(INDEX_FILE), &scenes)
}

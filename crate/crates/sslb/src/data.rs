//! Datasets and scenario construction: directory loading, synthetic image
//! generation, and the labelled/unlabelled/validation splits with their
//! balance guarantees.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::SeedableRng;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

/// Class-directory names used when writing datasets; loading accepts any two
/// subdirectory names (sorted order defines classes 0 and 1).
pub const CLASS_DIR_NAMES: [&str; 2] = ["neg", "pos"];

/// One image with its identity and class.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Stable identifier `<class_dir>/<file_stem>`, e.g. `neg/0007`.
    pub id: String,
    /// `[3, s, s]` pixels in [0, 1].
    pub image: Tensor,
    /// 0 = negative/majority, 1 = positive/minority.
    pub label: u8,
}

/// A validated collection of observations of one common spatial size.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    observations: Vec<Observation>,
    source: String,
}

impl ImageDataset {
    pub fn new(observations: Vec<Observation>, source: impl Into<String>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut size = None;
        for obs in &observations {
            let shape = obs.image.shape();
            if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] {
                return Err(Error::Dataset(format!(
                    "{}: expected a [3, s, s] image, got {shape:?}",
                    obs.id
                )));
            }
            match size {
                None => size = Some(shape[1]),
                Some(s) if s != shape[1] => {
                    return Err(Error::Dataset(format!(
                        "{}: spatial size {} differs from the dataset's {s}",
                        obs.id, shape[1]
                    )))
                }
                _ => {}
            }
            if obs.label > 1 {
                return Err(Error::Dataset(format!("{}: label {} not in {{0,1}}", obs.id, obs.label)));
            }
            if obs.image.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Dataset(format!("{}: pixel values outside [0,1]", obs.id)));
            }
            if !ids.insert(obs.id.clone()) {
                return Err(Error::Dataset(format!("duplicate observation id {}", obs.id)));
            }
        }
        Ok(Self { observations, source: source.into() })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Spatial side length, if the dataset is nonempty.
    pub fn image_size(&self) -> Option<usize> {
        self.observations.first().map(|o| o.image.shape()[1])
    }

    /// (negatives, positives).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.observations.iter().filter(|o| o.label == 1).count();
        (self.observations.len() - pos, pos)
    }

    /// Splits into (class-0, class-1) datasets, preserving order.
    pub fn split_by_class(&self) -> (ImageDataset, ImageDataset) {
        let (mut neg, mut pos) = (Vec::new(), Vec::new());
        for obs in &self.observations {
            if obs.label == 0 {
                neg.push(obs.clone());
            } else {
                pos.push(obs.clone());
            }
        }
        let tag = |c: &str| format!("{} [{c}]", self.source);
        (
            Self { observations: neg, source: tag("class 0") },
            Self { observations: pos, source: tag("class 1") },
        )
    }
}

/// Observations whose labels are visible to training.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub observations: Vec<Observation>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// (negatives, positives).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.observations.iter().filter(|o| o.label == 1).count();
        (self.observations.len() - pos, pos)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.observations.iter().map(|o| o.id.as_str()).collect()
    }
}

/// Observations whose labels are hidden from training; analyses read them
/// through [`UnlabeledSet::hidden_labels`] only.
#[derive(Debug, Clone)]
pub struct UnlabeledSet {
    observations: Vec<Observation>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn images(&self) -> Vec<&Tensor> {
        self.observations.iter().map(|o| &o.image).collect()
    }

    pub fn image(&self, index: usize) -> &Tensor {
        &self.observations[index].image
    }

    pub fn ids(&self) -> Vec<&str> {
        self.observations.iter().map(|o| o.id.as_str()).collect()
    }

    /// Analysis-only view of the true labels; never fed to training.
    pub fn hidden_labels(&self) -> Vec<u8> {
        self.observations.iter().map(|o| o.label).collect()
    }

    /// (negatives, positives) of the hidden labels.
    pub fn hidden_class_counts(&self) -> (usize, usize) {
        let pos = self.observations.iter().filter(|o| o.label == 1).count();
        (self.observations.len() - pos, pos)
    }
}

/// Drops the training-visible labels, retaining them for analysis only.
pub fn strip_labels(set: &LabeledSet) -> UnlabeledSet {
    UnlabeledSet { observations: set.observations.clone() }
}

/// Latent standard deviation at difficulty 1, calibrated so a centroid probe
/// on pixels lands near 70% accuracy (overlap of the class pattern blends
/// dominates the error; pixel noise alone cannot push a linear probe that
/// low).
const LATENT_STD_FULL: f64 = 0.38;

fn gaussian_blob(size: usize, cx: f64, cy: f64, sigma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            out.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    out
}

/// Synthetic two-class images: class 0 blends toward a single centred blob,
/// class 1 toward a two-blob diagonal pattern. `difficulty` widens the blend
/// overlap and the pixel noise, moving a linear probe from ~99% correct
/// (difficulty→0) down to ~70% (difficulty=1). Deterministic in `seed`.
pub fn generate_synthetic(
    seed: u64,
    n_per_class: usize,
    size: usize,
    difficulty: f64,
) -> Result<ImageDataset> {
    if n_per_class < 1 {
        return Err(Error::Config(format!("n_per_class must be ≥ 1; got {n_per_class}")));
    }
    if size < 4 {
        return Err(Error::Config(format!("image size must be ≥ 4; got {size}")));
    }
    if !(difficulty > 0.0 && difficulty <= 1.0) {
        return Err(Error::Config(format!("difficulty must lie in (0, 1]; got {difficulty}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let noise_sigma = 0.08 * (0.2 + 0.8 * difficulty);
    let jitter = 0.05 * difficulty * s;
    let latent_std = LATENT_STD_FULL * difficulty;
    let mut observations = Vec::with_capacity(2 * n_per_class);
    for class in 0..2u8 {
        let latent_mean = if class == 0 { 0.3 } else { 0.7 };
        for i in 0..n_per_class {
            let z: f64 = rng.sample(StandardNormal);
            let t = (latent_mean + latent_std * z).clamp(0.0, 1.0);
            let amplitude = rng.gen_range(0.85..1.0);
            let mut offsets = [0.0; 6];
            for o in &mut offsets {
                *o = rng.gen_range(-jitter..=jitter);
            }
            let p0 = gaussian_blob(size, 0.5 * s + offsets[0], 0.5 * s + offsets[1], 0.18 * s);
            let a = gaussian_blob(size, 0.3 * s + offsets[2], 0.3 * s + offsets[3], 0.13 * s);
            let b = gaussian_blob(size, 0.7 * s + offsets[4], 0.7 * s + offsets[5], 0.13 * s);
            let mut channel = Vec::with_capacity(size * size);
            for px in 0..size * size {
                let p1 = 0.5 * (a[px] + b[px]);
                let noise: f64 = rng.sample(StandardNormal);
                let v = amplitude * ((1.0 - t) * p0[px] + t * p1) + noise_sigma * noise;
                channel.push(v.clamp(0.0, 1.0));
            }
            let mut values = Vec::with_capacity(3 * size * size);
            for _ in 0..3 {
                values.extend_from_slice(&channel);
            }
            observations.push(Observation {
                id: format!("{}/{i:04}", CLASS_DIR_NAMES[class as usize]),
                image: Tensor::new(&[3, size, size], values)?,
                label: class,
            });
        }
    }
    ImageDataset::new(
        observations,
        format!("synthetic(seed={seed},n_per_class={n_per_class},size={size},difficulty={difficulty})"),
    )
}

/// Writes a dataset as 8-bit grayscale PNGs under `<root>/<class_dir>/<id>.png`.
pub fn save_dataset(dataset: &ImageDataset, root: &Path) -> Result<()> {
    for name in CLASS_DIR_NAMES {
        std::fs::create_dir_all(root.join(name))?;
    }
    for obs in dataset.observations() {
        let size = obs.image.shape()[1] as u32;
        let pixels: Vec<u8> = obs.image.values()[..(size * size) as usize]
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        let buffer = image::GrayImage::from_raw(size, size, pixels)
            .expect("buffer length matches dimensions");
        let path = root.join(format!("{}.png", obs.id));
        buffer
            .save(&path)
            .map_err(|e| Error::Dataset(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Loads `<path>/<class_a>/*.{png,pgm}` and `<path>/<class_b>/*`; the two
/// subdirectory names in sorted order become classes 0 and 1. Images are
/// resized to `target_size` with bilinear interpolation, grayscale inputs are
/// replicated to 3 channels, and pixels are scaled to [0, 1]. Unreadable
/// files are skipped with a warning; returns the dataset and the skip count.
pub fn load_image_directory(path: &Path, target_size: usize) -> Result<(ImageDataset, usize)> {
    if target_size < 1 {
        return Err(Error::Config(format!("target_size must be ≥ 1; got {target_size}")));
    }
    let mut class_dirs: Vec<std::path::PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.len() != 2 {
        return Err(Error::Dataset(format!(
            "{} must contain exactly two class subdirectories; found {}",
            path.display(),
            class_dirs.len()
        )));
    }
    let mut observations = Vec::new();
    let mut skipped = 0usize;
    for (label, dir) in class_dirs.iter().enumerate() {
        let class_name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .map(|e| {
                        let e = e.to_string_lossy().to_lowercase();
                        e == "png" || e == "pgm"
                    })
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        let before = observations.len();
        for file in files {
            let img = match image::open(&file) {
                Ok(img) => img,
                Err(e) => {
                    eprintln!("warning: skipping unreadable {}: {e}", file.display());
                    skipped += 1;
                    continue;
                }
            };
            let resized =
                img.resize_exact(target_size as u32, target_size as u32, FilterType::Triangle);
            let mut values = Vec::with_capacity(3 * target_size * target_size);
            if resized.color().channel_count() <= 2 {
                let luma = resized.to_luma8();
                let channel: Vec<f64> = luma.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
                for _ in 0..3 {
                    values.extend_from_slice(&channel);
                }
            } else {
                let rgb = resized.to_rgb8();
                for c in 0..3 {
                    values.extend(rgb.pixels().map(|p| p.0[c] as f64 / 255.0));
                }
            }
            let stem = file.file_stem().unwrap_or_default().to_string_lossy();
            observations.push(Observation {
                id: format!("{class_name}/{stem}"),
                image: Tensor::new(&[3, target_size, target_size], values)?,
                label: label as u8,
            });
        }
        if observations.len() == before {
            return Err(Error::Dataset(format!(
                "class directory {} contributed no readable images",
                dir.display()
            )));
        }
    }
    Ok((ImageDataset::new(observations, path.display().to_string())?, skipped))
}

/// Scenario layout: total draw, validation share, labelled size and balance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub total_sample: usize,
    pub val_fraction: f64,
    pub n_l: usize,
    pub neg_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { total_sample: 204, val_fraction: 0.30, n_l: 10, neg_fraction: 0.5, seed: 0 }
    }
}

/// Round-half-up with a 1e-9 nudge so fractions given to a few decimals
/// behave as their exact decimal values (15·0.7 is 10.5 and must round to 11
/// even though the product floats slightly below it).
fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_sample == 0 {
            return Err(Error::Config("total_sample must be ≥ 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1); got {}",
                self.val_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.neg_fraction) {
            return Err(Error::Config(format!(
                "neg_fraction must lie in [0, 1]; got {}",
                self.neg_fraction
            )));
        }
        let (neg, pos) = self.labeled_counts();
        if neg < 1 || pos < 1 {
            return Err(Error::Config(format!(
                "labelled split ({neg} neg, {pos} pos) needs at least one observation per class"
            )));
        }
        if self.n_l + self.validation_size() > self.total_sample {
            return Err(Error::Config(format!(
                "n_l={} plus validation={} exceeds total_sample={}",
                self.n_l,
                self.validation_size(),
                self.total_sample
            )));
        }
        Ok(())
    }

    /// `floor(val_fraction · total_sample)`.
    pub fn validation_size(&self) -> usize {
        (self.val_fraction * self.total_sample as f64).floor() as usize
    }

    /// Validation class counts, balanced to within one (extra to class 0).
    pub fn validation_counts(&self) -> (usize, usize) {
        let v = self.validation_size();
        (v - v / 2, v / 2)
    }

    /// Labelled (negatives, positives): round-half-up of `n_l·neg_fraction`,
    /// remainder to positives.
    pub fn labeled_counts(&self) -> (usize, usize) {
        let neg = round_half_up(self.n_l as f64 * self.neg_fraction).min(self.n_l);
        (neg, self.n_l - neg)
    }

    /// Unlabelled (negatives, positives): the remaining budget split to
    /// within one observation, extra to positives (validation took the extra
    /// negative).
    pub fn unlabeled_counts(&self) -> (usize, usize) {
        let u = self.total_sample - self.validation_size() - self.n_l;
        (u / 2, u - u / 2)
    }
}

/// One sampled experiment scenario. The three parts are disjoint; validation
/// and the unlabelled pool are balanced to within one observation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub validation: LabeledSet,
}

/// Draws a scenario from per-class pools. Each split's class counts are fixed
/// by the config (validation 31/30 at the defaults, labelled per the rounding
/// rule, unlabelled balanced to within one); membership is drawn without
/// replacement via per-class shuffles — negatives first, then positives.
pub fn sample_scenario(
    pos_pool: &ImageDataset,
    neg_pool: &ImageDataset,
    config: &ScenarioConfig,
    rng: &mut impl Rng,
) -> Result<Scenario> {
    config.validate()?;
    if let Some(bad) = pos_pool.observations().iter().find(|o| o.label != 1) {
        return Err(Error::Scenario(format!("pos_pool contains class-0 observation {}", bad.id)));
    }
    if let Some(bad) = neg_pool.observations().iter().find(|o| o.label != 0) {
        return Err(Error::Scenario(format!("neg_pool contains class-1 observation {}", bad.id)));
    }
    let (val_neg, val_pos) = config.validation_counts();
    let (lab_neg, lab_pos) = config.labeled_counts();
    let (unl_neg, unl_pos) = config.unlabeled_counts();
    let need_neg = val_neg + lab_neg + unl_neg;
    let need_pos = val_pos + lab_pos + unl_pos;
    if neg_pool.len() < need_neg {
        return Err(Error::Scenario(format!(
            "negative pool has {} observations but the scenario needs {need_neg}",
            neg_pool.len()
        )));
    }
    if pos_pool.len() < need_pos {
        return Err(Error::Scenario(format!(
            "positive pool has {} observations but the scenario needs {need_pos}",
            pos_pool.len()
        )));
    }

    let draw = |pool: &ImageDataset, rng: &mut dyn rand::RngCore| -> Vec<Observation> {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(rng);
        order.into_iter().map(|i| pool.observations()[i].clone()).collect()
    };
    let neg = draw(neg_pool, rng);
    let pos = draw(pos_pool, rng);

    let mut validation = Vec::with_capacity(val_neg + val_pos);
    validation.extend_from_slice(&neg[..val_neg]);
    validation.extend_from_slice(&pos[..val_pos]);
    let mut labeled = Vec::with_capacity(config.n_l);
    labeled.extend_from_slice(&neg[val_neg..val_neg + lab_neg]);
    labeled.extend_from_slice(&pos[val_pos..val_pos + lab_pos]);
    let mut unlabeled = Vec::with_capacity(unl_neg + unl_pos);
    unlabeled.extend_from_slice(&neg[val_neg + lab_neg..need_neg]);
    unlabeled.extend_from_slice(&pos[val_pos + lab_pos..need_pos]);

    Ok(Scenario {
        config: config.clone(),
        labeled: LabeledSet { observations: labeled },
        unlabeled: UnlabeledSet { observations: unlabeled },
        validation: LabeledSet { observations: validation },
    })
}

impl Scenario {
    /// Plain-text manifest: config keys plus space-joined per-split ids, in
    /// scenario order — sufficient to reconstruct the scenario bit-exactly.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        writeln!(out, "seed={}", c.seed).unwrap();
        writeln!(out, "total_sample={}", c.total_sample).unwrap();
        writeln!(out, "val_fraction={}", c.val_fraction).unwrap();
        writeln!(out, "n_l={}", c.n_l).unwrap();
        writeln!(out, "neg_fraction={}", c.neg_fraction).unwrap();
        writeln!(out, "labeled={}", self.labeled.ids().join(" ")).unwrap();
        writeln!(out, "unlabeled={}", self.unlabeled.ids().join(" ")).unwrap();
        writeln!(out, "validation={}", self.validation.ids().join(" ")).unwrap();
        out
    }

    /// Rebuilds a scenario from its manifest and the original pools.
    pub fn from_manifest(
        manifest: &str,
        pos_pool: &ImageDataset,
        neg_pool: &ImageDataset,
    ) -> Result<Scenario> {
        let mut fields = std::collections::BTreeMap::new();
        for line in manifest.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Scenario(format!("manifest line without '=': {line}")))?;
            fields.insert(key.to_string(), value.to_string());
        }
        let get = |key: &str| -> Result<&String> {
            fields.get(key).ok_or_else(|| Error::Scenario(format!("manifest misses {key}")))
        };
        let parse_err = |key: &str, v: &str| Error::Scenario(format!("bad {key} value: {v}"));
        let config = ScenarioConfig {
            seed: get("seed")?.parse().map_err(|_| parse_err("seed", get("seed").unwrap()))?,
            total_sample: get("total_sample")?
                .parse()
                .map_err(|_| parse_err("total_sample", get("total_sample").unwrap()))?,
            val_fraction: get("val_fraction")?
                .parse()
                .map_err(|_| parse_err("val_fraction", get("val_fraction").unwrap()))?,
            n_l: get("n_l")?.parse().map_err(|_| parse_err("n_l", get("n_l").unwrap()))?,
            neg_fraction: get("neg_fraction")?
                .parse()
                .map_err(|_| parse_err("neg_fraction", get("neg_fraction").unwrap()))?,
        };
        let mut by_id = std::collections::BTreeMap::new();
        for obs in neg_pool.observations().iter().chain(pos_pool.observations()) {
            by_id.insert(obs.id.as_str(), obs);
        }
        let collect = |key: &str| -> Result<Vec<Observation>> {
            get(key)?
                .split_whitespace()
                .map(|id| {
                    by_id
                        .get(id)
                        .map(|o| (*o).clone())
                        .ok_or_else(|| Error::Scenario(format!("manifest id {id} not in pools")))
                })
                .collect()
        };
        Ok(Scenario {
            config,
            labeled: LabeledSet { observations: collect("labeled")? },
            unlabeled: UnlabeledSet { observations: collect("unlabeled")? },
            validation: LabeledSet { observations: collect("validation")? },
        })
    }
}

//! Labelled image sets: IDX ingestion, synthetic fixtures, downsampling and
//! seeded splits.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;
use crate::seed::rng_for;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic {got}, expected {expected}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },
    #[error("{0}: header dimensions are inconsistent")]
    DimensionMismatch(String),
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{0}: file is truncated")]
    TruncatedFile(String),
    #[error("{height}x{width} is not divisible by {factor}")]
    IndivisibleShape {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("split of {n} items with fraction {fraction} leaves one side empty")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    /// (N, C, H, W), values in [0, 1].
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl LabeledImageSet {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        images
            .chw()
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        if images.batch() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.batch(),
                labels: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Invalid("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (C, H, W)
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.images.chw().expect("validated at construction")
    }

    /// The images at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let (c, h, w) = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            data.extend_from_slice(self.images.sample(i));
        }
        Tensor::new(vec![indices.len(), c, h, w], data).expect("gathered shape is consistent")
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Self {
        Self {
            images: self.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::TruncatedFile(path.to_string()))
}

/// Parses an IDX image file and its label file.
pub fn parse_idx(images: &[u8], labels: &[u8], images_name: &str, labels_name: &str) -> Result<LabeledImageSet> {
    let magic = be_u32(images, 0, images_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_name.into(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let n = be_u32(images, 4, images_name)? as usize;
    let rows = be_u32(images, 8, images_name)? as usize;
    let cols = be_u32(images, 12, images_name)? as usize;
    if rows == 0 || cols == 0 {
        return Err(DataError::DimensionMismatch(images_name.into()));
    }
    let pixels = &images[16..];
    if pixels.len() < n * rows * cols {
        return Err(DataError::TruncatedFile(images_name.into()));
    }
    if pixels.len() > n * rows * cols {
        return Err(DataError::DimensionMismatch(images_name.into()));
    }

    let magic = be_u32(labels, 0, labels_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_name.into(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let m = be_u32(labels, 4, labels_name)? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() < m {
        return Err(DataError::TruncatedFile(labels_name.into()));
    }
    if label_bytes.len() > m {
        return Err(DataError::DimensionMismatch(labels_name.into()));
    }
    if m != n {
        return Err(DataError::CountMismatch { images: n, labels: m });
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1).max(2);
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let tensor = Tensor::new(vec![n, 1, rows, cols], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    LabeledImageSet::new(images_name, tensor, labels, num_classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    let mut set = parse_idx(
        &images,
        &labels,
        &images_path.display().to_string(),
        &labels_path.display().to_string(),
    )?;
    set.name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(set)
}

/// Serializes single-channel images and labels as IDX byte streams. Pixels
/// are quantised to `round(v * 255)`.
pub fn encode_idx(set: &LabeledImageSet) -> Result<(Vec<u8>, Vec<u8>)> {
    let (c, h, w) = set.image_shape();
    if c != 1 {
        return Err(DataError::Invalid("IDX images must have one channel".into()));
    }
    if set.labels.iter().any(|&l| l > 255) {
        return Err(DataError::Invalid("IDX labels must fit in a byte".into()));
    }
    let mut images = Vec::with_capacity(16 + set.images.data().len());
    for v in [IDX_IMAGES_MAGIC, set.len() as u32, h as u32, w as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(set.images.data().iter().map(|&v| (v * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + set.len());
    for v in [IDX_LABELS_MAGIC, set.len() as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(set.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx(set: &LabeledImageSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(set)?;
    for (path, bytes) in [(images_path, images), (labels_path, labels)] {
        fs::write(path, bytes).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Non-overlapping `factor`×`factor` mean pooling of every channel.
pub fn downsample(set: &LabeledImageSet, factor: usize) -> Result<LabeledImageSet> {
    let (c, h, w) = set.image_shape();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(DataError::IndivisibleShape {
            height: h,
            width: w,
            factor,
        });
    }
    let (ho, wo) = (h / factor, w / factor);
    let n = set.len();
    let scale = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; n * c * ho * wo];
    for (plane, dst) in set
        .images
        .data()
        .chunks_exact(h * w)
        .zip(out.chunks_exact_mut(ho * wo))
    {
        for y in 0..h {
            for x in 0..w {
                dst[(y / factor) * wo + x / factor] += plane[y * w + x];
            }
        }
        for v in dst.iter_mut() {
            *v = (*v * scale).clamp(0.0, 1.0);
        }
    }
    Ok(LabeledImageSet {
        images: Tensor::new(vec![n, c, ho, wo], out).expect("pooled shape"),
        labels: set.labels.clone(),
        num_classes: set.num_classes,
        name: set.name.clone(),
    })
}

/// Seeded shuffle; the first ⌊fraction·N⌋ items train, the rest test.
pub fn split_train_test(
    set: &LabeledImageSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let n = set.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    if !(train_fraction > 0.0 && train_fraction < 1.0) || n_train == 0 || n_train >= n {
        return Err(DataError::DegenerateSplit {
            n,
            fraction: train_fraction,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, "split", 0));
    let train = set.subset(&idx[..n_train], format!("{}/train", set.name));
    let test = set.subset(&idx[n_train..], format!("{}/test", set.name));
    Ok((train, test))
}

/// Seeded stratified sample of `per_class` images from every class.
pub fn stratified_subset(set: &LabeledImageSet, per_class: usize, seed: u64) -> Result<LabeledImageSet> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); set.num_classes];
    for (i, &l) in set.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = rng_for(seed, "stratified", 0);
    let mut chosen = Vec::with_capacity(per_class * set.num_classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(DataError::Invalid(format!(
                "class {class} has {} images, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..per_class]);
    }
    chosen.sort_unstable();
    Ok(set.subset(&chosen, set.name.clone()))
}

/// Parameters of the synthetic Gaussian-bump generator; serialized as the
/// dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsParams {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl BlobsParams {
    pub fn generate(&self) -> LabeledImageSet {
        synth_blobs(
            self.num_classes,
            self.per_class,
            self.image_size,
            self.noise_std,
            self.seed,
        )
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "generator": "blobs", "params": self }))
            .expect("manifest serialization cannot fail")
    }
}

/// Centre of class `k`'s bump: evenly spaced on a ring around the image centre.
pub fn blob_center(class: usize, num_classes: usize, image_size: usize) -> (f64, f64) {
    let mid = (image_size as f64 - 1.0) / 2.0;
    let radius = 0.3 * image_size as f64;
    let angle = std::f64::consts::TAU * class as f64 / num_classes as f64;
    (mid + radius * angle.sin(), mid + radius * angle.cos())
}

/// One Gaussian bump per class at a class-specific location plus pixel
/// noise, clamped to [0, 1]. Samples cycle through the classes.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    noise_std: f64,
    seed: u64,
) -> LabeledImageSet {
    assert!(num_classes >= 2 && per_class >= 1 && image_size >= 1 && noise_std >= 0.0);
    let sigma = (image_size as f64 / 6.0).max(0.5);
    let templates: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| {
            let (cy, cx) = blob_center(k, num_classes, image_size);
            let mut img = Vec::with_capacity(image_size * image_size);
            for y in 0..image_size {
                for x in 0..image_size {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    img.push((-d2 / (2.0 * sigma * sigma)).exp());
                }
            }
            img
        })
        .collect();
    let n = num_classes * per_class;
    let mut rng = rng_for(seed, "blobs", 0);
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut data = Vec::with_capacity(n * image_size * image_size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % num_classes;
        labels.push(k);
        for &v in &templates[k] {
            let e = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data.push((v + e).clamp(0.0, 1.0));
        }
    }
    LabeledImageSet {
        images: Tensor::new(vec![n, 1, image_size, image_size], data).expect("generated shape"),
        labels,
        num_classes,
        name: format!("blobs-{num_classes}x{per_class}-s{seed}"),
    }
}

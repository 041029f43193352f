//! Labeled image sets, IDX and stroke-JSON ingestion, rasterization,
//! elastic augmentation and a synthetic glyph generator.

mod elastic;
mod glyphs;
pub mod idx;
mod stroke;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::nn::{Shape, Tensor};
use crate::rng;

pub use elastic::{displacement_field, elastic_deform, ElasticParams};
pub use glyphs::{generate_glyphs, glyph_prototypes, GlyphInventory};
pub use idx::{load_idx, load_idx_dir, resize_bilinear};
pub use stroke::{load_jsonl, rasterize, StrokeSample};

/// Side length of the square network input.
pub const IMAGE_SIZE: usize = 48;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { file: String, expected: u32, found: u32 },
    #[error("{0}: unexpected end of file")]
    UnexpectedEof(String),
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid stroke sample: {0}")]
    InvalidSample(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Single-channel images of one size with class labels, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    height: usize,
    width: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        height: usize,
        width: usize,
        images: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let item = height * width;
        if item == 0 || images.len() % item != 0 {
            return Err(DataError::Invalid(format!(
                "{} values do not tile {height}×{width} images",
                images.len()
            )));
        }
        if images.len() / item != labels.len() {
            return Err(DataError::LengthMismatch {
                images: images.len() / item,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn item_len(&self) -> usize {
        self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    /// Stacks the selected samples into an `(N, 1, H, W)` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let shape = Shape::new(indices.len(), 1, self.height, self.width);
        let tensor = Tensor::from_vec(shape, data).expect("batch size matches");
        (tensor, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            height: self.height,
            width: self.width,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Sample indices grouped by class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Seeded stratified subsample keeping `round(fraction · count)` of each class.
    pub fn stratified_fraction(&self, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DataError::Invalid(format!("fraction {fraction} outside (0, 1]")));
        }
        let mut keep = Vec::new();
        for (class, mut idx) in self.class_indices().into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let take = (fraction * idx.len() as f64).round() as usize;
            if take == 0 {
                return Err(DataError::Invalid(format!(
                    "fraction {fraction} leaves class {class} without samples"
                )));
            }
            idx.shuffle(&mut rng::derived(seed, &[0x5B5, class as u64]));
            keep.extend_from_slice(&idx[..take]);
        }
        keep.sort_unstable();
        Ok(self.subset(&keep))
    }

    /// Seeded stratified subsample of the first `n` samples' worth, spread evenly over classes.
    pub fn stratified_count(&self, n: usize, seed: u64) -> Result<Dataset, DataError> {
        self.stratified_fraction(n as f64 / self.len() as f64, seed)
    }

    /// Deterministic stratified split: every fifth sample of each class goes to the second part.
    pub fn split_holdout(&self) -> (Dataset, Dataset) {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for idx in self.class_indices() {
            let holdout = if idx.len() >= 2 { idx.len().div_ceil(5) } else { 0 };
            let cut = idx.len() - holdout;
            first.extend_from_slice(&idx[..cut]);
            second.extend_from_slice(&idx[cut..]);
        }
        first.sort_unstable();
        second.sort_unstable();
        (self.subset(&first), self.subset(&second))
    }
}

/// Train and test partitions of a corpus.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Where a corpus comes from, parsed from a command-line string.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Directory with the four standard IDX files.
    Idx(PathBuf),
    /// Stroke JSON lines.
    Jsonl(PathBuf),
    Glyphs(GlyphInventory),
}

impl DataSource {
    /// `glyphs:C=100,m=50,seed=1[,jitter=0.05]`, a `.jsonl` file, or an IDX directory.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        if let Some(rest) = text.strip_prefix("glyphs:") {
            let mut inv = GlyphInventory::new(10, 20, 0);
            for part in rest.split(',').filter(|p| !p.is_empty()) {
                let (key, value) = part
                    .split_once('=')
                    .ok_or_else(|| DataError::Invalid(format!("expected key=value, got {part:?}")))?;
                let bad = |_| DataError::Invalid(format!("bad value for {key}: {value:?}"));
                match key {
                    "C" | "classes" => inv.num_classes = value.parse().map_err(bad)?,
                    "m" | "per_class" => inv.samples_per_class = value.parse().map_err(bad)?,
                    "seed" => inv.seed = value.parse().map_err(bad)?,
                    "jitter" => {
                        inv.jitter = value
                            .parse()
                            .map_err(|_| DataError::Invalid(format!("bad jitter {value:?}")))?
                    }
                    _ => return Err(DataError::Invalid(format!("unknown glyph key {key:?}"))),
                }
            }
            inv.validate()?;
            return Ok(DataSource::Glyphs(inv));
        }
        let path = PathBuf::from(text);
        if path.extension().is_some_and(|e| e == "jsonl") {
            Ok(DataSource::Jsonl(path))
        } else {
            Ok(DataSource::Idx(path))
        }
    }

    /// Train/test partitions; stroke files are split deterministically 80/20 per class.
    pub fn load_split(&self) -> Result<Split, DataError> {
        match self {
            DataSource::Idx(dir) => Ok(Split {
                train: load_idx_dir(dir, true)?,
                test: load_idx_dir(dir, false)?,
            }),
            DataSource::Jsonl(path) => {
                let (train, test) = load_jsonl(path)?.split_holdout();
                Ok(Split { train, test })
            }
            DataSource::Glyphs(inv) => Ok(generate_glyphs(inv)),
        }
    }

    /// Evaluation set: the IDX test files, the whole stroke file, or the glyph test split.
    pub fn load_eval(&self) -> Result<Dataset, DataError> {
        match self {
            DataSource::Idx(dir) => load_idx_dir(dir, false),
            DataSource::Jsonl(path) => load_jsonl(path),
            DataSource::Glyphs(inv) => Ok(generate_glyphs(inv).test),
        }
    }
}

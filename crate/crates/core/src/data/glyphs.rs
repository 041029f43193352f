//! Synthetic character inventories: one random polyline prototype per class,
//! perturbed per sample.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{rasterize, DataError, Dataset, Split, StrokeSample, IMAGE_SIZE};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphInventory {
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Standard deviation of control-point noise, in prototype (unit square) units.
    pub jitter: f64,
    pub seed: u64,
}

impl GlyphInventory {
    pub const DEFAULT_JITTER: f64 = 0.05;

    pub fn new(num_classes: usize, samples_per_class: usize, seed: u64) -> Self {
        Self {
            num_classes,
            samples_per_class,
            jitter: Self::DEFAULT_JITTER,
            seed,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 || self.samples_per_class < 1 {
            return Err(DataError::Invalid("glyph inventory needs C ≥ 2 and m ≥ 1".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(DataError::Invalid(format!("jitter {} must be finite and ≥ 0", self.jitter)));
        }
        Ok(())
    }

    /// Held-out samples per class (a fifth, rounded up, when there are at least two).
    pub fn test_per_class(&self) -> usize {
        if self.samples_per_class >= 2 {
            self.samples_per_class.div_ceil(5)
        } else {
            0
        }
    }
}

/// Class prototypes: 2–6 strokes of 2–4 points each in the unit square.
pub fn glyph_prototypes(inv: &GlyphInventory) -> Vec<StrokeSample> {
    (0..inv.num_classes)
        .map(|k| {
            let mut r = rng::derived(inv.seed, &[0x61F, k as u64]);
            let strokes = (0..r.random_range(2..=6))
                .map(|_| {
                    (0..r.random_range(2..=4))
                        .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
                        .collect()
                })
                .collect();
            StrokeSample::new(strokes, Some(k))
        })
        .collect()
}

fn perturb(proto: &StrokeSample, jitter: f64, seed: u64) -> StrokeSample {
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, jitter).expect("jitter validated");
    let strokes = proto
        .strokes
        .iter()
        .map(|s| s.iter().map(|p| [p[0] + noise.sample(&mut r), p[1] + noise.sample(&mut r)]).collect())
        .collect();
    StrokeSample::new(strokes, proto.label)
}

/// Renders `m` jittered samples per class, split 80/20 per class.
pub fn generate_glyphs(inv: &GlyphInventory) -> Split {
    inv.validate().expect("valid glyph inventory");
    let protos = glyph_prototypes(inv);
    let m = inv.samples_per_class;
    let train_per_class = m - inv.test_per_class();
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for j in 0..m {
        let part = &mut parts[usize::from(j >= train_per_class)];
        for (k, proto) in protos.iter().enumerate() {
            let seed = rng::derive(inv.seed, &[0x5A3, k as u64, j as u64]);
            let sample = perturb(proto, inv.jitter, seed);
            part.0.extend(rasterize(&sample, IMAGE_SIZE).expect("prototype strokes are valid"));
            part.1.push(k);
        }
    }
    let [(tri, trl), (tei, tel)] = parts;
    let build = |images, labels| Dataset::new(IMAGE_SIZE, IMAGE_SIZE, images, labels, inv.num_classes).expect("consistent");
    Split {
        train: build(tri, trl),
        test: build(tei, tel),
    }
}

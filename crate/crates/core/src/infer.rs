//! Single-sample recognition: raw input to ranked candidates.

use serde::{Deserialize, Serialize};

use crate::data::{rasterize, DataError, StrokeSample};
use crate::eval::topk_indices;
use crate::model::{ModelError, Network};
use crate::nn::ops::softmax_rows;
use crate::nn::Tensor;

/// Candidate count shown to a writer unless asked otherwise.
pub const DEFAULT_CANDIDATES: usize = 4;
pub const MAX_CANDIDATES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Softmax probability over the full class set.
    pub score: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("expected {expected} bytes, got {actual}")]
    ImageSize { expected: usize, actual: usize },
    #[error("k must be between 1 and {MAX_CANDIDATES}, got {0}")]
    BadK(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Pixels the network expects per sample.
pub fn input_len(net: &Network<f32>) -> usize {
    net.input_shape(1).item_len()
}

/// Grayscale bytes, row-major, ink bright, scaled to `[0, 1]`.
pub fn image_from_bytes(net: &Network<f32>, bytes: &[u8]) -> Result<Vec<f32>, InferError> {
    let expected = input_len(net);
    if bytes.len() != expected {
        return Err(InferError::ImageSize {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn image_from_strokes(net: &Network<f32>, sample: &StrokeSample) -> Result<Vec<f32>, InferError> {
    let s = net.input_shape(1);
    if s.c != 1 || s.h != s.w {
        return Err(ModelError::InvalidSpec(format!("cannot rasterize into a {}×{}×{} input", s.h, s.w, s.c)).into());
    }
    Ok(rasterize(sample, s.h)?)
}

/// Full softmax distribution for one image.
pub fn probabilities(net: &Network<f32>, image: &[f32]) -> Result<Vec<f64>, InferError> {
    let x = Tensor::from_vec(net.input_shape(1), image.to_vec()).map_err(ModelError::from)?;
    let logits = net.forward(&x)?;
    Ok(softmax_rows(&logits).swap_remove(0))
}

/// The `k` most probable classes, best first; ties go to the lower label.
pub fn recognize(net: &Network<f32>, image: &[f32], k: usize, names: Option<&[String]>) -> Result<Vec<Candidate>, InferError> {
    if !(1..=MAX_CANDIDATES).contains(&k) {
        return Err(InferError::BadK(k));
    }
    let p = probabilities(net, image)?;
    let scores: Vec<f32> = p.iter().map(|&v| v as f32).collect();
    Ok(topk_indices(&scores, k)
        .into_iter()
        .map(|label| Candidate {
            label,
            name: names.and_then(|n| n.get(label)).cloned(),
            score: p[label],
        })
        .collect())
}

/// One name per line; line `i` names class `i`.
pub fn parse_names(text: &str) -> Vec<String> {
    text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect()
}

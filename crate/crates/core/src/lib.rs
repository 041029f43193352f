//! Embedded-scale handwritten character recognition.
//!
//! A MobileNetV2-style classifier for 48×48 glyph images, together with the
//! constrained random architecture sampler, SGD/Nesterov training with
//! elastic augmentation, top-k evaluation and learning-curve fitting.

pub mod data;
pub mod eval;
pub mod infer;
pub mod model;
pub mod nn;
pub mod rng;
pub mod search;
pub mod train;

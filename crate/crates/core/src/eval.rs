//! Top-k recognition rates, per-class breakdowns, confusion lists and
//! inventory-scaling comparisons.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::model::{ModelError, Network};

pub const REPORTED_KS: [usize; 3] = [1, 4, 10];
const EVAL_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate on an empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} scores")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dataset has {dataset} classes but the model predicts {model}")]
    ClassMismatch { dataset: usize, model: usize },
    #[error("scaling report needs at least two inventory sizes")]
    TooFewSizes,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Higher score first; equal scores resolve toward the lower class index.
fn outranks(scores: &[f32], a: usize, b: usize) -> bool {
    match scores[a].partial_cmp(&scores[b]) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) | None => a < b,
        Some(Ordering::Less) => false,
    }
}

/// Zero-based position of `label` in the deterministic ranking of `scores`.
pub fn rank_of(scores: &[f32], label: usize) -> Result<usize, EvalError> {
    if label >= scores.len() {
        return Err(EvalError::LabelOutOfRange {
            label,
            classes: scores.len(),
        });
    }
    Ok((0..scores.len()).filter(|&j| j != label && outranks(scores, j, label)).count())
}

/// Whether `label` is among the `k` highest scores.
pub fn topk_hit(scores: &[f32], label: usize, k: usize) -> Result<bool, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(rank_of(scores, label)? < k)
}

/// Indices of the `k` best scores in ranking order, by partial selection.
pub fn topk_indices(scores: &[f32], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |&a: &usize, &b: &usize| {
        if a == b {
            Ordering::Equal
        } else if outranks(scores, a, b) {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    #[serde(rename = "true")]
    pub true_label: usize,
    pub predicted: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cr1: f64,
    pub cr4: f64,
    pub cr10: f64,
    /// Top-1 accuracy per class; classes absent from the data report 0.
    pub per_class_top1: Vec<f64>,
    pub per_class_count: Vec<usize>,
    /// Misrecognitions, most frequent first, ties by `(true, predicted)`.
    pub confusions: Vec<Confusion>,
    pub sample_count: usize,
}

impl EvalReport {
    pub fn cr(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.cr1),
            4 => Some(self.cr4),
            10 => Some(self.cr10),
            _ => None,
        }
    }

    pub fn error_rate(&self) -> f64 {
        1.0 - self.cr1
    }
}

/// Streaming reduction of `(scores, label)` pairs into an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct EvalAccumulator {
    hits: [usize; 3],
    class_hits: Vec<usize>,
    class_count: Vec<usize>,
    confusions: BTreeMap<(usize, usize), usize>,
    samples: usize,
}

impl EvalAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            hits: [0; 3],
            class_hits: vec![0; num_classes],
            class_count: vec![0; num_classes],
            confusions: BTreeMap::new(),
            samples: 0,
        }
    }

    pub fn add(&mut self, scores: &[f32], label: usize) -> Result<(), EvalError> {
        if scores.len() != self.class_count.len() {
            return Err(EvalError::ClassMismatch {
                dataset: self.class_count.len(),
                model: scores.len(),
            });
        }
        let rank = rank_of(scores, label)?;
        for (h, &k) in self.hits.iter_mut().zip(&REPORTED_KS) {
            *h += usize::from(rank < k);
        }
        self.class_count[label] += 1;
        if rank == 0 {
            self.class_hits[label] += 1;
        } else {
            let predicted = topk_indices(scores, 1)[0];
            *self.confusions.entry((label, predicted)).or_default() += 1;
        }
        self.samples += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<EvalReport, EvalError> {
        if self.samples == 0 {
            return Err(EvalError::EmptyDataset);
        }
        let n = self.samples as f64;
        let mut confusions: Vec<Confusion> = self
            .confusions
            .into_iter()
            .map(|((true_label, predicted), count)| Confusion {
                true_label,
                predicted,
                count,
            })
            .collect();
        confusions.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then((a.true_label, a.predicted).cmp(&(b.true_label, b.predicted)))
        });
        Ok(EvalReport {
            cr1: self.hits[0] as f64 / n,
            cr4: self.hits[1] as f64 / n,
            cr10: self.hits[2] as f64 / n,
            per_class_top1: self
                .class_hits
                .iter()
                .zip(&self.class_count)
                .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
                .collect(),
            per_class_count: self.class_count,
            confusions,
            sample_count: self.samples,
        })
    }
}

/// Inference-mode pass over `data` (running batch-norm statistics, no augmentation).
pub fn evaluate(model: &Network<f32>, data: &Dataset) -> Result<EvalReport, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let classes = model.num_classes();
    if data.num_classes() > classes {
        return Err(EvalError::ClassMismatch {
            dataset: data.num_classes(),
            model: classes,
        });
    }
    let mut acc = EvalAccumulator::new(classes);
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk);
        let logits = model.forward(&x)?;
        for (row, &label) in logits.data().chunks_exact(classes).zip(&labels) {
            acc.add(row, label)?;
        }
    }
    acc.finish()
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

/// Human-readable size: `MB` figures are binary megabytes.
pub fn format_size(bytes: u64) -> String {
    let mib = bytes as f64 / (1024.0 * 1024.0);
    if mib >= 1.0 {
        format!("{mib:.1}MB")
    } else {
        format!("{:.0}KB", bytes as f64 / 1024.0)
    }
}

/// One row of a side-by-side comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow<'a> {
    pub model: String,
    pub report: &'a EvalReport,
    pub footprint_bytes: u64,
}

/// Aligned `CR(1) CR(4) CR(10) Model Size` table, one row per model.
pub fn comparison_table(rows: &[ComparisonRow<'_>]) -> String {
    let header = ["", "CR(1)", "CR(4)", "CR(10)", "Model Size"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                pct(r.report.cr1),
                pct(r.report.cr4),
                pct(r.report.cr10),
                format_size(r.footprint_bytes),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: [&str; 5]| {
        let mut parts = Vec::with_capacity(5);
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            let pad = w - cell.chars().count();
            parts.push(if i == 0 {
                format!("{cell}{}", " ".repeat(pad))
            } else {
                format!("{}{cell}", " ".repeat(pad))
            });
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header);
    for row in &body {
        line([&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorRatio {
    Finite(f64),
    /// The smaller inventory made no top-1 errors.
    ZeroBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub from_classes: usize,
    pub to_classes: usize,
    pub from_cr1: f64,
    pub to_cr1: f64,
    pub coverage_ratio: f64,
    pub error_ratio: ErrorRatio,
    /// Errors grew by less than the coverage did.
    pub sublinear: bool,
}

/// Compares consecutive inventory sizes (sorted ascending) by top-1 error growth.
pub fn inventory_scaling_report(results: &[(usize, EvalReport)]) -> Result<Vec<ScalingRow>, EvalError> {
    let mut sorted: Vec<&(usize, EvalReport)> = results.iter().collect();
    sorted.sort_by_key(|(c, _)| *c);
    sorted.dedup_by_key(|(c, _)| *c);
    if sorted.len() < 2 {
        return Err(EvalError::TooFewSizes);
    }
    Ok(sorted
        .windows(2)
        .map(|w| {
            let ((c1, r1), (c2, r2)) = (w[0], w[1]);
            let coverage_ratio = *c2 as f64 / *c1 as f64;
            let (e1, e2) = (r1.error_rate(), r2.error_rate());
            let (error_ratio, sublinear) = if e1 > 0.0 {
                let r = e2 / e1;
                (ErrorRatio::Finite(r), r < coverage_ratio)
            } else {
                (ErrorRatio::ZeroBaseline, e2 <= 0.0)
            };
            ScalingRow {
                from_classes: *c1,
                to_classes: *c2,
                from_cr1: r1.cr1,
                to_cr1: r2.cr1,
                coverage_ratio,
                error_ratio,
                sublinear,
            }
        })
        .collect())
}

/// Aligned text rendering of a scaling report.
pub fn scaling_table(rows: &[ScalingRow]) -> String {
    let mut out = format!(
        "{:>8} {:>8} {:>8} {:>8} {:>9} {:>9}  sublinear\n",
        "C1", "C2", "CR1(C1)", "CR1(C2)", "coverage", "errors"
    );
    for r in rows {
        let err = match r.error_ratio {
            ErrorRatio::Finite(v) => format!("{v:.3}"),
            ErrorRatio::ZeroBaseline => "0-error".into(),
        };
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>8} {:>8} {:>9.3} {:>9}  {}",
            r.from_classes,
            r.to_classes,
            pct(r.from_cr1),
            pct(r.to_cr1),
            r.coverage_ratio,
            err,
            r.sublinear
        );
    }
    out
}

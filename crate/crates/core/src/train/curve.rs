//! Error-versus-data-size learning curves and their power-law fit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainError};
use crate::data::Dataset;
use crate::eval::evaluate;
use crate::model::{ModelSpec, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub train_size: usize,
    pub error_rate: f64,
}

/// `error ≈ exp(a) · n^b`, fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveFit {
    pub exponent: f64,
    /// Intercept `a` of `ln(error) = a + b·ln(n)`.
    pub log_coefficient: f64,
}

impl LearningCurveFit {
    pub fn coefficient(&self) -> f64 {
        self.log_coefficient.exp()
    }

    pub fn predict(&self, n: f64) -> f64 {
        (self.log_coefficient + self.exponent * n.ln()).exp()
    }
}

pub fn fit_learning_curve(points: &[LearningCurvePoint]) -> Result<LearningCurveFit, TrainError> {
    let bad = |m: String| Err(TrainError::InvalidConfig(m));
    if points.len() < 2 {
        return bad(format!("a power-law fit needs at least 2 points, got {}", points.len()));
    }
    if let Some(p) = points.iter().find(|p| !(p.error_rate > 0.0) || p.train_size == 0) {
        return bad(format!(
            "point (n={}, error={}) has no logarithm; errors must be > 0 and n ≥ 1",
            p.train_size, p.error_rate
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.train_size as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error_rate.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return bad("all points share one training size".into());
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    Ok(LearningCurveFit {
        exponent,
        log_coefficient: my - exponent * mx,
    })
}

/// `n,error` rows for log-log plotting.
pub fn curve_csv(points: &[LearningCurvePoint]) -> String {
    let mut out = String::from("n,error\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.train_size, p.error_rate);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurve {
    pub points: Vec<LearningCurvePoint>,
    /// Absent when the points do not support a fit (fewer than two, or a zero error).
    pub fit: Option<LearningCurveFit>,
}

/// Trains a fresh model on a stratified subsample per fraction and scores each on `test`.
/// Models keep their final-epoch weights; `test` plays no part in training.
pub fn run_learning_curve(
    spec: &ModelSpec,
    train_data: &Dataset,
    test: &Dataset,
    fractions: &[f64],
    config: &TrainConfig,
) -> Result<LearningCurve, TrainError> {
    if fractions.is_empty() {
        return Err(TrainError::InvalidConfig("no fractions given".into()));
    }
    for w in fractions.windows(2) {
        if w[1] <= w[0] {
            return Err(TrainError::InvalidConfig("fractions must be strictly increasing".into()));
        }
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(TrainError::InvalidConfig(format!("fraction {f} outside (0, 1]")));
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let subset = train_data.stratified_fraction(fraction, config.seed)?;
        let mut net = Network::<f32>::build(spec.clone(), config.seed)?;
        train(&mut net, &subset, &subset.subset(&[]), config)?;
        let report = evaluate(&net, test)?;
        points.push(LearningCurvePoint {
            train_size: subset.len(),
            error_rate: report.error_rate(),
        });
    }
    let fit = fit_learning_curve(&points).ok();
    Ok(LearningCurve { points, fit })
}

//! Python module `hzr`: sampling, training, evaluation and recognition.
//!
//! Structured results cross the boundary as JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde_json::json;

use hzr_core::data::{self, DataSource, StrokeSample};
use hzr_core::eval;
use hzr_core::infer::{self, DEFAULT_CANDIDATES};
use hzr_core::model::{checkpoint, count_macs, count_params, ModelSpec, Network};
use hzr_core::search::{self, HyperParamSpace};
use hzr_core::train::{self, TrainConfig};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn space(name: &str) -> PyResult<HyperParamSpace> {
    match name {
        "default" => Ok(HyperParamSpace::default()),
        "desk" => Ok(HyperParamSpace::desk()),
        other => Err(err(format!("unknown space {other:?}; use \"default\" or \"desk\""))),
    }
}

/// Random architecture spec as JSON.
#[pyfunction]
#[pyo3(signature = (seed, classes, space_name = "default"))]
fn sample_architecture(seed: u64, classes: usize, space_name: &str) -> PyResult<String> {
    if classes == 0 {
        return Err(err("classes must be at least 1"));
    }
    Ok(search::sample_architecture(&space(space_name)?, seed, classes).to_json())
}

/// Layer rows, parameter counts, footprint and MACs of a spec, as JSON.
#[pyfunction]
fn describe(spec_json: &str) -> PyResult<String> {
    let spec = ModelSpec::from_json(spec_json).map_err(err)?;
    let net = Network::<f32>::build(spec.clone(), 0).map_err(err)?;
    let count = count_params(&spec);
    Ok(json!({
        "rows": net.summary(),
        "params": count,
        "footprint_bytes": count.footprint_bytes(),
        "macs": count_macs(&spec),
    })
    .to_string())
}

/// Renders strokes of `[x, y]` points into a `size`×`size` bitmap, row-major.
#[pyfunction]
#[pyo3(signature = (strokes, size = data::IMAGE_SIZE))]
fn rasterize(strokes: Vec<Vec<[f64; 2]>>, size: usize) -> PyResult<Vec<f32>> {
    data::rasterize(&StrokeSample::new(strokes, None), size).map_err(err)
}

/// Indices of the `k` largest scores, best first, ties to the lower index.
#[pyfunction]
fn topk(scores: Vec<f32>, k: usize) -> Vec<usize> {
    eval::topk_indices(&scores, k)
}

#[pyclass(name = "Model")]
struct PyModel {
    net: Network<f32>,
}

fn ranked(c: Vec<infer::Candidate>) -> Vec<(usize, f64)> {
    c.into_iter().map(|c| (c.label, c.score)).collect()
}

#[pymethods]
impl PyModel {
    /// Freshly initialized network from spec JSON.
    #[staticmethod]
    #[pyo3(signature = (spec_json, seed = 0))]
    fn build(spec_json: &str, seed: u64) -> PyResult<Self> {
        let spec = ModelSpec::from_json(spec_json).map_err(err)?;
        Ok(Self {
            net: Network::build(spec, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            net: checkpoint::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Self {
            net: checkpoint::from_bytes(bytes).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.net, path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &checkpoint::to_bytes(&self.net))
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.net.num_classes()
    }

    #[getter]
    fn spec_json(&self) -> String {
        self.net.spec().to_json()
    }

    #[getter]
    fn footprint_bytes(&self) -> u64 {
        count_params(self.net.spec()).footprint_bytes()
    }

    /// Softmax over all classes for one row-major image in `[0, 1]`.
    fn probabilities(&self, py: Python<'_>, image: Vec<f32>) -> PyResult<Vec<f64>> {
        py.detach(|| infer::probabilities(&self.net, &image)).map_err(err)
    }

    /// `(label, score)` pairs for pen strokes, best first.
    #[pyo3(signature = (strokes, k = DEFAULT_CANDIDATES))]
    fn recognize_strokes(&self, py: Python<'_>, strokes: Vec<Vec<[f64; 2]>>, k: usize) -> PyResult<Vec<(usize, f64)>> {
        py.detach(|| {
            let img = infer::image_from_strokes(&self.net, &StrokeSample::new(strokes, None))?;
            infer::recognize(&self.net, &img, k, None)
        })
        .map(ranked)
        .map_err(err)
    }

    /// `(label, score)` pairs for raw grayscale bytes, best first.
    #[pyo3(signature = (image, k = DEFAULT_CANDIDATES))]
    fn recognize_image(&self, py: Python<'_>, image: &[u8], k: usize) -> PyResult<Vec<(usize, f64)>> {
        let image = image.to_vec();
        py.detach(|| {
            let img = infer::image_from_bytes(&self.net, &image)?;
            infer::recognize(&self.net, &img, k, None)
        })
        .map(ranked)
        .map_err(err)
    }

    /// Trains in place on a data source string; returns the outcome as JSON.
    ///
    /// A fifth of the training split is held out for model selection.
    #[pyo3(signature = (data, config_json = None))]
    fn train(&mut self, py: Python<'_>, data: &str, config_json: Option<&str>) -> PyResult<String> {
        let config = match config_json {
            Some(c) => TrainConfig::from_json(c).map_err(err)?,
            None => TrainConfig::default(),
        };
        let split = DataSource::parse(data).and_then(|d| d.load_split()).map_err(err)?;
        let net = &mut self.net;
        let outcome = py
            .detach(|| {
                let (train_set, holdout) = split.train.split_holdout();
                train::train(net, &train_set, &holdout, &config)
            })
            .map_err(err)?;
        serde_json::to_string(&outcome).map_err(err)
    }

    /// Top-k report on a data source's evaluation split, as JSON.
    fn evaluate(&self, py: Python<'_>, data: &str) -> PyResult<String> {
        let set = DataSource::parse(data).and_then(|d| d.load_eval()).map_err(err)?;
        let report = py.detach(|| eval::evaluate(&self.net, &set)).map_err(err)?;
        serde_json::to_string(&report).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(family={:?}, classes={}, footprint_bytes={})",
            self.net.spec().family(),
            self.net.num_classes(),
            self.footprint_bytes()
        )
    }
}

#[pymodule]
fn hzr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sample_architecture, m)?)?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(topk, m)?)?;
    m.add("DEFAULT_CANDIDATES", DEFAULT_CANDIDATES)?;
    Ok(())
}

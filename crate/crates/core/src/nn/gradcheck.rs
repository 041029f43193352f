//! Central-difference verification of analytic gradients (double precision).

use super::{Layer, NnError, Tensor};

/// Worst disagreement found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `"input[i]"` or `"<param name>[i]"` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = err.max(self.max_rel_error);
            self.worst = label();
        }
    }

    fn merge(mut self, other: GradCheck) -> Self {
        if other.max_rel_error > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self
    }
}

/// `|a - n| / max(|a|, |n|)`, with both sides near zero counting as agreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        return (analytic - numeric).abs();
    }
    (analytic - numeric).abs() / scale
}

/// Checks `analytic` against central differences of `f` around `point`.
pub fn check_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], analytic: &[f64], epsilon: f64) -> GradCheck {
    assert_eq!(point.len(), analytic.len(), "gradient length");
    let mut x = point.to_vec();
    let mut report = GradCheck::empty();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = f(&x);
        x[i] = orig - epsilon;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        report.record(|| format!("x[{i}]"), analytic[i], numeric);
    }
    report
}

fn probe_loss(out: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
    out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

/// Gradient check of a layer (or a composite block) under the scalar loss
/// `Σ forward_train(input) ⊙ probe`, covering the input and every trainable
/// parameter.
pub fn check_layer(layer: &mut dyn Layer<f64>, input: &Tensor<f64>, probe: &Tensor<f64>, epsilon: f64) -> Result<GradCheck, NnError> {
    for p in layer.params_mut() {
        p.tensor.zero_grad();
    }
    let out = layer.forward_train(input)?;
    if out.shape() != probe.shape() {
        return Err(NnError::ShapeMismatch {
            op: "check_layer",
            dim: "probe",
            expected: out.len(),
            actual: probe.len(),
        });
    }
    let dx = layer.backward(probe)?;

    let mut failure = None;
    let input_report = check_gradient(
        |x| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).expect("same shape");
            match layer.forward_train(&t) {
                Ok(o) => probe_loss(&o, probe),
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        input.data(),
        dx.data(),
        epsilon,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut report = GradCheck {
        worst: input_report.worst.replace("x[", "input["),
        ..input_report
    };

    let analytic: Vec<(String, bool, Vec<f64>)> = layer
        .params()
        .iter()
        .map(|p| {
            let grad = p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]);
            (p.name.clone(), p.kind.trainable(), grad)
        })
        .collect();
    for (pi, (name, trainable, grad)) in analytic.iter().enumerate() {
        if !*trainable {
            continue;
        }
        let mut part = GradCheck::empty();
        for e in 0..grad.len() {
            let mut eval = |delta: f64| -> Result<f64, NnError> {
                let orig = {
                    let mut ps = layer.params_mut();
                    let v = &mut ps[pi].tensor.data_mut()[e];
                    let orig = *v;
                    *v = orig + delta;
                    orig
                };
                let loss = layer.forward_train(input).map(|o| probe_loss(&o, probe));
                layer.params_mut()[pi].tensor.data_mut()[e] = orig;
                loss
            };
            let plus = eval(epsilon)?;
            let minus = eval(-epsilon)?;
            part.record(|| format!("{name}[{e}]"), grad[e], (plus - minus) / (2.0 * epsilon));
        }
        report = report.merge(part);
    }
    layer.clear_cache();
    Ok(report)
}

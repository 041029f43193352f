//! Closed-form parameter, footprint and compute accounting derived from a
//! spec alone, without instantiating weights.

use serde::Serialize;

use super::spec::{ArchitectureSpec, LeNetSpec, ModelSpec};
use crate::nn::ParamKind;

pub const BYTES_PER_PARAM: u64 = 4;
pub const MIB: f64 = 1024.0 * 1024.0;

/// One stored tensor as laid out in a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub dims: [usize; 4],
    pub kind: ParamKind,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the owning layer (the name without its role suffix).
    pub fn layer(&self) -> &str {
        self.name.rsplit_once('.').map_or(&self.name, |(l, _)| l)
    }
}

#[derive(Default)]
struct Layout {
    params: Vec<ParamInfo>,
}

impl Layout {
    fn push(&mut self, layer: &str, kind: ParamKind, dims: [usize; 4]) {
        self.params.push(ParamInfo {
            name: format!("{layer}.{}", kind.suffix()),
            dims,
            kind,
        });
    }

    fn conv(&mut self, layer: &str, out_c: usize, in_c: usize, k: usize, bias: bool) {
        self.push(layer, ParamKind::Weight, [out_c, in_c, k, k]);
        if bias {
            self.push(layer, ParamKind::Bias, [1, out_c, 1, 1]);
        }
    }

    fn depthwise(&mut self, layer: &str, channels: usize, k: usize) {
        self.push(layer, ParamKind::Weight, [channels, 1, k, k]);
    }

    fn bn(&mut self, layer: &str, channels: usize) {
        for kind in [
            ParamKind::BnScale,
            ParamKind::BnShift,
            ParamKind::RunningMean,
            ParamKind::RunningVar,
        ] {
            self.push(layer, kind, [1, channels, 1, 1]);
        }
    }

    fn dense(&mut self, layer: &str, inputs: usize, outputs: usize) {
        self.push(layer, ParamKind::Weight, [outputs, inputs, 1, 1]);
        self.push(layer, ParamKind::Bias, [1, outputs, 1, 1]);
    }
}

pub const STEM_KERNEL: usize = 3;
pub const DEPTHWISE_KERNEL: usize = 3;
pub const LAST_CONV_KERNEL: usize = 1;

fn mobilenet_layout(spec: &ArchitectureSpec) -> Vec<ParamInfo> {
    let mut l = Layout::default();
    l.conv("stem.conv", spec.stem_channels, spec.input_size.channels, STEM_KERNEL, false);
    l.bn("stem.bn", spec.stem_channels);
    let mut in_c = spec.stem_channels;
    for (i, seq) in spec.sequences.iter().enumerate() {
        for j in 0..seq.length {
            let p = format!("seq{i}.block{j}");
            let hidden = in_c * seq.expansion;
            l.conv(&format!("{p}.expand.conv"), hidden, in_c, 1, false);
            l.bn(&format!("{p}.expand.bn"), hidden);
            l.depthwise(&format!("{p}.depthwise.conv"), hidden, DEPTHWISE_KERNEL);
            l.bn(&format!("{p}.depthwise.bn"), hidden);
            l.conv(&format!("{p}.project.conv"), seq.channels, hidden, 1, false);
            l.bn(&format!("{p}.project.bn"), seq.channels);
            in_c = seq.channels;
        }
    }
    l.conv("last.conv", spec.last_conv_channels, in_c, LAST_CONV_KERNEL, false);
    l.bn("last.bn", spec.last_conv_channels);
    if !spec.uses_global_pool() {
        let (h, w) = spec.final_spatial();
        l.dense("head.dense", spec.last_conv_channels * h * w, spec.head_units);
    }
    l.dense("classifier", spec.feature_width(), spec.num_classes);
    l.params
}

fn lenet_layout(spec: &LeNetSpec) -> Vec<ParamInfo> {
    let mut l = Layout::default();
    let mut in_c = spec.input_size.channels;
    let (mut h, mut w) = (spec.input_size.height, spec.input_size.width);
    for (i, &c) in spec.conv_channels.iter().enumerate() {
        l.conv(&format!("conv{i}"), c, in_c, 3, true);
        in_c = c;
        h /= 2;
        w /= 2;
    }
    l.dense("hidden", in_c * h * w, spec.hidden_units);
    l.dense("classifier", spec.hidden_units, spec.num_classes);
    l.params
}

/// Every stored tensor of a model in checkpoint order.
pub fn param_layout(spec: &ModelSpec) -> Vec<ParamInfo> {
    match spec {
        ModelSpec::MobileNet(s) => mobilenet_layout(s),
        ModelSpec::LeNet(s) => lenet_layout(s),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub layer: String,
    pub weights: u64,
    pub biases: u64,
    /// Batch-norm scale and shift.
    pub bn_params: u64,
    /// Batch-norm running statistics (stored, not trained).
    pub buffers: u64,
}

impl LayerCount {
    pub fn trainable(&self) -> u64 {
        self.weights + self.biases + self.bn_params
    }

    pub fn stored(&self) -> u64 {
        self.trainable() + self.buffers
    }

    fn add(&mut self, other: &LayerCount) {
        self.weights += other.weights;
        self.biases += other.biases;
        self.bn_params += other.bn_params;
        self.buffers += other.buffers;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub layers: Vec<LayerCount>,
    pub trainable: u64,
    /// Every stored scalar, running statistics included.
    pub total: u64,
    pub largest_layer: String,
}

impl ParamCount {
    pub fn layer(&self, name: &str) -> Option<&LayerCount> {
        self.layers.iter().find(|l| l.layer == name)
    }

    /// Aggregate over every layer whose name starts with `prefix`.
    pub fn sum_prefix(&self, prefix: &str) -> LayerCount {
        let mut acc = LayerCount {
            layer: prefix.to_string(),
            ..Default::default()
        };
        for l in self.layers.iter().filter(|l| l.layer.starts_with(prefix)) {
            acc.add(l);
        }
        acc
    }

    /// On-disk parameter bytes at four bytes per stored scalar.
    pub fn footprint_bytes(&self) -> u64 {
        self.total * BYTES_PER_PARAM
    }

    pub fn footprint_mib(&self) -> f64 {
        self.footprint_bytes() as f64 / MIB
    }

    /// Share of trainable parameters held by `layer`.
    pub fn share(&self, layer: &str) -> f64 {
        self.layer(layer).map_or(0.0, |l| l.trainable() as f64 / self.trainable as f64)
    }
}

/// Exact per-layer and total parameter counts for `spec`.
pub fn count_params(spec: &ModelSpec) -> ParamCount {
    let mut layers: Vec<LayerCount> = Vec::new();
    for p in param_layout(spec) {
        let layer = p.layer().to_string();
        if layers.last().map(|l| l.layer != layer).unwrap_or(true) {
            layers.push(LayerCount {
                layer,
                ..Default::default()
            });
        }
        let entry = layers.last_mut().expect("pushed above");
        let n = p.len() as u64;
        match p.kind {
            ParamKind::Weight => entry.weights += n,
            ParamKind::Bias => entry.biases += n,
            ParamKind::BnScale | ParamKind::BnShift => entry.bn_params += n,
            ParamKind::RunningMean | ParamKind::RunningVar => entry.buffers += n,
        }
    }
    let trainable = layers.iter().map(LayerCount::trainable).sum();
    let total = layers.iter().map(LayerCount::stored).sum();
    let largest_layer = layers
        .iter()
        .max_by_key(|l| l.trainable())
        .map(|l| l.layer.clone())
        .unwrap_or_default();
    ParamCount {
        layers,
        trainable,
        total,
        largest_layer,
    }
}

/// Multiply-accumulates for one forward pass of a single image.
pub fn count_macs(spec: &ModelSpec) -> u64 {
    let mut macs = 0u64;
    match spec {
        ModelSpec::MobileNet(s) => {
            let (mut h, mut w) = (s.input_size.height as u64, s.input_size.width as u64);
            let k2 = (STEM_KERNEL * STEM_KERNEL) as u64;
            macs += h * w * (s.stem_channels * s.input_size.channels) as u64 * k2;
            let mut in_c = s.stem_channels as u64;
            for seq in &s.sequences {
                for j in 0..seq.length {
                    let stride = if j == 0 { seq.first_stride as u64 } else { 1 };
                    let hidden = in_c * seq.expansion as u64;
                    macs += h * w * in_c * hidden;
                    h = h.div_ceil(stride);
                    w = w.div_ceil(stride);
                    macs += h * w * hidden * (DEPTHWISE_KERNEL * DEPTHWISE_KERNEL) as u64;
                    macs += h * w * hidden * seq.channels as u64;
                    in_c = seq.channels as u64;
                }
            }
            macs += h * w * in_c * s.last_conv_channels as u64;
            if !s.uses_global_pool() {
                macs += h * w * s.last_conv_channels as u64 * s.head_units as u64;
            }
            macs += (s.feature_width() * s.num_classes) as u64;
        }
        ModelSpec::LeNet(s) => {
            let (mut h, mut w) = (s.input_size.height as u64, s.input_size.width as u64);
            let mut in_c = s.input_size.channels as u64;
            for &c in &s.conv_channels {
                macs += h * w * in_c * c as u64 * 9;
                in_c = c as u64;
                h /= 2;
                w /= 2;
            }
            macs += h * w * in_c * s.hidden_units as u64;
            macs += (s.hidden_units * s.num_classes) as u64;
        }
    }
    macs
}

use std::fmt;

use serde::Serialize;

use super::accounting::{DEPTHWISE_KERNEL, LAST_CONV_KERNEL, STEM_KERNEL};
use super::spec::{ArchitectureSpec, LeNetSpec, ModelSpec};
use super::ModelError;
use crate::nn::{
    BatchNorm, Conv2d, Dense, DepthwiseConv2d, GlobalAvgPool, Layer, MaxPool2d, NnError, Padding, ParamRef,
    ParamRefMut, Relu, Relu6, Scalar, Shape, Tensor,
};
use crate::rng;

/// Inverted residual block: 1×1 expansion → 3×3 depthwise → linear 1×1
/// projection, each followed by batch norm; relu6 after the first two.
pub struct Bottleneck<T> {
    name: String,
    expand: Conv2d<T>,
    expand_bn: BatchNorm<T>,
    expand_act: Relu6<T>,
    depthwise: DepthwiseConv2d<T>,
    depthwise_bn: BatchNorm<T>,
    depthwise_act: Relu6<T>,
    project: Conv2d<T>,
    project_bn: BatchNorm<T>,
    residual: bool,
}

impl<T: Scalar> Bottleneck<T> {
    pub fn new<R: rand::Rng + ?Sized>(
        name: impl Into<String>,
        in_channels: usize,
        expansion: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let name = name.into();
        let hidden = in_channels * expansion;
        Self {
            expand: Conv2d::new(format!("{name}.expand.conv"), in_channels, hidden, 1, 1, Padding::Same, false, rng),
            expand_bn: BatchNorm::new(format!("{name}.expand.bn"), hidden),
            expand_act: Relu6::new(format!("{name}.expand.act")),
            depthwise: DepthwiseConv2d::new(format!("{name}.depthwise.conv"), hidden, DEPTHWISE_KERNEL, stride, rng),
            depthwise_bn: BatchNorm::new(format!("{name}.depthwise.bn"), hidden),
            depthwise_act: Relu6::new(format!("{name}.depthwise.act")),
            project: Conv2d::new(format!("{name}.project.conv"), hidden, out_channels, 1, 1, Padding::Same, false, rng),
            project_bn: BatchNorm::new(format!("{name}.project.bn"), out_channels),
            residual: stride == 1 && in_channels == out_channels,
            name,
        }
    }

    pub fn has_residual(&self) -> bool {
        self.residual
    }

    /// Inputs seen by the two relu6 stages during the last training pass.
    pub fn activation_inputs(&self) -> Vec<&Tensor<T>> {
        [&self.expand_act, &self.depthwise_act]
            .into_iter()
            .filter_map(|a| a.cached_input())
            .collect()
    }

    fn stages(&self) -> [&dyn Layer<T>; 8] {
        [
            &self.expand,
            &self.expand_bn,
            &self.expand_act,
            &self.depthwise,
            &self.depthwise_bn,
            &self.depthwise_act,
            &self.project,
            &self.project_bn,
        ]
    }

    fn stages_mut(&mut self) -> [&mut dyn Layer<T>; 8] {
        [
            &mut self.expand,
            &mut self.expand_bn,
            &mut self.expand_act,
            &mut self.depthwise,
            &mut self.depthwise_bn,
            &mut self.depthwise_act,
            &mut self.project,
            &mut self.project_bn,
        ]
    }
}

fn add_in_place<T: Scalar>(acc: &mut Tensor<T>, other: &Tensor<T>) {
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

impl<T: Scalar> Layer<T> for Bottleneck<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "bottleneck"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        self.stages().iter().try_fold(input, |s, l| l.output_shape(s))
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut x = self.expand.forward(input)?;
        for stage in &self.stages()[1..] {
            x = stage.forward(&x)?;
        }
        if self.residual {
            add_in_place(&mut x, input);
        }
        Ok(x)
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let residual = self.residual;
        let mut stages = self.stages_mut();
        let mut x = stages[0].forward_train(input)?;
        for stage in stages[1..].iter_mut() {
            x = stage.forward_train(&x)?;
        }
        if residual {
            add_in_place(&mut x, input);
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let residual = self.residual;
        let mut stages = self.stages_mut();
        let mut g = grad_out.clone();
        for stage in stages.iter_mut().rev() {
            g = stage.backward(&g)?;
        }
        if residual {
            add_in_place(&mut g, grad_out);
        }
        Ok(g)
    }

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        let [a, b, _, c, d, _, e, f] = self.stages();
        [a, b, c, d, e, f].into_iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<ParamRefMut<'_, T>> {
        let mut out = self.expand.params_mut();
        out.extend(self.expand_bn.params_mut());
        out.extend(self.depthwise.params_mut());
        out.extend(self.depthwise_bn.params_mut());
        out.extend(self.project.params_mut());
        out.extend(self.project_bn.params_mut());
        out
    }

    fn clear_cache(&mut self) {
        for s in self.stages_mut() {
            s.clear_cache();
        }
    }
}

/// Input column of an architecture table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum RowInput {
    Spatial { height: usize, width: usize, channels: usize },
    Flat(usize),
}

impl fmt::Display for RowInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowInput::Spatial {
                height,
                width,
                channels,
            } => write!(f, "{height}×{width}×{channels}"),
            RowInput::Flat(n) => write!(f, "{n}"),
        }
    }
}

impl RowInput {
    fn from_shape(s: Shape) -> Self {
        if s.h == 1 && s.w == 1 {
            RowInput::Flat(s.c)
        } else {
            RowInput::Spatial {
                height: s.h,
                width: s.w,
                channels: s.c,
            }
        }
    }
}

/// One row of the `Input | Layer | t | c | n | s` architecture table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    pub input: RowInput,
    pub layer: String,
    pub t: Option<usize>,
    pub c: usize,
    pub n: usize,
    pub s: Option<usize>,
}

/// Executable classifier built from a [`ModelSpec`].
pub struct Network<T = f32> {
    spec: ModelSpec,
    layers: Vec<Box<dyn Layer<T>>>,
    summary: Vec<SummaryRow>,
}

impl<T: Scalar> fmt::Debug for Network<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("family", &self.spec.family())
            .field("layers", &self.layers.len())
            .finish()
    }
}

struct Builder<T> {
    layers: Vec<Box<dyn Layer<T>>>,
    summary: Vec<SummaryRow>,
    shape: Shape,
}

impl<T: Scalar> Builder<T> {
    fn push(&mut self, layer: impl Layer<T> + 'static) -> Result<(), NnError> {
        self.shape = layer.output_shape(self.shape)?;
        self.layers.push(Box::new(layer));
        Ok(())
    }

    fn row(&mut self, layer: &str, t: Option<usize>, c: usize, n: usize, s: Option<usize>) {
        self.summary.push(SummaryRow {
            input: RowInput::from_shape(self.shape),
            layer: layer.to_string(),
            t,
            c,
            n,
            s,
        });
    }
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes the network; weights are drawn from a stream keyed by `seed`.
    pub fn build(spec: impl Into<ModelSpec>, seed: u64) -> Result<Self, ModelError> {
        let spec = spec.into();
        spec.validate()?;
        let input = spec.input_size();
        let mut b = Builder {
            layers: Vec::new(),
            summary: Vec::new(),
            shape: Shape::new(1, input.channels, input.height, input.width),
        };
        let mut rng = rng::derived(seed, &[0x1A17]);
        match &spec {
            ModelSpec::MobileNet(s) => build_mobilenet(&mut b, s, &mut rng)?,
            ModelSpec::LeNet(s) => build_lenet(&mut b, s, &mut rng)?,
        }
        Ok(Self {
            spec,
            layers: b.layers,
            summary: b.summary,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        let i = self.spec.input_size();
        Shape::new(batch, i.channels, i.height, i.width)
    }

    /// Table-style description with shapes taken from the built layers.
    pub fn summary(&self) -> &[SummaryRow] {
        &self.summary
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        &self.layers
    }

    /// Output shape after every top-level layer, for a batch of one.
    pub fn layer_shapes(&self) -> Result<Vec<(String, Shape)>, ModelError> {
        let mut shape = self.input_shape(1);
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(shape)?;
            out.push((l.name().to_string(), shape));
        }
        Ok(out)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        let s = x.shape();
        let expected = self.input_shape(s.n);
        if s != expected {
            return Err(ModelError::InputShape { expected, actual: s });
        }
        if s.n == 0 {
            return Err(NnError::EmptyBatch.into());
        }
        Ok(())
    }

    /// Inference-mode logits `(N, classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(x)?;
        let mut h = self.layers[0].forward(x)?;
        for l in &self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(x)?;
        let mut h = self.layers[0].forward_train(x)?;
        for l in self.layers[1..].iter_mut() {
            h = l.forward_train(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates `grad` (w.r.t. the logits) and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamRefMut<'_, T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }

    /// Copy of every stored tensor's values, in parameter order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| p.tensor.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) -> Result<(), ModelError> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(ModelError::InvalidSpec("snapshot does not match network".into()));
        }
        for (p, values) in params.iter_mut().zip(snapshot) {
            if p.tensor.len() != values.len() {
                return Err(ModelError::InvalidSpec(format!("snapshot length mismatch for {}", p.name)));
            }
            p.tensor.data_mut().copy_from_slice(values);
        }
        Ok(())
    }
}

fn build_mobilenet<T: Scalar>(b: &mut Builder<T>, s: &ArchitectureSpec, rng: &mut rng::Rng) -> Result<(), ModelError> {
    b.row("conv2D", None, s.stem_channels, 1, Some(1));
    b.push(Conv2d::new(
        "stem.conv",
        s.input_size.channels,
        s.stem_channels,
        STEM_KERNEL,
        1,
        Padding::Same,
        false,
        rng,
    ))?;
    b.push(BatchNorm::new("stem.bn", s.stem_channels))?;
    b.push(Relu6::new("stem.act"))?;

    let mut in_c = s.stem_channels;
    for (i, seq) in s.sequences.iter().enumerate() {
        b.row("bottleneck", Some(seq.expansion), seq.channels, seq.length, Some(seq.first_stride));
        for j in 0..seq.length {
            let stride = if j == 0 { seq.first_stride } else { 1 };
            let block = Bottleneck::new(format!("seq{i}.block{j}"), in_c, seq.expansion, seq.channels, stride, rng);
            b.push(block).map_err(|e| match e {
                NnError::SpatialUnderflow { size, .. } => ModelError::SpatialUnderflow {
                    sequence: i,
                    height: size as f64,
                    width: size as f64,
                },
                other => other.into(),
            })?;
            in_c = seq.channels;
        }
    }

    b.row("conv2D", None, s.last_conv_channels, 1, Some(1));
    b.push(Conv2d::new(
        "last.conv",
        in_c,
        s.last_conv_channels,
        LAST_CONV_KERNEL,
        1,
        Padding::Same,
        false,
        rng,
    ))?;
    b.push(BatchNorm::new("last.bn", s.last_conv_channels))?;
    b.push(Relu6::new("last.act"))?;

    if s.uses_global_pool() {
        b.row("global avg. pooling", None, s.last_conv_channels, 1, Some(1));
        b.push(GlobalAvgPool::new("head.gap"))?;
    } else {
        b.row("dense", None, s.head_units, 1, None);
        let features = b.shape.item_len();
        b.push(Dense::new("head.dense", features, s.head_units, rng))?;
        b.push(Relu6::new("head.act"))?;
    }
    b.row("dense", None, s.num_classes, 1, None);
    let features = b.shape.item_len();
    b.push(Dense::new("classifier", features, s.num_classes, rng))?;
    Ok(())
}

fn build_lenet<T: Scalar>(b: &mut Builder<T>, s: &LeNetSpec, rng: &mut rng::Rng) -> Result<(), ModelError> {
    let mut in_c = s.input_size.channels;
    for (i, &c) in s.conv_channels.iter().enumerate() {
        b.row("conv2D", None, c, 1, Some(1));
        b.push(Conv2d::new(format!("conv{i}"), in_c, c, 3, 1, Padding::Same, true, rng))?;
        b.push(Relu::new(format!("conv{i}.act")))?;
        b.row("max pooling", None, c, 1, Some(2));
        b.push(MaxPool2d::new(format!("pool{i}"), 2, 2))?;
        in_c = c;
    }
    b.row("dense", None, s.hidden_units, 1, None);
    let features = b.shape.item_len();
    b.push(Dense::new("hidden", features, s.hidden_units, rng))?;
    b.push(Relu::new("hidden.act"))?;
    b.row("dense", None, s.num_classes, 1, None);
    b.push(Dense::new("classifier", s.hidden_units, s.num_classes, rng))?;
    Ok(())
}

/// Adapted MobileNetV2 for `spec`.
pub fn build_network(spec: &ArchitectureSpec, seed: u64) -> Result<Network<f32>, ModelError> {
    Network::build(spec.clone(), seed)
}

/// Conv/pool baseline with the standard 32/64/128 channel plan.
pub fn build_lenet_baseline(num_classes: usize, seed: u64) -> Result<Network<f32>, ModelError> {
    Network::build(LeNetSpec::baseline(num_classes), seed)
}

//! Stateful layers: parameters with gradient slots plus the activations each
//! training-mode forward pass caches for its backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, BatchNormCache};
use super::{NnError, Padding, Scalar, Shape, Tensor};

/// Role of a stored tensor. Running statistics are persisted but not trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn suffix(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::BnScale => "gamma",
            ParamKind::BnShift => "beta",
            ParamKind::RunningMean => "running_mean",
            ParamKind::RunningVar => "running_var",
        }
    }
}

pub struct ParamRef<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: &'a Tensor<T>,
}

pub struct ParamRefMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: &'a mut Tensor<T>,
}

/// A differentiable stage of a network.
///
/// `forward` is the read-only inference path. `forward_train` caches what
/// `backward` needs; `backward` accumulates parameter gradients into each
/// tensor's gradient slot and returns the gradient for the layer input.
pub trait Layer<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> &'static str;
    fn output_shape(&self, input: Shape) -> Result<Shape, NnError>;
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError>;
    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError>;
    fn params(&self) -> Vec<ParamRef<'_, T>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<ParamRefMut<'_, T>> {
        Vec::new()
    }
    fn clear_cache(&mut self);
}

pub(crate) fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..shape.len()).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn param<'a, T>(prefix: &str, kind: ParamKind, tensor: &'a Tensor<T>) -> ParamRef<'a, T> {
    ParamRef {
        name: format!("{prefix}.{}", kind.suffix()),
        kind,
        tensor,
    }
}

fn param_mut<'a, T>(prefix: &str, kind: ParamKind, tensor: &'a mut Tensor<T>) -> ParamRefMut<'a, T> {
    ParamRefMut {
        name: format!("{prefix}.{}", kind.suffix()),
        kind,
        tensor,
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub struct Conv2d<T> {
    name: String,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    stride: usize,
    padding: Padding,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let shape = Shape::new(out_channels, in_channels, kernel, kernel);
        Self {
            name: name.into(),
            weight: he_normal(shape, in_channels * kernel * kernel, rng),
            bias: with_bias.then(|| Tensor::zeros(Shape::new(1, out_channels, 1, 1))),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        let w = self.weight.shape();
        if input.c != w.c {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                dim: "input channels",
                expected: w.c,
                actual: input.c,
            });
        }
        let under = |size| NnError::SpatialUnderflow {
            op: "conv2d",
            size,
            kernel: w.h,
        };
        let (h, _) = self.padding.resolve(input.h, w.h, self.stride).ok_or(under(input.h))?;
        let (wd, _) = self.padding.resolve(input.w, w.w, self.stride).ok_or(under(input.w))?;
        Ok(Shape::new(input.n, w.n, h, wd))
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        ops::conv2d(input, &self.weight, self.bias.as_ref().map(|b| b.data()), self.stride, self.padding)
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out = self.forward(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cache.as_ref().ok_or(NnError::NoForwardCache("conv2d"))?;
        let grads = ops::conv2d_backward(input, &self.weight, self.stride, self.padding, grad_out)?;
        add_into(self.weight.grad_mut(), &grads.weights);
        if let Some(b) = &mut self.bias {
            add_into(b.grad_mut(), &grads.bias);
        }
        Ok(grads.input)
    }

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = vec![param(&self.name, ParamKind::Weight, &self.weight)];
        if let Some(b) = &self.bias {
            out.push(param(&self.name, ParamKind::Bias, b));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<ParamRefMut<'_, T>> {
        let mut out = vec![param_mut(&self.name, ParamKind::Weight, &mut self.weight)];
        if let Some(b) = &mut self.bias {
            out.push(param_mut(&self.name, ParamKind::Bias, b));
        }
        out
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub struct DepthwiseConv2d<T> {
    name: String,
    pub weight: Tensor<T>,
    stride: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> DepthwiseConv2d<T> {
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            name: name.into(),
            weight: he_normal(Shape::new(channels, 1, kernel, kernel), kernel * kernel, rng),
            stride,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for DepthwiseConv2d<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "depthwise_conv2d"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        let w = self.weight.shape();
        if input.c != w.n {
            return Err(NnError::ShapeMismatch {
                op: "depthwise_conv2d",
                dim: "channels",
                expected: w.n,
                actual: input.c,
            });
        }
        let (h, _) = Padding::Same.resolve(input.h, w.h, self.stride).ok_or(NnError::SpatialUnderflow {
            op: "depthwise_conv2d",
            size: input.h,
            kernel: w.h,
        })?;
        let (wd, _) = Padding::Same.resolve(input.w, w.w, self.stride).ok_or(NnError::SpatialUnderflow {
            op: "depthwise_conv2d",
            size: input.w,
            kernel: w.w,
        })?;
        Ok(Shape::new(input.n, input.c, h, wd))
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        ops::depthwise_conv2d(input, &self.weight, self.stride)
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out = self.forward(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cache.as_ref().ok_or(NnError::NoForwardCache("depthwise_conv2d"))?;
        let (dx, dw) = ops::depthwise_conv2d_backward(input, &self.weight, self.stride, grad_out)?;
        add_into(self.weight.grad_mut(), &dw);
        Ok(dx)
    }

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        vec![param(&self.name, ParamKind::Weight, &self.weight)]
    }

    fn params_mut(&mut self) -> Vec<ParamRefMut<'_, T>> {
        vec![param_mut(&self.name, ParamKind::Weight, &mut self.weight)]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

pub struct BatchNorm<T> {
    name: String,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    /// Weight of the previous running value in the moving average.
    pub momentum: T,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        Self {
            name: name.into(),
            gamma: Tensor::filled(shape, T::one()),
            beta: Tensor::zeros(shape),
            running_mean: Tensor::zeros(shape),
            running_var: Tensor::filled(shape, T::one()),
            epsilon: T::lit(BN_EPSILON),
            momentum: T::lit(BN_MOMENTUM),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Pre-normalization statistics of the last training pass.
    pub fn last_batch_stats(&self) -> Option<(&[T], &[T])> {
        self.cache.as_ref().map(|c| (&c.mean[..], &c.var[..]))
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        if input.c != self.channels() {
            return Err(NnError::ShapeMismatch {
                op: "batchnorm",
                dim: "channels",
                expected: self.channels(),
                actual: input.c,
            });
        }
        Ok(input)
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        ops::batchnorm_infer(
            input,
            self.gamma.data(),
            self.beta.data(),
            self.running_mean.data(),
            self.running_var.data(),
            self.epsilon,
        )
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (out, cache) = ops::batchnorm_train(input, self.gamma.data(), self.beta.data(), self.epsilon)?;
        let m = self.momentum;
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = m * *r + keep * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = m * *r + keep * b;
        }
        self.cache = Some(cache);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("batchnorm"))?;
        let (dx, dg, db) = ops::batchnorm_backward(cache, self.gamma.data(), grad_out)?;
        add_into(self.gamma.grad_mut(), &dg);
        add_into(self.beta.grad_mut(), &db);
        Ok(dx)
    }

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        vec![
            param(&self.name, ParamKind::BnScale, &self.gamma),
            param(&self.name, ParamKind::BnShift, &self.beta),
            param(&self.name, ParamKind::RunningMean, &self.running_mean),
            param(&self.name, ParamKind::RunningVar, &self.running_var),
        ]
    }

    fn params_mut(&mut self) -> Vec<ParamRefMut<'_, T>> {
        vec![
            param_mut(&self.name, ParamKind::BnScale, &mut self.gamma),
            param_mut(&self.name, ParamKind::BnShift, &mut self.beta),
            param_mut(&self.name, ParamKind::RunningMean, &mut self.running_mean),
            param_mut(&self.name, ParamKind::RunningVar, &mut self.running_var),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub struct Relu6<T> {
    name: String,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu6<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cache: None,
        }
    }

    /// Input of the last training pass.
    pub fn cached_input(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref()
    }
}

impl<T: Scalar> Layer<T> for Relu6<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "relu6"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        Ok(input)
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(ops::relu6(input))
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.cache = Some(input.clone());
        Ok(ops::relu6(input))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cache.as_ref().ok_or(NnError::NoForwardCache("relu6"))?;
        ops::relu6_backward(input, grad_out)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub struct Relu<T> {
    name: String,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "relu"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        Ok(input)
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(ops::relu(input))
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.cache = Some(input.clone());
        Ok(ops::relu(input))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cache.as_ref().ok_or(NnError::NoForwardCache("relu"))?;
        ops::relu_backward(input, grad_out)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Fully connected layer over the flattened `(C, H, W)` of each item.
pub struct Dense<T> {
    name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            name: name.into(),
            weight: he_normal(Shape::new(out_features, in_features, 1, 1), in_features, rng),
            bias: Tensor::zeros(Shape::new(1, out_features, 1, 1)),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().n
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "dense"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        if input.item_len() != self.in_features() {
            return Err(NnError::ShapeMismatch {
                op: "dense",
                dim: "input features",
                expected: self.in_features(),
                actual: input.item_len(),
            });
        }
        Ok(Shape::new(input.n, self.out_features(), 1, 1))
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        ops::dense(input, &self.weight, self.bias.data())
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out = self.forward(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.cache.as_ref().ok_or(NnError::NoForwardCache("dense"))?;
        let (dx, dw, db) = ops::dense_backward(input, &self.weight, grad_out)?;
        add_into(self.weight.grad_mut(), &dw);
        add_into(self.bias.grad_mut(), &db);
        Ok(dx)
    }

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        vec![
            param(&self.name, ParamKind::Weight, &self.weight),
            param(&self.name, ParamKind::Bias, &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<ParamRefMut<'_, T>> {
        vec![
            param_mut(&self.name, ParamKind::Weight, &mut self.weight),
            param_mut(&self.name, ParamKind::Bias, &mut self.bias),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub struct GlobalAvgPool {
    name: String,
    cache: Option<Shape>,
}

impl GlobalAvgPool {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "global_avg_pool"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        Ok(Shape::new(input.n, input.c, 1, 1))
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        ops::global_avg_pool(input)
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.cache = Some(input.shape());
        ops::global_avg_pool(input)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.cache.ok_or(NnError::NoForwardCache("global_avg_pool"))?;
        ops::global_avg_pool_backward(shape, grad_out)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub struct MaxPool2d {
    name: String,
    window: usize,
    stride: usize,
    cache: Option<(Shape, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(name: impl Into<String>, window: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            window,
            stride,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "max_pool2d"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        let under = |size| NnError::SpatialUnderflow {
            op: "max_pool2d",
            size,
            kernel: self.window,
        };
        let (h, _) = Padding::Valid.resolve(input.h, self.window, self.stride).ok_or(under(input.h))?;
        let (w, _) = Padding::Valid.resolve(input.w, self.window, self.stride).ok_or(under(input.w))?;
        Ok(Shape::new(input.n, input.c, h, w))
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        ops::max_pool2d(input, self.window, self.stride).map(|(out, _)| out)
    }

    fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (out, argmax) = ops::max_pool2d(input, self.window, self.stride)?;
        self.cache = Some((input.shape(), argmax));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (shape, argmax) = self.cache.as_ref().ok_or(NnError::NoForwardCache("max_pool2d"))?;
        ops::max_pool2d_backward(*shape, argmax, grad_out)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

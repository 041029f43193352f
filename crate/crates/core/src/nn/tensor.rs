use std::fmt;
use std::sync::Arc;

use super::{NnError, Scalar};

/// Dimensions of a rank-4 activation or parameter array, NCHW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW array with an optional gradient slot of identical shape.
///
/// Values are shared copy-on-write, so cloning an activation to cache it is cheap.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Arc<Vec<T>>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: Arc::new(vec![T::zero(); shape.len()]),
            grad: None,
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: Arc::new(vec![value; shape.len()]),
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, NnError> {
        if data.len() != shape.len() {
            return Err(NnError::LengthMismatch {
                shape,
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            grad: None,
        })
    }

    /// Rank-1 convenience: a `(1, len, 1, 1)` tensor.
    pub fn vector(data: Vec<T>) -> Self {
        let shape = Shape::new(1, data.len(), 1, 1);
        Self {
            shape,
            data: Arc::new(data),
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_data(self) -> Vec<T> {
        Arc::unwrap_or_clone(self.data)
    }

    /// Same values reinterpreted under another shape with the same element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self, NnError> {
        if shape.len() != self.data.len() {
            return Err(NnError::LengthMismatch {
                shape,
                expected: shape.len(),
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), shape.len());
        }
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient slot, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    /// Values and gradient slot borrowed together.
    pub fn value_and_grad_mut(&mut self) -> (&mut [T], &mut [T]) {
        let len = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![T::zero(); len]);
        (Arc::make_mut(&mut self.data).as_mut_slice(), grad)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Contiguous slice for batch item `i`.
    pub fn item(&self, i: usize) -> &[T] {
        let len = self.shape.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.shape.item_len();
        &mut Arc::make_mut(&mut self.data).as_mut_slice()[i * len..(i + 1) * len]
    }

    /// Contiguous slice for channel `c` of batch item `i`.
    pub fn plane(&self, i: usize, c: usize) -> &[T] {
        let plane = self.shape.plane();
        let start = (i * self.shape.c + c) * plane;
        &self.data[start..start + plane]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
            grad: None,
        }
    }

    /// Precision conversion; the gradient slot is dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from(*v).expect("finite scalar conversion"))
                .collect::<Vec<_>>()
                .into(),
            grad: None,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack batch items of identically shaped tensors along the batch axis.
    pub fn concat_batch(items: &[&Tensor<T>]) -> Result<Self, NnError> {
        let Some(first) = items.first() else {
            return Err(NnError::EmptyBatch);
        };
        let s = first.shape;
        let mut data = Vec::with_capacity(s.item_len() * items.iter().map(|t| t.shape.n).sum::<usize>());
        let mut n = 0;
        for t in items {
            if t.shape.item_len() != s.item_len() || (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(NnError::ShapeMismatch {
                    op: "concat_batch",
                    dim: "item",
                    expected: s.item_len(),
                    actual: t.shape.item_len(),
                });
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }
}

impl<T> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

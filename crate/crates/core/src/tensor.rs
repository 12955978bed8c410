//! Dense rank-4 tensors in NCHW layout and trainable parameters.
//!
//! Everything is generic over [`Real`] so the same kernels run in 32-bit for
//! training and inference and in 64-bit inside the gradient checker.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// (batch, channels, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{} elements for {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Samples every element from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..shape.len())
            .map(|_| T::from_f64_lossy(normal.sample(rng)))
            .collect();
        Self { shape, data }
    }

    /// Samples every element uniformly from [lo, hi).
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| T::from_f64_lossy(rng.random_range(lo..hi)))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.shape.channels + c) * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(b, c, y, x);
        self.data[i] = v;
    }

    /// One (batch, channel) plane.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    /// Copies channel `c` of every batch item into a single-channel tensor.
    pub fn channel(&self, c: usize) -> Tensor<T> {
        let shape = self.shape.with_channels(1);
        let mut out = Tensor::zeros(shape);
        for b in 0..shape.batch {
            out.plane_mut(b, 0).copy_from_slice(self.plane(b, c));
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_shape("Tensor::add_assign", other.shape)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossy()).sum()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub(crate) fn expect_shape(&self, op: &'static str, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(op, expected, self.shape));
        }
        Ok(())
    }
}

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
    /// Multiplier applied to the group learning rate.
    pub lr_scale: f64,
    /// Lower bound enforced after every optimizer step.
    pub min_value: Option<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape();
        Self {
            value,
            grad: Tensor::zeros(shape),
            momentum: Tensor::zeros(shape),
            lr_scale: 1.0,
            min_value: None,
        }
    }

    pub fn with_min_value(mut self, min: T) -> Self {
        self.min_value = Some(min);
        self
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Real>(&self) -> Parameter<U> {
        Parameter {
            value: self.value.cast(),
            grad: self.grad.cast(),
            momentum: self.momentum.cast(),
            lr_scale: self.lr_scale,
            min_value: self.min_value.map(|m| U::from_f64_lossy(m.to_f64_lossy())),
        }
    }
}

/// Read/write access to every parameter of a network in a fixed order.
///
/// The order is part of the model container format and of the gradient checker's report.
pub trait Parameterized<T: Real> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>));

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name.to_string()));
        names
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }
}

/// Prefixes every parameter name visited through `inner` with `prefix.`.
pub(crate) fn visit_prefixed<T: Real>(
    prefix: &str,
    inner: &dyn Parameterized<T>,
    f: &mut dyn FnMut(&str, &Parameter<T>),
) {
    inner.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

pub(crate) fn visit_prefixed_mut<T: Real>(
    prefix: &str,
    inner: &mut dyn Parameterized<T>,
    f: &mut dyn FnMut(&str, &mut Parameter<T>),
) {
    inner.visit_params_mut(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

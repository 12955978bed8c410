//! Stride-1, zero-padded 2-D cross-correlation and its exact gradients.
//!
//! Every output element is produced by exactly one task with a fixed
//! accumulation order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Parameterized, Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Odd square kernel with the padding that preserves spatial size.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        debug_assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            padding: kernel / 2,
        }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// `(height, width)` of the output for an input of the given size.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let oh = (height + 2 * self.padding) as isize - self.kernel_h as isize + 1;
        let ow = (width + 2 * self.padding) as isize - self.kernel_w as isize + 1;
        if oh < 1 || ow < 1 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                reason: format!(
                    "input {height}x{width} with padding {} is smaller than kernel {}x{}",
                    self.padding, self.kernel_h, self.kernel_w
                ),
            });
        }
        Ok((oh as usize, ow as usize))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (oh, ow) = self.output_size(input.height, input.width)?;
        Ok(Shape::new(input.batch, self.out_channels, oh, ow))
    }

    fn validate(
        &self,
        op: &'static str,
        input: Shape,
        weights: Shape,
        bias: Option<usize>,
    ) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
        {
            return Err(Error::InvalidArgument {
                op,
                reason: format!("degenerate conv spec {self:?}"),
            });
        }
        if weights != self.weight_shape() {
            return Err(Error::shape(
                op,
                format!("weights {}", self.weight_shape()),
                format!("weights {weights}"),
            ));
        }
        if input.channels != self.in_channels {
            return Err(Error::shape(
                op,
                format!("input with {} channels", self.in_channels),
                format!("input {input}"),
            ));
        }
        if let Some(len) = bias {
            if len != self.out_channels {
                return Err(Error::shape(
                    op,
                    format!("bias of length {}", self.out_channels),
                    format!("bias of length {len}"),
                ));
            }
        }
        Ok(())
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside an input row of `width`.
    #[inline]
    fn col_range(&self, kx: usize, width: usize, out_w: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(kx);
        let hi = (width + self.padding).saturating_sub(kx).min(out_w);
        (lo, hi.max(lo))
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight fixed accumulator lanes (deterministic, vectorizable).
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut chunks = a.chunks_exact(8);
    for c in &mut chunks {
        for l in 0..8 {
            acc[l] += c[l];
        }
    }
    let tail: T = chunks.remainder().iter().copied().sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let ishape = input.shape();
    spec.validate(
        "conv2d_forward",
        ishape,
        weights.shape(),
        bias.map(|b| b.len()),
    )?;
    let oshape = spec.output_shape(ishape)?;
    let mut out = Tensor::zeros(oshape);
    if oshape.is_empty() {
        return Ok(out);
    }
    let (ih, iw) = (ishape.height, ishape.width);
    let (oh, ow) = (oshape.height, oshape.width);
    let (kh, kw, pad) = (spec.kernel_h, spec.kernel_w, spec.padding);
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let wdata = weights.data();
    let idata = input.data();

    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, oplane)| {
            let b = plane_idx / cout;
            let oc = plane_idx % cout;
            let bv = bias.map_or(T::zero(), |bias| bias[oc]);
            oplane.fill(bv);
            for ic in 0..cin {
                let iplane = &idata[(b * cin + ic) * ih * iw..(b * cin + ic + 1) * ih * iw];
                let wbase = (oc * cin + ic) * kh * kw;
                for ky in 0..kh {
                    // output rows whose tap ky lands inside the input
                    let oy_lo = pad.saturating_sub(ky);
                    let oy_hi = (ih + pad).saturating_sub(ky).min(oh);
                    for kx in 0..kw {
                        let w = wdata[wbase + ky * kw + kx];
                        let (x0, x1) = spec.col_range(kx, iw, ow);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let ix0 = x0 + kx - pad;
                            let src = &iplane[iy * iw + ix0..iy * iw + ix0 + (x1 - x0)];
                            let dst = &mut oplane[oy * ow + x0..oy * ow + x1];
                            axpy(w, src, dst);
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of a convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Exact gradients of [`conv2d_forward`] w.r.t. input, weights and bias.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let g = conv2d_backward_impl(grad_out, saved_input, weights, spec, true)?;
    Ok((g.input.expect("input grad requested"), g.weights, g.bias))
}

pub(crate) fn conv2d_backward_impl<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let ishape = saved_input.shape();
    spec.validate("conv2d_backward", ishape, weights.shape(), None)?;
    let oshape = spec.output_shape(ishape)?;
    grad_out.expect_shape("conv2d_backward (grad_out)", oshape)?;

    let (ih, iw) = (ishape.height, ishape.width);
    let (oh, ow) = (oshape.height, oshape.width);
    let (kh, kw, pad) = (spec.kernel_h, spec.kernel_w, spec.padding);
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let batch = ishape.batch;
    let wdata = weights.data();
    let idata = saved_input.data();
    let gdata = grad_out.data();

    let input = if need_input_grad {
        let mut gin = Tensor::zeros(ishape);
        gin.data_mut()
            .par_chunks_mut(ih * iw)
            .enumerate()
            .for_each(|(plane_idx, iplane)| {
                let b = plane_idx / cin;
                let ic = plane_idx % cin;
                for oc in 0..cout {
                    let gplane = &gdata[(b * cout + oc) * oh * ow..(b * cout + oc + 1) * oh * ow];
                    let wbase = (oc * cin + ic) * kh * kw;
                    for ky in 0..kh {
                        let oy_lo = pad.saturating_sub(ky);
                        let oy_hi = (ih + pad).saturating_sub(ky).min(oh);
                        for kx in 0..kw {
                            let w = wdata[wbase + ky * kw + kx];
                            let (x0, x1) = spec.col_range(kx, iw, ow);
                            if x0 >= x1 {
                                continue;
                            }
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - pad;
                                let ix0 = x0 + kx - pad;
                                let src = &gplane[oy * ow + x0..oy * ow + x1];
                                let dst = &mut iplane[iy * iw + ix0..iy * iw + ix0 + (x1 - x0)];
                                axpy(w, src, dst);
                            }
                        }
                    }
                }
            });
        Some(gin)
    } else {
        None
    };

    let mut gw = Tensor::zeros(spec.weight_shape());
    gw.data_mut()
        .par_chunks_mut(cin * kh * kw)
        .enumerate()
        .for_each(|(oc, wrow)| {
            for ic in 0..cin {
                for ky in 0..kh {
                    let oy_lo = pad.saturating_sub(ky);
                    let oy_hi = (ih + pad).saturating_sub(ky).min(oh);
                    for kx in 0..kw {
                        let (x0, x1) = spec.col_range(kx, iw, ow);
                        let mut acc = T::zero();
                        if x0 < x1 {
                            for b in 0..batch {
                                let gplane = &gdata
                                    [(b * cout + oc) * oh * ow..(b * cout + oc + 1) * oh * ow];
                                let iplane =
                                    &idata[(b * cin + ic) * ih * iw..(b * cin + ic + 1) * ih * iw];
                                for oy in oy_lo..oy_hi {
                                    let iy = oy + ky - pad;
                                    let ix0 = x0 + kx - pad;
                                    acc += dot(
                                        &gplane[oy * ow + x0..oy * ow + x1],
                                        &iplane[iy * iw + ix0..iy * iw + ix0 + (x1 - x0)],
                                    );
                                }
                            }
                        }
                        wrow[(ic * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        });

    let gb = (0..cout)
        .map(|oc| {
            (0..batch)
                .map(|b| grad_out.plane(b, oc))
                .fold(T::zero(), |acc, p| acc + sum(p))
        })
        .collect();

    Ok(ConvGrads {
        input,
        weights: gw,
        bias: gb,
    })
}

/// A convolution layer owning its parameters.
#[derive(Clone, Debug)]
pub struct Conv2d<T = f32> {
    pub spec: ConvSpec,
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(spec: ConvSpec, with_bias: bool) -> Self {
        Self {
            spec,
            weight: Parameter::new(Tensor::zeros(spec.weight_shape())),
            bias: with_bias
                .then(|| Parameter::new(Tensor::zeros(Shape::new(1, 1, 1, spec.out_channels)))),
        }
    }

    pub fn gaussian<R: rand::Rng + ?Sized>(
        spec: ConvSpec,
        with_bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(spec, with_bias);
        layer.weight.value = Tensor::randn(spec.weight_shape(), std, rng);
        layer
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(
            x,
            &self.weight.value,
            self.bias.as_ref().map(|b| b.value.data()),
            &self.spec,
        )
    }

    /// Accumulates parameter gradients and returns the input gradient if asked for.
    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = conv2d_backward_impl(grad_out, x, &self.weight.value, &self.spec, need_input_grad)?;
        self.weight
            .grad
            .data_mut()
            .iter_mut()
            .zip(g.weights.data())
            .for_each(|(a, &b)| *a += b);
        if let Some(bias) = self.bias.as_mut() {
            bias.grad
                .data_mut()
                .iter_mut()
                .zip(&g.bias)
                .for_each(|(a, &b)| *a += b);
        }
        Ok(g.input)
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            spec: self.spec,
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(|b| b.cast()),
        }
    }
}

impl<T: Real> Parameterized<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Parameter<T>)) {
        f("weight", &self.weight);
        if let Some(b) = &self.bias {
            f("bias", b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        f("weight", &mut self.weight);
        if let Some(b) = &mut self.bias {
            f("bias", b);
        }
    }
}

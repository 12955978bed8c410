//! Pointwise nonlinearities: ReLU, per-channel soft shrinkage, channel softmax.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Routes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape("relu_backward", input.shape())?;
    let mut g = grad_out.clone();
    g.data_mut()
        .iter_mut()
        .zip(input.data())
        .for_each(|(g, &x)| {
            if x <= T::zero() {
                *g = T::zero();
            }
        });
    Ok(g)
}

fn check_thresholds<T: Real>(op: &'static str, input: &Tensor<T>, thresholds: &[T]) -> Result<()> {
    let channels = input.shape().channels;
    if thresholds.len() != channels {
        return Err(Error::shape(
            op,
            format!("{channels} thresholds"),
            format!("{} thresholds", thresholds.len()),
        ));
    }
    if let Some((c, t)) = thresholds
        .iter()
        .enumerate()
        .find(|(_, t)| t.is_nan() || **t <= T::zero())
    {
        return Err(Error::InvalidArgument {
            op,
            reason: format!("threshold for channel {c} is {t}, must be > 0"),
        });
    }
    Ok(())
}

#[inline]
fn shrink<T: Real>(x: T, theta: T) -> T {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        T::zero()
    }
}

/// `sign(x) * max(|x| - theta_c, 0)` with one threshold per channel.
pub fn soft_shrink<T: Real>(input: &Tensor<T>, thresholds: &[T]) -> Result<Tensor<T>> {
    check_thresholds("soft_shrink", input, thresholds)?;
    let s = input.shape();
    let mut out = input.clone();
    for b in 0..s.batch {
        for (c, &theta) in thresholds.iter().enumerate() {
            out.plane_mut(b, c)
                .iter_mut()
                .for_each(|v| *v = shrink(*v, theta));
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_thresholds)`. The subgradient at `|x| = theta` is zero.
pub fn soft_shrink_backward<T: Real>(
    input: &Tensor<T>,
    thresholds: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    check_thresholds("soft_shrink_backward", input, thresholds)?;
    grad_out.expect_shape("soft_shrink_backward", input.shape())?;
    let s = input.shape();
    let mut gin = Tensor::zeros(s);
    let mut gtheta = vec![T::zero(); s.channels];
    for b in 0..s.batch {
        for (c, &theta) in thresholds.iter().enumerate() {
            let x = input.plane(b, c);
            let g = grad_out.plane(b, c);
            let mut acc = T::zero();
            for ((gi, &xv), &gv) in gin.plane_mut(b, c).iter_mut().zip(x).zip(g) {
                if xv > theta {
                    *gi = gv;
                    acc -= gv;
                } else if xv < -theta {
                    *gi = gv;
                    acc += gv;
                }
            }
            gtheta[c] += acc;
        }
    }
    Ok((gin, gtheta))
}

/// Softmax across channels at every pixel.
pub fn channel_softmax<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    for b in 0..s.batch {
        for p in 0..plane {
            let at = |c: usize| input.data()[(b * s.channels + c) * plane + p];
            let max = (0..s.channels).map(at).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for c in 0..s.channels {
                let e = (at(c) - max).exp();
                out.data_mut()[(b * s.channels + c) * plane + p] = e;
                total += e;
            }
            for c in 0..s.channels {
                out.data_mut()[(b * s.channels + c) * plane + p] /= total;
            }
        }
    }
    out
}

/// Backward of [`channel_softmax`] given its forward output.
pub fn channel_softmax_backward<T: Real>(
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    grad_out.expect_shape("channel_softmax_backward", output.shape())?;
    let s = output.shape();
    let plane = s.plane();
    let mut gin = Tensor::zeros(s);
    for b in 0..s.batch {
        for p in 0..plane {
            let idx = |c: usize| (b * s.channels + c) * plane + p;
            // g_c - sum_j s_j g_j written as sum_j s_j (g_c - g_j): no cancellation
            // when one channel saturates
            for c in 0..s.channels {
                let gc = grad_out.data()[idx(c)];
                let centered: T = (0..s.channels)
                    .map(|j| output.data()[idx(j)] * (gc - grad_out.data()[idx(j)]))
                    .sum();
                gin.data_mut()[idx(c)] = output.data()[idx(c)] * centered;
            }
        }
    }
    Ok(gin)
}

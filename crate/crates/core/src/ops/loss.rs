use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Mean squared error over all elements, accumulated in f64, and its gradient
/// `2 (prediction - target) / count`.
pub fn mse_loss<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    target.expect_shape("mse_loss", prediction.shape())?;
    let n = prediction.len().max(1) as f64;
    let scale = T::from_f64_lossy(2.0 / n);
    let mut grad = Tensor::zeros(prediction.shape());
    let mut total = 0.0f64;
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(prediction.data())
        .zip(target.data())
    {
        let d = p - t;
        total += d.to_f64_lossy() * d.to_f64_lossy();
        *g = d * scale;
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn equal_inputs() {
        let t = Tensor::<f32>::filled(Shape::new(1, 1, 3, 3), 0.4);
        let (l, g) = mse_loss(&t, &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_offset() {
        let p = Tensor::<f32>::filled(Shape::new(2, 1, 3, 3), 3.0);
        let t = Tensor::<f32>::filled(Shape::new(2, 1, 3, 3), 1.0);
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 4.0);
        assert!((g.data()[0] - 4.0 / 18.0).abs() < 1e-7);
        assert!(mse_loss(&p, &Tensor::zeros(Shape::new(1, 1, 3, 3))).is_err());
    }
}

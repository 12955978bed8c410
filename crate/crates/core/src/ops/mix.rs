//! Pixel-wise gated aggregation of expert estimates.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check<T: Real>(
    op: &'static str,
    weight_maps: &Tensor<T>,
    estimates: &[Tensor<T>],
) -> Result<()> {
    let ws = weight_maps.shape();
    if estimates.len() != ws.channels {
        return Err(Error::shape(
            op,
            format!("{} estimates (one per weight-map channel)", ws.channels),
            format!("{} estimates", estimates.len()),
        ));
    }
    let expected = ws.with_channels(1);
    for e in estimates {
        if e.shape() != expected {
            return Err(Error::shape(op, expected, e.shape()));
        }
    }
    Ok(())
}

/// `out(p) = sum_i W_i(p) * F_i(p)`, accumulated in ascending expert order.
pub fn pointwise_mul_sum<T: Real>(
    weight_maps: &Tensor<T>,
    estimates: &[Tensor<T>],
) -> Result<Tensor<T>> {
    check("pointwise_mul_sum", weight_maps, estimates)?;
    let ws = weight_maps.shape();
    let mut out = Tensor::zeros(ws.with_channels(1));
    for b in 0..ws.batch {
        let dst = out.plane_mut(b, 0);
        for (i, est) in estimates.iter().enumerate() {
            let w = weight_maps.plane(b, i);
            let f = est.plane(b, 0);
            if i == 0 {
                for ((d, &wv), &fv) in dst.iter_mut().zip(w).zip(f) {
                    *d = wv * fv;
                }
            } else {
                for ((d, &wv), &fv) in dst.iter_mut().zip(w).zip(f) {
                    *d += wv * fv;
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_weight_maps, grad_estimates)`.
pub fn pointwise_mul_sum_backward<T: Real>(
    weight_maps: &Tensor<T>,
    estimates: &[Tensor<T>],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    check("pointwise_mul_sum_backward", weight_maps, estimates)?;
    let ws = weight_maps.shape();
    grad_out.expect_shape("pointwise_mul_sum_backward", ws.with_channels(1))?;
    let mut gw = Tensor::zeros(ws);
    let mut gf: Vec<Tensor<T>> = estimates.iter().map(|e| Tensor::zeros(e.shape())).collect();
    for b in 0..ws.batch {
        let g = grad_out.plane(b, 0);
        for (i, est) in estimates.iter().enumerate() {
            let f = est.plane(b, 0);
            for ((d, &fv), &gv) in gw.plane_mut(b, i).iter_mut().zip(f).zip(g) {
                *d = fv * gv;
            }
            let w = weight_maps.plane(b, i);
            for ((d, &wv), &gv) in gf[i].plane_mut(b, 0).iter_mut().zip(w).zip(g) {
                *d = wv * gv;
            }
        }
    }
    Ok((gw, gf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_estimate_with_unit_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Tensor::<f32>::randn(Shape::new(2, 1, 4, 5), 1.0, &mut rng);
        let w = Tensor::filled(Shape::new(2, 1, 4, 5), 1.0);
        assert_eq!(pointwise_mul_sum(&w, &[f.clone()]).unwrap(), f);
    }

    #[test]
    fn one_hot_gate_selects_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f1 = Tensor::<f32>::randn(Shape::new(1, 1, 3, 3), 1.0, &mut rng);
        let f2 = Tensor::<f32>::randn(Shape::new(1, 1, 3, 3), 1.0, &mut rng);
        let mut w = Tensor::zeros(Shape::new(1, 2, 3, 3));
        w.plane_mut(0, 0).fill(1.0);
        assert_eq!(pointwise_mul_sum(&w, &[f1.clone(), f2]).unwrap(), f1);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Shape::new(2, 4, 5, 6);
        let w = Tensor::<f32>::randn(s, 1.0, &mut rng);
        let fs: Vec<_> = (0..4)
            .map(|_| Tensor::<f32>::randn(s.with_channels(1), 1.0, &mut rng))
            .collect();
        let out = pointwise_mul_sum(&w, &fs).unwrap();
        for b in 0..2 {
            for y in 0..5 {
                for x in 0..6 {
                    let mut acc = 0.0f32;
                    for (i, f) in fs.iter().enumerate() {
                        acc += w.at(b, i, y, x) * f.at(b, 0, y, x);
                    }
                    assert!((out.at(b, 0, y, x) - acc).abs() <= 1e-6);
                }
            }
        }
        let g = Tensor::<f32>::randn(s.with_channels(1), 1.0, &mut rng);
        let (gw, gf) = pointwise_mul_sum_backward(&w, &fs, &g).unwrap();
        assert_eq!(gw.at(1, 2, 3, 4), fs[2].at(1, 0, 3, 4) * g.at(1, 0, 3, 4));
        assert_eq!(gf[3].at(0, 0, 1, 2), w.at(0, 3, 1, 2) * g.at(0, 0, 1, 2));
    }

    #[test]
    fn size_mismatch_rejected() {
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        let f = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3));
        assert!(pointwise_mul_sum(&w, &[f.clone()]).is_err());
        let g = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 3));
        assert!(pointwise_mul_sum(&w, &[f, g]).is_err());
    }
}

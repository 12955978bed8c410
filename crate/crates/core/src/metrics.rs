//! PSNR and SSIM as used by the super-resolution benchmarks: both images are
//! rounded to 8-bit integers first, SSIM uses an 11x11 Gaussian window
//! (sigma 1.5) over the valid region only.

use crate::error::{Error, Result};
use crate::imaging::PlanarImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn check_dims(op: &'static str, a: &PlanarImage, b: &PlanarImage) -> Result<()> {
    if (a.width(), a.height(), a.channels()) != (b.width(), b.height(), b.channels()) {
        return Err(Error::InvalidArgument {
            op,
            reason: format!("dimension mismatch: {a:?} vs {b:?}"),
        });
    }
    Ok(())
}

/// Value on the 0..255 integer grid.
#[inline]
pub fn to_8bit(v: f32) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f64
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    check_dims("psnr", a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (to_8bit(x) - to_8bit(y)).powi(2))
        .sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Valid-region separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity, averaged over channels.
pub fn ssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    check_dims("ssim", a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::InvalidArgument {
            op: "ssim",
            reason: format!(
                "{}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                a.width(),
                a.height()
            ),
        });
    }
    let taps = gaussian_taps();
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    for c in 0..a.channels() {
        let x: Vec<f64> = a.plane(c).iter().map(|&v| to_8bit(v)).collect();
        let y: Vec<f64> = b.plane(c).iter().map(|&v| to_8bit(v)).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mu_x = filter_valid(&x, w, h, &taps);
        let mu_y = filter_valid(&y, w, h, &taps);
        let e_xx = filter_valid(&xx, w, h, &taps);
        let e_yy = filter_valid(&yy, w, h, &taps);
        let e_xy = filter_valid(&xy, w, h, &taps);
        let n = mu_x.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            sum += ((2.0 * mx * my + C1) * (2.0 * cxy + C2))
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
        total += sum / n as f64;
    }
    Ok(total / a.channels() as f64)
}

//! Separable cubic-convolution resampling (a = -0.5) with the kernel widened
//! by the scale factor on antialiased downscales. Pixel centres map as
//! `u = x / scale + (1 - 1 / scale) / 2` and out-of-range taps are clamped to
//! the border. Both passes accumulate in f64.

use super::PlanarImage;
use crate::error::{Error, Result};

fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Taps `(input index, weight)` for every output index along one axis.
/// Weights of each output sum to one.
pub fn resize_weights(
    in_len: usize,
    out_len: usize,
    scale: f64,
    antialias: bool,
) -> Vec<Vec<(usize, f64)>> {
    let shrink = antialias && scale < 1.0;
    let width = if shrink { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as isize + 2;
    (1..=out_len)
        .map(|x| {
            // 1-based coordinates, as in the classic definition
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as isize;
            let mut row: Vec<(usize, f64)> = (0..taps)
                .filter_map(|j| {
                    let idx = left + j;
                    let d = u - idx as f64;
                    let w = if shrink {
                        scale * cubic(scale * d)
                    } else {
                        cubic(d)
                    };
                    (w != 0.0).then(|| ((idx - 1).clamp(0, in_len as isize - 1) as usize, w))
                })
                .collect();
            let total: f64 = row.iter().map(|t| t.1).sum();
            row.iter_mut().for_each(|t| t.1 /= total);
            row
        })
        .collect()
}

fn resize_with_scale(
    img: &PlanarImage,
    width: usize,
    height: usize,
    scale_x: f64,
    scale_y: f64,
    antialias: bool,
) -> Result<PlanarImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument {
            op: "bicubic_resize",
            reason: format!("target size {width}x{height}"),
        });
    }
    let wx = resize_weights(img.width(), width, scale_x, antialias);
    let wy = resize_weights(img.height(), height, scale_y, antialias);
    let (iw, ih) = (img.width(), img.height());
    let mut out = Vec::with_capacity(width * height * img.channels());
    let mut tmp = vec![0.0f64; width * ih];
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for y in 0..ih {
            let row = &plane[y * iw..(y + 1) * iw];
            for (x, taps) in wx.iter().enumerate() {
                tmp[y * width + x] = taps.iter().map(|&(i, w)| w * row[i] as f64).sum();
            }
        }
        for taps in &wy {
            for x in 0..width {
                let v: f64 = taps.iter().map(|&(i, w)| w * tmp[i * width + x]).sum();
                out.push(v as f32);
            }
        }
    }
    PlanarImage::new(width, height, img.channels(), out)
}

/// Resizes to `width` x `height`; the scale of each axis is `out / in`.
pub fn bicubic_resize(
    img: &PlanarImage,
    width: usize,
    height: usize,
    antialias: bool,
) -> Result<PlanarImage> {
    resize_with_scale(
        img,
        width,
        height,
        width as f64 / img.width() as f64,
        height as f64 / img.height() as f64,
        antialias,
    )
}

/// Crops the bottom/right so both dimensions are multiples of `scale`.
pub fn modulo_crop(img: &PlanarImage, scale: usize) -> Result<PlanarImage> {
    if scale == 0 {
        return Err(Error::InvalidArgument {
            op: "modulo_crop",
            reason: "scale must be positive".into(),
        });
    }
    let (w, h) = (img.width() / scale * scale, img.height() / scale * scale);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument {
            op: "modulo_crop",
            reason: format!(
                "{}x{} image is smaller than scale {scale}",
                img.width(),
                img.height()
            ),
        });
    }
    if (w, h) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    img.crop(0, 0, w, h)
}

#[derive(Clone, Debug)]
pub struct Degraded {
    /// The ground truth after modulo cropping.
    pub hr: PlanarImage,
    /// Antialiased bicubic downscale by `scale`.
    pub lr: PlanarImage,
    /// `lr` upscaled back onto the grid of `hr`.
    pub upscaled: PlanarImage,
}

/// Simulates the low-resolution observation of `hr` at integer factor `scale`.
pub fn degrade(hr: &PlanarImage, scale: usize) -> Result<Degraded> {
    let hr = modulo_crop(hr, scale)?;
    let s = scale as f64;
    let (lw, lh) = (hr.width() / scale, hr.height() / scale);
    let lr = resize_with_scale(&hr, lw, lh, 1.0 / s, 1.0 / s, true)?;
    let upscaled = resize_with_scale(&lr, hr.width(), hr.height(), s, s, true)?;
    Ok(Degraded { hr, lr, upscaled })
}

//! BT.601 studio-swing YCbCr on the [0, 1] scale: Y in [16, 235] / 255,
//! Cb and Cr in [16, 240] / 255.

use super::PlanarImage;
use crate::error::{Error, Result};

const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

/// Rows map (R, G, B) in [0, 1] to (Y, Cb, Cr) on the 0..255 scale.
const FORWARD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];

fn inverse() -> [[f64; 3]; 3] {
    let m = FORWARD;
    let cof = |r: usize, c: usize| {
        let (r0, r1) = ((r + 1) % 3, (r + 2) % 3);
        let (c0, c1) = ((c + 1) % 3, (c + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    let det: f64 = (0..3).map(|c| m[0][c] * cof(0, c)).sum();
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = cof(c, r) / det;
        }
    }
    inv
}

fn expect_channels(op: &'static str, img: &PlanarImage) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument {
            op,
            reason: format!("expected 3 channels, got {}", img.channels()),
        });
    }
    Ok(())
}

pub fn rgb_to_ycbcr(img: &PlanarImage) -> Result<PlanarImage> {
    expect_channels("rgb_to_ycbcr", img)?;
    let n = img.width() * img.height();
    let mut out = vec![0.0f32; 3 * n];
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    for i in 0..n {
        let rgb = [r[i] as f64, g[i] as f64, b[i] as f64];
        for k in 0..3 {
            let v = OFFSET[k] + (0..3).map(|j| FORWARD[k][j] * rgb[j]).sum::<f64>();
            out[k * n + i] = (v / 255.0) as f32;
        }
    }
    PlanarImage::new(img.width(), img.height(), 3, out)
}

/// Luminance only.
pub fn rgb_to_y(img: &PlanarImage) -> Result<PlanarImage> {
    Ok(rgb_to_ycbcr(img)?.channel(0))
}

/// Inverse of [`rgb_to_ycbcr`], clamped to [0, 1].
pub fn ycbcr_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    expect_channels("ycbcr_to_rgb", img)?;
    let inv = inverse();
    let n = img.width() * img.height();
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        let ycc: Vec<f64> = (0..3)
            .map(|k| img.plane(k)[i] as f64 * 255.0 - OFFSET[k])
            .collect();
        for k in 0..3 {
            out[k * n + i] = (0..3).map(|j| inv[k][j] * ycc[j]).sum::<f64>() as f32;
        }
    }
    PlanarImage::new(img.width(), img.height(), 3, out)
}

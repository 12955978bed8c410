//! Upscaling whole images: plain bicubic or a fixed-factor model applied as a cascade.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, rgb_to_ycbcr, ycbcr_to_rgb, PlanarImage};
use crate::mixture::MixtureNetwork;

/// Produces a `width` x `height` luminance image from a low-resolution one.
pub trait Upscaler: Sync {
    fn upscale(&self, lr: &PlanarImage, width: usize, height: usize) -> Result<PlanarImage>;
}

pub struct Bicubic;

impl Upscaler for Bicubic {
    fn upscale(&self, lr: &PlanarImage, width: usize, height: usize) -> Result<PlanarImage> {
        bicubic_resize(lr, width, height, true)
    }
}

/// Number of passes of a `model_scale` model needed to reach at least `scale`.
pub fn cascade_passes(model_scale: usize, scale: usize) -> usize {
    let mut passes = 0;
    let mut reached = 1;
    while reached < scale {
        reached *= model_scale;
        passes += 1;
    }
    passes
}

/// Each pass bicubic-upscales by the model factor and refines with the network;
/// an overshoot is bicubic-downsized to the requested size at the end.
pub struct ModelCascade<'a> {
    net: &'a MixtureNetwork<f32>,
    model_scale: usize,
    passes: AtomicUsize,
    downsizes: AtomicUsize,
}

impl<'a> ModelCascade<'a> {
    pub fn new(net: &'a MixtureNetwork<f32>, model_scale: usize) -> Result<Self> {
        if model_scale < 2 {
            return Err(Error::InvalidArgument {
                op: "ModelCascade::new",
                reason: format!("model scale {model_scale} must be at least 2"),
            });
        }
        Ok(Self {
            net,
            model_scale,
            passes: AtomicUsize::new(0),
            downsizes: AtomicUsize::new(0),
        })
    }

    /// Network passes run so far.
    pub fn passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    /// Final bicubic downsizes run so far.
    pub fn downsizes(&self) -> usize {
        self.downsizes.load(Ordering::Relaxed)
    }

    pub fn refine(&self, upscaled: &PlanarImage) -> Result<PlanarImage> {
        let out = self.net.forward(&upscaled.to_tensor())?;
        self.passes.fetch_add(1, Ordering::Relaxed);
        PlanarImage::from_tensor(&out.hr, 0)
    }
}

impl Upscaler for ModelCascade<'_> {
    fn upscale(&self, lr: &PlanarImage, width: usize, height: usize) -> Result<PlanarImage> {
        let mut img = lr.clone();
        while img.width() < width || img.height() < height {
            let up = bicubic_resize(
                &img,
                img.width() * self.model_scale,
                img.height() * self.model_scale,
                true,
            )?;
            img = self.refine(&up)?;
        }
        if (img.width(), img.height()) != (width, height) {
            img = bicubic_resize(&img, width, height, true)?;
            self.downsizes.fetch_add(1, Ordering::Relaxed);
        }
        Ok(img)
    }
}

/// Upscales a grayscale or RGB image by `scale`. Colour images are processed
/// in YCbCr: luminance through `upscaler`, chrominance by bicubic.
pub fn super_resolve(
    upscaler: &dyn Upscaler,
    img: &PlanarImage,
    scale: usize,
) -> Result<PlanarImage> {
    if scale == 0 {
        return Err(Error::InvalidArgument {
            op: "super_resolve",
            reason: "scale must be positive".into(),
        });
    }
    let (w, h) = (img.width() * scale, img.height() * scale);
    if img.channels() == 1 {
        return upscaler.upscale(img, w, h);
    }
    let ycc = rgb_to_ycbcr(img)?;
    let y = upscaler.upscale(&ycc.channel(0), w, h)?;
    let cb = bicubic_resize(&ycc.channel(1), w, h, true)?;
    let cr = bicubic_resize(&ycc.channel(2), w, h, true)?;
    ycbcr_to_rgb(&PlanarImage::from_planes(&[y, cb, cr])?)
}

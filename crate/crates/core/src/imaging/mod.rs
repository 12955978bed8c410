//! Planar float images and the data protocol around them: file I/O, BT.601
//! luminance, bicubic resampling, degradation and training patch sampling.

mod color;
mod io;
mod patches;
mod resize;

pub use color::{rgb_to_y, rgb_to_ycbcr, ycbcr_to_rgb};
pub use io::{load_image, save_image};
pub use patches::{AugmentConfig, PatchPair, PatchSampler};
pub use resize::{bicubic_resize, degrade, modulo_crop, resize_weights, Degraded};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Channel-planar image with values in [0, 1].
#[derive(Clone, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for PlanarImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PlanarImage({}x{}x{})",
            self.width, self.height, self.channels
        )
    }
}

fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

impl PlanarImage {
    /// Values are clamped to [0, 1]; `data` is channel-major, then row-major.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument {
                op: "PlanarImage::new",
                reason: format!("empty image {width}x{height}"),
            });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument {
                op: "PlanarImage::new",
                reason: format!("1 or 3 channels supported, got {channels}"),
            });
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument {
                op: "PlanarImage::new",
                reason: format!("{} values for {width}x{height}x{channels}", data.len()),
            });
        }
        data.iter_mut().for_each(|v| *v = clamp_unit(*v));
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    /// Single-channel image from `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    /// Stacks single-channel images of equal size.
    pub fn from_planes(planes: &[PlanarImage]) -> Result<Self> {
        let first = planes.first().ok_or(Error::InvalidArgument {
            op: "PlanarImage::from_planes",
            reason: "no planes".into(),
        })?;
        let mut data = Vec::with_capacity(first.data.len() * planes.len());
        for p in planes {
            if p.channels != 1 || p.width != first.width || p.height != first.height {
                return Err(Error::InvalidArgument {
                    op: "PlanarImage::from_planes",
                    reason: format!("plane {p:?} does not match {first:?}"),
                });
            }
            data.extend_from_slice(&p.data);
        }
        Self::new(first.width, first.height, planes.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Copy of channel `c` as a single-channel image.
    pub fn channel(&self, c: usize) -> PlanarImage {
        PlanarImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> PlanarImage {
        PlanarImage {
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
            ..self.clone()
        }
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantize(&self) -> PlanarImage {
        self.map(|v| (v * 255.0).round() / 255.0)
    }

    /// Sub-image of all channels with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<PlanarImage> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(Error::InvalidArgument {
                op: "PlanarImage::crop",
                reason: format!(
                    "window {width}x{height} at ({x}, {y}) outside {}x{}",
                    self.width, self.height
                ),
            });
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            for row in y..y + height {
                let start = (c * self.height + row) * self.width + x;
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(PlanarImage {
            width,
            height,
            channels: self.channels,
            data,
        })
    }

    /// `(1, channels, height, width)` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            Shape::new(1, self.channels, self.height, self.width),
            self.data.clone(),
        )
        .expect("length matches shape")
    }

    /// Batch item `b` of a 1- or 3-channel tensor, clamped into [0, 1].
    pub fn from_tensor(t: &Tensor<f32>, b: usize) -> Result<PlanarImage> {
        let s = t.shape();
        let n = s.channels * s.plane();
        Self::new(
            s.width,
            s.height,
            s.channels,
            t.data()[b * n..(b + 1) * n].to_vec(),
        )
    }

    /// Applies element `element` (0..8) of the dihedral group: a horizontal
    /// flip when `element >= 4`, then `element % 4` clockwise quarter turns.
    pub fn dihedral(&self, element: usize) -> PlanarImage {
        let mut img = if element >= 4 {
            self.flip_horizontal()
        } else {
            self.clone()
        };
        for _ in 0..element % 4 {
            img = img.rotate90();
        }
        img
    }

    pub fn flip_horizontal(&self) -> PlanarImage {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        PlanarImage {
            data,
            ..self.clone()
        }
    }

    /// One clockwise quarter turn.
    pub fn rotate90(&self) -> PlanarImage {
        let (w, h) = (self.width, self.height);
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for y in 0..w {
                for x in 0..h {
                    data.push(self.get(c, y, h - 1 - x));
                }
            }
        }
        PlanarImage {
            width: h,
            height: w,
            channels: self.channels,
            data,
        }
    }
}

/// Removes `border` pixels from each side.
pub fn shave_border(img: &PlanarImage, border: usize) -> Result<PlanarImage> {
    if border == 0 {
        return Ok(img.clone());
    }
    if img.width <= 2 * border || img.height <= 2 * border {
        return Err(Error::InvalidArgument {
            op: "shave_border",
            reason: format!(
                "{}x{} image is too small to shave {border} pixels per side",
                img.width, img.height
            ),
        });
    }
    img.crop(
        border,
        border,
        img.width - 2 * border,
        img.height - 2 * border,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> PlanarImage {
        PlanarImage::from_fn(w, h, |x, y| (x + 10 * y) as f32 / 1000.0).unwrap()
    }

    #[test]
    fn construction_clamps() {
        let img = PlanarImage::new(2, 1, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        assert!(PlanarImage::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(PlanarImage::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn shave() {
        let img = ramp(56, 56);
        let s = shave_border(&img, 2).unwrap();
        assert_eq!((s.width(), s.height()), (52, 52));
        assert_eq!(s.get(0, 0, 0), img.get(0, 2, 2));
        assert_eq!(shave_border(&img, 0).unwrap(), img);
        assert!(shave_border(&ramp(4, 10), 2).is_err());
    }

    #[test]
    fn dihedral_group_elements_are_distinct_and_close() {
        let img = ramp(5, 3);
        let all: Vec<_> = (0..8).map(|e| img.dihedral(e)).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(all[i], all[j], "{i} {j}");
            }
        }
        let r = img.rotate90();
        assert_eq!((r.width(), r.height()), (3, 5));
        // top-left goes to top-right under a clockwise turn
        assert_eq!(r.get(0, 2, 0), img.get(0, 0, 0));
        assert_eq!(r.rotate90().rotate90().rotate90().rotate90(), r);
    }

    #[test]
    fn tensor_round_trip() {
        let img = ramp(4, 3);
        assert_eq!(PlanarImage::from_tensor(&img.to_tensor(), 0).unwrap(), img);
    }
}
